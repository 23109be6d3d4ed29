"""Rain-rate exceedance statistics toolkit.

Estimates 1-min rain-rate exceedance curves from gridded rainfall
climatologies, builds such climatologies from radar-footprint observations,
derives reference site statistics from tipping-bucket gauge records, and
scores estimation methods with fit metrics, REC curves, classification
metrics and population-impact tables.
"""

__version__ = "0.1.0"

from .errors import (AlignmentError, ConfigError, DataError, EmptyDataError,
                     GridParseError, SolverError)
from .raster import (Grid, GridGeometry, gaussian_filter, read_grid,
                     resample, sample_bilinear, uniform_filter, window_iqr,
                     write_grid)
from .rainmodel import (STANDARD_LADDER, ClimatePoint, FitResult, ModelParams,
                        SiteStatistics, curve_objective, estimate_site_curve,
                        exceedance_probability, fit_params,
                        loglinear_resample, rain_rate)

__all__ = [
    "AlignmentError", "ConfigError", "DataError", "EmptyDataError",
    "GridParseError", "SolverError",
    "Grid", "GridGeometry", "gaussian_filter", "read_grid", "resample",
    "sample_bilinear", "uniform_filter", "window_iqr", "write_grid",
    "STANDARD_LADDER", "ClimatePoint", "FitResult", "ModelParams",
    "SiteStatistics", "curve_objective", "estimate_site_curve",
    "exceedance_probability", "fit_params", "loglinear_resample", "rain_rate",
    "__version__",
]
