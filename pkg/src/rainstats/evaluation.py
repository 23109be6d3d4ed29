"""Fit metrics, REC curves and heavy-rain classification scoring."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptyDataError
from .raster import Grid, _bilinear_many

#: Rain rate at 0.01% exceedance above which a location counts as heavy.
HEAVY_RATE_MM_H = 95.0


@dataclass(frozen=True)
class ErrorSample:
    """One (observed, predicted) rate pair at a site and probability."""

    site_id: str
    p: float
    observed: float
    predicted: float

    def __post_init__(self):
        if self.observed <= 0:
            raise ValueError("observed rate must be positive for relative "
                             f"error, got {self.observed}")
        if self.predicted < 0:
            raise ValueError(f"predicted rate must be >= 0, "
                             f"got {self.predicted}")


def relative_error(sample: ErrorSample) -> float:
    """(predicted - observed) / observed."""
    return (sample.predicted - sample.observed) / sample.observed


def bias_error(sample: ErrorSample) -> float:
    """predicted - observed, in mm/h."""
    return sample.predicted - sample.observed


@dataclass(frozen=True)
class P311Summary:
    """Mean, population standard deviation and rms of an error sample."""

    mean: float
    sd: float
    rms: float


def p311_summary(errors) -> P311Summary:
    """Summarize errors so that rms**2 == mean**2 + sd**2 exactly.

    The standard deviation is the population form (divide by n); the sample
    form would break the identity against reported one-decimal tables at
    small n.
    """
    arr = np.asarray(list(errors), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty error list")
    mu = float(np.mean(arr))
    sd = float(np.sqrt(np.mean((arr - mu) ** 2)))
    return P311Summary(mu, sd, math.sqrt(mu * mu + sd * sd))


def rec_curve(abs_errors, thresholds):
    """Fraction of samples whose |error| is at or below each threshold."""
    e = np.abs(np.asarray(list(abs_errors), dtype=np.float64))
    if e.size == 0:
        raise ValueError("cannot build a REC curve from no samples")
    ts = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be sorted ascending")
    return [float(np.mean(e <= t)) for t in ts]


def classify_heavy(r001: float) -> bool:
    """True iff the 0.01% rain rate strictly exceeds 95 mm/h."""
    if r001 < 0:
        raise ValueError(f"rain rate must be >= 0, got {r001}")
    return r001 > HEAVY_RATE_MM_H


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 actual-by-predicted counts for a boolean classification."""

    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        for name in ("tn", "fp", "fn", "tp"):
            if getattr(self, name) < 0:
                raise ValueError(f"count {name} must be >= 0")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


def confusion(actuals, predictions) -> ConfusionMatrix:
    a = list(bool(v) for v in actuals)
    p = list(bool(v) for v in predictions)
    if len(a) != len(p):
        raise ValueError(f"length mismatch: {len(a)} actuals vs "
                         f"{len(p)} predictions")
    if not a:
        raise ValueError("cannot build a confusion matrix from no labels")
    tn = sum(1 for x, y in zip(a, p) if not x and not y)
    fp = sum(1 for x, y in zip(a, p) if not x and y)
    fn = sum(1 for x, y in zip(a, p) if x and not y)
    tp = sum(1 for x, y in zip(a, p) if x and y)
    return ConfusionMatrix(tn, fp, fn, tp)


def accuracy(cm: ConfusionMatrix) -> float:
    return (cm.tp + cm.tn) / cm.total


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    denom = ((cm.tp + cm.fp) * (cm.tp + cm.fn)
             * (cm.tn + cm.fp) * (cm.tn + cm.fn))
    if denom == 0:
        return 0.0
    return (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denom)


def by_country(records):
    """Collapse per-site booleans to per-country pairs by OR.

    ``records`` is an iterable of (country, actual, predicted).  Returns an
    ordered mapping country -> (actual, predicted), sorted by country code.
    """
    recs = list(records)
    if not recs:
        raise ValueError("no site records")
    agg: dict = {}
    for country, actual, predicted in recs:
        a, p = agg.get(country, (False, False))
        agg[country] = (a or bool(actual), p or bool(predicted))
    return dict(sorted(agg.items()))


def station_comparison(climatology: Grid, stations):
    """Relative errors of a climatology against point station values.

    ``stations`` is an iterable of (lat, lon, mt).  Each station is sampled
    bilinearly; stations whose sample hits nodata are skipped.  Returns
    ``(P311Summary, skipped_count)``.
    """
    stations = list(stations)
    if not stations:
        raise ValueError("no stations")
    lats = [s[0] for s in stations]
    lons = [s[1] for s in stations]
    mts = np.asarray([s[2] for s in stations], dtype=np.float64)
    if np.any(mts <= 0):
        raise ValueError("station mt values must be positive")
    vals, inside = _bilinear_many(climatology, lats, lons)
    if not inside.all():
        bad = int(np.argmin(inside))
        raise ValueError(f"station ({lats[bad]}, {lons[bad]}) is outside "
                         "the grid bounds")
    usable = ~np.isnan(vals)
    skipped = int(np.count_nonzero(~usable))
    if not usable.any():
        raise EmptyDataError("every station sampled nodata")
    errors = (vals[usable] - mts[usable]) / mts[usable]
    return p311_summary(errors), skipped


# ---------------------------------------------------------------------------
# error-samples CSV

_SAMPLE_COLUMNS = ["site_id", "p_percent", "observed", "predicted"]


def write_error_samples_csv(samples, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(_SAMPLE_COLUMNS)
        for s in samples:
            w.writerow([s.site_id, repr(s.p), repr(s.observed),
                        repr(s.predicted)])


def read_error_samples_csv(path):
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _SAMPLE_COLUMNS:
            raise DataError(f"{path}: expected header {_SAMPLE_COLUMNS}, "
                            f"got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path} line {lineno}: expected 4 columns")
            try:
                out.append(ErrorSample(row[0], float(row[1]), float(row[2]),
                                       float(row[3])))
            except ValueError as e:
                raise DataError(f"{path} line {lineno}: {e}") from None
    return out
