"""Regular lat/lon grids: text file I/O, point sampling, resampling and
neighborhood filters.

Grids are stored row-major with the northernmost row first, matching the
on-disk layout.  The text format is a six-line header (``ncols``, ``nrows``,
``xllcorner``, ``yllcorner``, ``cellsize``, ``NODATA_value``; one
``key value`` pair per line) followed by ``nrows`` lines of ``ncols``
space-separated values, north row first.  Registration is lower-left corner;
sampling, resampling and filtering all work with cell centers.

All filters are nodata-aware: missing cells carry zero weight and the
remaining weights are renormalized per output pixel, so smoothing a
land-only field does not bleed values across coastlines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, GridParseError

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize",
                "NODATA_value")


@dataclass(frozen=True)
class GridGeometry:
    """Shape and placement of a regular lat/lon grid.

    ``xll``/``yll`` locate the lower-left corner in degrees, ``cell`` is the
    pixel size in degrees and ``nodata`` is the missing-value sentinel.
    """

    ncols: int
    nrows: int
    xll: float
    yll: float
    cell: float
    nodata: float

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise ValueError("grid needs at least one row and one column")
        for name in ("xll", "yll", "cell", "nodata"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"geometry field {name} must be finite")
        if self.cell <= 0:
            raise ValueError("cell size must be positive")
        if self.yll < -90.0 or self.yll + self.nrows * self.cell > 90.0 + 1e-9:
            raise ValueError("grid extends outside [-90, 90] latitude")

    @property
    def lat_max(self) -> float:
        return self.yll + self.nrows * self.cell

    @property
    def lon_max(self) -> float:
        return self.xll + self.ncols * self.cell

    def aligned_with(self, other: "GridGeometry") -> bool:
        """True when the five spatial fields match (nodata may differ)."""
        return (self.ncols == other.ncols and self.nrows == other.nrows
                and self.xll == other.xll and self.yll == other.yll
                and self.cell == other.cell)

    def row_center_lats(self) -> np.ndarray:
        """Cell-center latitudes, north row first."""
        rows = np.arange(self.nrows, dtype=np.float64)
        return self.yll + (self.nrows - rows - 0.5) * self.cell

    def col_center_lons(self) -> np.ndarray:
        cols = np.arange(self.ncols, dtype=np.float64)
        return self.xll + (cols + 0.5) * self.cell


class Grid:
    """One scalar value per cell on a :class:`GridGeometry`.

    ``values`` is a float64 array of shape ``(nrows, ncols)`` whose first row
    is the northernmost.  Every value is finite; cells equal to the geometry's
    nodata sentinel are treated as missing.
    """

    __slots__ = ("geometry", "values")

    def __init__(self, geometry: GridGeometry, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != geometry.ncols * geometry.nrows:
            raise ValueError(
                f"expected {geometry.ncols * geometry.nrows} values, "
                f"got {arr.size}")
        arr = arr.reshape(geometry.nrows, geometry.ncols).copy()
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid values must be finite or the nodata sentinel")
        self.geometry = geometry
        self.values = arr

    @classmethod
    def full(cls, geometry: GridGeometry, value: float) -> "Grid":
        return cls(geometry, np.full((geometry.nrows, geometry.ncols),
                                     float(value)))

    def valid_mask(self) -> np.ndarray:
        return self.values != self.geometry.nodata

    def copy(self) -> "Grid":
        return Grid(self.geometry, self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return (self.geometry == other.geometry
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        g = self.geometry
        return f"Grid({g.ncols}x{g.nrows} @ {g.cell} deg)"


def require_aligned(*grids: Grid) -> None:
    """Raise :class:`AlignmentError` unless all grids share a geometry."""
    first = grids[0].geometry
    for g in grids[1:]:
        if not first.aligned_with(g.geometry):
            raise AlignmentError(
                f"grids are not aligned: {first} vs {g.geometry}")


# ---------------------------------------------------------------------------
# file I/O


def _fmt(v: float) -> str:
    # repr() is the shortest string that round-trips the exact double
    return repr(float(v))


def write_grid(grid: Grid, path) -> None:
    """Write a grid in the plain-text format described in the module docs."""
    g = grid.geometry
    lines = [
        f"ncols {g.ncols}",
        f"nrows {g.nrows}",
        f"xllcorner {_fmt(g.xll)}",
        f"yllcorner {_fmt(g.yll)}",
        f"cellsize {_fmt(g.cell)}",
        f"NODATA_value {_fmt(g.nodata)}",
    ]
    for row in grid.values:
        lines.append(" ".join(_fmt(v) for v in row.tolist()))
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("\n".join(lines))
        f.write("\n")


def _parse_header_value(key: str, token: str, lineno: int):
    try:
        if key in ("ncols", "nrows"):
            return int(token)
        return float(token)
    except ValueError:
        raise GridParseError(
            f"line {lineno}: non-numeric value {token!r} for {key}") from None


def read_grid(path) -> Grid:
    """Read a grid written by :func:`write_grid`.

    Raises :class:`GridParseError` naming the offending line for malformed
    headers, row/column count mismatches or non-numeric tokens.
    """
    with open(path, encoding="utf-8") as f:
        raw = f.read().split("\n")

    header = {}
    for i, key in enumerate(_HEADER_KEYS):
        lineno = i + 1
        line = raw[i] if i < len(raw) else ""
        parts = line.split()
        if len(parts) != 2 or parts[0] != key:
            raise GridParseError(
                f"line {lineno}: expected '{key} <value>', got {line!r}")
        header[key] = _parse_header_value(key, parts[1], lineno)

    try:
        geometry = GridGeometry(header["ncols"], header["nrows"],
                                header["xllcorner"], header["yllcorner"],
                                header["cellsize"], header["NODATA_value"])
    except ValueError as e:
        raise GridParseError(f"header: {e}") from None

    nrows, ncols = geometry.nrows, geometry.ncols
    values = np.empty((nrows, ncols), dtype=np.float64)
    for r in range(nrows):
        lineno = 7 + r
        if 6 + r >= len(raw):
            raise GridParseError(
                f"line {lineno}: expected {nrows} data rows, file ends after "
                f"{r}")
        tokens = raw[6 + r].split()
        if len(tokens) != ncols:
            raise GridParseError(
                f"line {lineno}: expected {ncols} values, found {len(tokens)}")
        try:
            row = [float(t) for t in tokens]
        except ValueError:
            bad = next(t for t in tokens if not _is_number(t))
            raise GridParseError(
                f"line {lineno}: non-numeric token {bad!r}") from None
        values[r] = row
        if not np.all(np.isfinite(values[r])):
            raise GridParseError(f"line {lineno}: non-finite value in row")

    for extra, line in enumerate(raw[6 + nrows:]):
        if line.strip():
            raise GridParseError(
                f"line {7 + nrows + extra}: unexpected content after "
                f"{nrows} data rows")
    return Grid(geometry, values)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# sampling and resampling


def _bilinear_many(grid: Grid, lats: np.ndarray, lons: np.ndarray):
    """Vectorized bilinear sampling at cell centers.

    Returns ``(values, inside)`` where ``values`` uses NaN both for points
    outside the grid's outer bounds and for samples whose 2x2 neighborhood
    touches nodata.
    """
    g = grid.geometry
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    inside = ((lats >= g.yll) & (lats <= g.lat_max)
              & (lons >= g.xll) & (lons <= g.lon_max))

    # continuous (row-from-north, col) coordinates of the sample point
    gx = (lons - g.xll) / g.cell - 0.5
    gy = (g.lat_max - lats) / g.cell - 0.5

    j0 = np.clip(np.floor(gx), 0, max(g.ncols - 2, 0)).astype(np.intp)
    i0 = np.clip(np.floor(gy), 0, max(g.nrows - 2, 0)).astype(np.intp)
    j1 = np.minimum(j0 + 1, g.ncols - 1)
    i1 = np.minimum(i0 + 1, g.nrows - 1)
    tx = np.clip(gx - j0, 0.0, 1.0)
    ty = np.clip(gy - i0, 0.0, 1.0)

    v = grid.values
    v00 = v[i0, j0]
    v01 = v[i0, j1]
    v10 = v[i1, j0]
    v11 = v[i1, j1]

    out = ((1.0 - ty) * ((1.0 - tx) * v00 + tx * v01)
           + ty * ((1.0 - tx) * v10 + tx * v11))
    nd = g.nodata
    bad = (v00 == nd) | (v01 == nd) | (v10 == nd) | (v11 == nd)
    out = np.where(inside & ~bad, out, np.nan)
    return out, inside


def sample_bilinear(grid: Grid, lat: float, lon: float) -> float:
    """Bilinear interpolation of the four surrounding cell-center values.

    Returns the grid's nodata sentinel if any of the four neighbors is
    nodata.  Raises ``ValueError`` for coordinates outside the outer bounds.
    """
    vals, inside = _bilinear_many(grid, [lat], [lon])
    if not inside[0]:
        raise ValueError(f"point ({lat}, {lon}) is outside the grid bounds")
    if np.isnan(vals[0]):
        return grid.geometry.nodata
    return float(vals[0])


def resample(grid: Grid, target: GridGeometry, method: str = "nearest") -> Grid:
    """Resample onto ``target``: each target cell takes ``method``'s value at
    its center; centers outside the source bounds become nodata.
    """
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resampling method {method!r}")
    g = grid.geometry
    lats = target.row_center_lats()[:, None]
    lons = target.col_center_lons()[None, :]
    LAT = np.broadcast_to(lats, (target.nrows, target.ncols))
    LON = np.broadcast_to(lons, (target.nrows, target.ncols))

    if method == "nearest":
        inside = ((LAT >= g.yll) & (LAT <= g.lat_max)
                  & (LON >= g.xll) & (LON <= g.lon_max))
        cols = np.clip(np.floor((LON - g.xll) / g.cell), 0,
                       g.ncols - 1).astype(np.intp)
        rows = np.clip(np.floor((g.lat_max - LAT) / g.cell), 0,
                       g.nrows - 1).astype(np.intp)
        vals = grid.values[rows, cols]
        good = inside & (vals != g.nodata)
    else:
        vals, inside = _bilinear_many(grid, LAT, LON)
        good = ~np.isnan(vals)

    if not inside.any():
        raise ValueError("target geometry does not overlap the source grid")
    out = np.where(good, vals, target.nodata)
    return Grid(target, out)


# ---------------------------------------------------------------------------
# neighborhood filters


def _check_window(k: int) -> int:
    k = int(k)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"window size must be odd and positive, got {k}")
    return k


def _shift_slices(n: int, d: int):
    # output pixel i reads input pixel i + d; return (src, dst) slices
    if d >= 0:
        return slice(d, n), slice(0, n - d)
    return slice(0, n + d), slice(-d, n)


def _window_filter(grid: Grid, weights: np.ndarray) -> Grid:
    """Weighted window mean with nodata-aware renormalization.

    The mean is accumulated as deviations from each output pixel's own value,
    which keeps constant grids exactly constant and improves conditioning.
    Output is nodata only where the window holds no valid cell.
    """
    k = weights.shape[0]
    r = k // 2
    g = grid.geometry
    valid = grid.valid_mask()
    validf = valid.astype(np.float64)
    vm = np.where(valid, grid.values, 0.0)
    ref = vm

    num = np.zeros_like(vm)
    den = np.zeros_like(vm)
    nrows, ncols = vm.shape
    for di in range(-r, r + 1):
        src_i, dst_i = _shift_slices(nrows, di)
        if src_i.start >= nrows or src_i.stop <= 0:
            continue
        for dj in range(-r, r + 1):
            w = weights[di + r, dj + r]
            if w == 0.0:
                continue
            src_j, dst_j = _shift_slices(ncols, dj)
            if src_j.start >= ncols or src_j.stop <= 0:
                continue
            wv = w * validf[src_i, src_j]
            num[dst_i, dst_j] += wv * (vm[src_i, src_j] - ref[dst_i, dst_j])
            den[dst_i, dst_j] += wv
    with np.errstate(invalid="ignore", divide="ignore"):
        out = ref + num / den
    out[den == 0.0] = g.nodata
    return Grid(g, out)


def uniform_filter(grid: Grid, k: int) -> Grid:
    """Arithmetic mean over the valid cells of each k x k window."""
    k = _check_window(k)
    return _window_filter(grid, np.ones((k, k)))


def gaussian_filter(grid: Grid, k: int, sigma: float | None = None) -> Grid:
    """Gaussian window mean, kernel truncated to k x k.

    ``sigma`` defaults to ``k/6`` so the +/-3 sigma support fills the window.
    Weights are renormalized over the valid in-window cells of each pixel.
    """
    k = _check_window(k)
    if sigma is None:
        sigma = k / 6.0
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = k // 2
    offsets = np.arange(k, dtype=np.float64) - r
    line = np.exp(-0.5 * (offsets / sigma) ** 2)
    return _window_filter(grid, np.outer(line, line))


def window_iqr(grid: Grid, k: int) -> Grid:
    """Per-cell interquartile range (Q3 - Q1) over each k x k window.

    Quartiles use linear interpolation between order statistics at positions
    (n-1) * {0.25, 0.75}.  Cells with fewer than 4 valid window members
    become nodata.
    """
    k = _check_window(k)
    g = grid.geometry
    r = k // 2
    vm = np.where(grid.valid_mask(), grid.values, np.nan)
    padded = np.full((g.nrows + 2 * r, g.ncols + 2 * r), np.nan)
    padded[r:r + g.nrows, r:r + g.ncols] = vm
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))

    out = np.full((g.nrows, g.ncols), g.nodata)
    # chunk rows to bound the memory of the per-window copies
    chunk = max(1, int(4e6 / (g.ncols * k * k)))
    for r0 in range(0, g.nrows, chunk):
        r1 = min(r0 + chunk, g.nrows)
        flat = windows[r0:r1].reshape(r1 - r0, g.ncols, k * k)
        counts = np.count_nonzero(~np.isnan(flat), axis=2)
        ok = counts >= 4
        if not ok.any():
            continue
        sel = flat[ok]
        q1, q3 = np.nanquantile(sel, [0.25, 0.75], axis=1)
        block = out[r0:r1]
        block[ok] = q3 - q1
    return Grid(g, out)
