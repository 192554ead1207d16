"""Gridded fields: preprocessing, file formats and synthetic data.

Preprocessing turns coarse six-hourly model fields into standardised daily
inputs on the rainfall grid::

    derived fields -> optional boxcar smoothing -> daily means
        -> cubic spline regridding -> standardisation

Two on-disk formats are supported: the ``CPTGRID1`` binary container and a
long CSV with one value per row (``time,lat,lon,field,unit,value``).
Masked-out cells are stored as NaN and omitted from the CSV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import uniform_filter

from .arma import LocationData, ModelParams
from .binio import read_container, write_container
from .errors import DataError, DomainError
from .seeding import make_rng, mix_seed

__all__ = [
    "GridTimeSeries",
    "FieldSet",
    "MODEL_FIELDS",
    "regrid_spline",
    "daily_mean",
    "wind_speed",
    "advection_magnitude",
    "boxcar_smooth",
    "Standardization",
    "standardize",
    "apply_standardization",
    "derive_inputs",
    "preprocess",
    "write_grid",
    "read_grid",
    "write_grid_csv",
    "read_grid_csv",
    "location_series",
    "SyntheticSpec",
    "synthesize",
    "EARTH_RADIUS_KM",
]

GRID_MAGIC = b"CPTGRID1"
GRID_VERSION = 1
EARTH_RADIUS_KM = 6371.0

MODEL_FIELDS = ("tclw", "z500", "t850", "u850", "v850", "q850")
SLOTS_PER_DAY = 4


def _check_axis(name, a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 1 or not np.all(np.isfinite(a)):
        raise DataError(f"{name} axis must be a finite 1-d array")
    d = np.diff(a)
    if a.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise DataError(f"{name} axis must be strictly monotone")
    return a


@dataclass
class GridTimeSeries:
    """Values on a (time, lat, lon) grid.

    ``mask`` is true on cells that take part in the analysis (land cells);
    values there must be finite.
    """

    times: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    values: np.ndarray
    unit: str
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype="datetime64[s]")
        self.lat = _check_axis("lat", self.lat)
        self.lon = _check_axis("lon", self.lon)
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.times.size, self.lat.size, self.lon.size)
        if self.values.shape != shape:
            raise DataError(f"values have shape {self.values.shape}, axes imply {shape}")
        if self.times.size > 1 and not np.all(np.diff(self.times) > np.timedelta64(0, "s")):
            raise DataError("times must be strictly increasing")
        if not self.unit:
            raise DataError("a unit tag is required")
        if self.mask is None:
            self.mask = np.ones(shape[1:], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != shape[1:]:
            raise DataError("mask shape does not match the grid")
        if not np.all(np.isfinite(self.values[:, self.mask])):
            raise DataError("non-finite values on masked-in cells")

    @property
    def shape(self):
        return self.values.shape

    def same_grid(self, other: "GridTimeSeries") -> bool:
        return (np.array_equal(self.lat, other.lat) and np.array_equal(self.lon, other.lon)
                and np.array_equal(self.times, other.times))

    def with_values(self, values, unit=None) -> "GridTimeSeries":
        return GridTimeSeries(self.times, self.lat, self.lon, values, unit or self.unit, self.mask)


@dataclass
class FieldSet:
    """Named fields sharing one grid and one time axis."""

    fields: dict = field(default_factory=dict)

    def __post_init__(self):
        items = list(self.fields.values())
        for g in items[1:]:
            if not g.same_grid(items[0]):
                raise DataError("all fields in a set must share grid and time axis")

    def __getitem__(self, name) -> GridTimeSeries:
        try:
            return self.fields[name]
        except KeyError:
            raise DataError(f"field {name!r} not present; have {sorted(self.fields)}") from None

    def __contains__(self, name):
        return name in self.fields

    def __iter__(self):
        return iter(self.fields)

    def names(self) -> list:
        return list(self.fields)

    @property
    def reference(self) -> GridTimeSeries:
        if not self.fields:
            raise DataError("empty field set")
        return next(iter(self.fields.values()))

    def add(self, name, g: GridTimeSeries) -> None:
        if self.fields and not g.same_grid(self.reference):
            raise DataError(f"field {name!r} is on a different grid")
        self.fields[name] = g


# -- preprocessing ------------------------------------------------------------


def _spline_axis(x, values, new_x, axis):
    order = np.argsort(x)
    xs = x[order]
    lo, hi = xs[0], xs[-1]
    if np.any(new_x < lo) or np.any(new_x > hi):
        raise DomainError(f"target axis [{new_x.min()}, {new_x.max()}] leaves the source range [{lo}, {hi}]")
    v = np.take(values, order, axis=axis)
    if xs.size == 1:
        return np.repeat(v, new_x.size, axis=axis)
    spline = CubicSpline(xs, v, axis=axis, bc_type="natural")
    out = spline(new_x)
    # exact reproduction at nodes, free of rounding in the polynomial evaluation
    hit = np.searchsorted(xs, new_x)
    hit = np.clip(hit, 0, xs.size - 1)
    exact = xs[hit] == new_x
    if np.any(exact):
        sl = [slice(None)] * out.ndim
        sl[axis] = np.nonzero(exact)[0]
        src = [slice(None)] * v.ndim
        src[axis] = hit[exact]
        out[tuple(sl)] = v[tuple(src)]
    return out


def regrid_spline(coarse: GridTimeSeries, lat, lon, mask=None) -> GridTimeSeries:
    """Interpolate each time slice onto new axes with bicubic splines.

    The interpolant is the tensor product of natural cubic splines with knots
    at the coarse nodes, evaluated along latitude and then longitude. It
    passes through every coarse node and reproduces fields linear in lat and
    lon.

    ``mask`` defaults to the coarse mask at the nearest coarse node.

    Raises
    ------
    DomainError
        If a target coordinate lies outside the coarse bounding box.
    DataError
        If the coarse field has non-finite values anywhere.
    """
    lat = _check_axis("lat", lat)
    lon = _check_axis("lon", lon)
    if not np.all(np.isfinite(coarse.values)):
        raise DataError("regridding needs finite values on every coarse cell")
    v = _spline_axis(coarse.lat, coarse.values, lat, axis=1)
    v = _spline_axis(coarse.lon, v, lon, axis=2)
    if mask is None:
        i = np.abs(coarse.lat[None, :] - lat[:, None]).argmin(axis=1)
        j = np.abs(coarse.lon[None, :] - lon[:, None]).argmin(axis=1)
        mask = coarse.mask[np.ix_(i, j)]
    return GridTimeSeries(coarse.times, lat, lon, v, coarse.unit, mask)


def daily_mean(x: GridTimeSeries) -> GridTimeSeries:
    """Average four six-hourly slots (00, 06, 12, 18 UTC) into daily values.

    Raises
    ------
    DataError
        If any day is missing a slot or has one off the six-hour pattern.
    """
    days = x.times.astype("datetime64[D]")
    hours = (x.times - days).astype("timedelta64[h]").astype(int)
    if np.any(hours % 6 != 0) or np.any(x.times != days + hours.astype("timedelta64[h]")):
        raise DataError("six-hourly slots must fall on 00, 06, 12 and 18 UTC")
    unique, start, count = np.unique(days, return_index=True, return_counts=True)
    bad = np.nonzero(count != SLOTS_PER_DAY)[0]
    if bad.size:
        raise DataError(f"day {unique[bad[0]]} has {count[bad[0]]} of {SLOTS_PER_DAY} slots")
    v = x.values.reshape(unique.size, SLOTS_PER_DAY, *x.values.shape[1:]).mean(axis=1)
    return GridTimeSeries(unique.astype("datetime64[s]"), x.lat, x.lon, v, x.unit, x.mask)


def wind_speed(u, v):
    """Wind speed ``sqrt(u**2 + v**2)`` for arrays or grids."""
    if isinstance(u, GridTimeSeries):
        return u.with_values(np.hypot(u.values, v.values))
    return np.hypot(u, v)


def _grid_spacing(lat, lon, metric, dx, dy):
    if metric == "constant":
        if dx is None or dy is None:
            raise ValueError("constant spacing needs dx and dy")
        return np.arange(lon.size) * float(dx), np.arange(lat.size) * float(dy), None
    if metric == "equirectangular":
        x = np.radians(lon) * EARTH_RADIUS_KM
        y = np.radians(lat) * EARTH_RADIUS_KM
        return x, y, np.cos(np.radians(lat))
    raise ValueError(f"unknown metric {metric!r}")


def advection_magnitude(u, v, a, lat=None, lon=None, metric="equirectangular", dx=None, dy=None):
    """Magnitude ``sqrt((u dA/dx)**2 + (v dA/dy)**2)`` of moisture advection.

    Gradients use central differences inside the grid and one-sided
    differences on its edges (``numpy.gradient``). In ``"equirectangular"``
    mode distances are in km, with the east-west spacing scaled by the cosine
    of latitude; ``"constant"`` mode uses the given ``dx`` and ``dy``.

    Inputs are arrays shaped ``(..., H, W)`` or grids, in which case the axes
    come from ``a``.

    Raises
    ------
    DataError
        If either spatial axis has fewer than three points.
    """
    as_grid = isinstance(a, GridTimeSeries)
    if as_grid:
        lat, lon = a.lat, a.lon
        uu, vv, aa = u.values, v.values, a.values
    else:
        uu, vv, aa = (np.asarray(w, dtype=float) for w in (u, v, a))
        if lat is None:
            lat = np.arange(aa.shape[-2], dtype=float)
        if lon is None:
            lon = np.arange(aa.shape[-1], dtype=float)
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if aa.shape[-1] < 3 or aa.shape[-2] < 3:
        raise DataError("advection needs at least three points along each axis")
    x, y, coslat = _grid_spacing(lat, lon, metric, dx, dy)
    da_dx = np.gradient(aa, x, axis=-1)
    if coslat is not None:
        da_dx = da_dx / coslat[:, None]
    da_dy = np.gradient(aa, y, axis=-2)
    out = np.hypot(uu * da_dx, vv * da_dy)
    return a.with_values(out, unit=f"({u.unit})*({a.unit})/km") if as_grid else out


def boxcar_smooth(g: GridTimeSeries, width: int) -> GridTimeSeries:
    """Spatial moving average over ``width x width`` cells (edges replicated)."""
    if width <= 1:
        return g
    return g.with_values(uniform_filter(g.values, size=(1, width, width), mode="nearest"))


@dataclass
class Standardization:
    """Per-field mean and standard deviation over masked-in cells and all times."""

    mean: dict
    sd: dict

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "sd": dict(self.sd)}

    @classmethod
    def from_dict(cls, d) -> "Standardization":
        return cls(dict(d["mean"]), dict(d["sd"]))


def standardize(fields: FieldSet, names=None) -> tuple[FieldSet, Standardization]:
    """Centre and scale each field to mean 0, sd 1 over masked-in cells.

    The standard deviation uses divisor ``n``. Masked-out cells are carried
    through transformed but never enter the statistics.
    """
    names = fields.names() if names is None else list(names)
    mean, sd = {}, {}
    for name in names:
        g = fields[name]
        vals = g.values[:, g.mask]
        if vals.size == 0:
            raise DataError(f"field {name!r} has no masked-in cells")
        mean[name] = float(vals.mean())
        sd[name] = float(vals.std())
        if not sd[name] > 0:
            raise DataError(f"field {name!r} is constant over the masked-in cells")
    stats = Standardization(mean, sd)
    return apply_standardization(fields, stats, names), stats


def apply_standardization(fields: FieldSet, stats: Standardization, names=None) -> FieldSet:
    """Apply stored statistics, e.g. training-period ones to test-period fields."""
    names = list(stats.mean) if names is None else list(names)
    out = FieldSet()
    for name in names:
        g = fields[name]
        out.add(name, g.with_values((g.values - stats.mean[name]) / stats.sd[name], unit="1"))
    return out


def derive_inputs(coarse: FieldSet, metric="equirectangular") -> FieldSet:
    """Six model fields plus wind speed and the two advection magnitudes."""
    out = FieldSet()
    for name in MODEL_FIELDS:
        out.add(name, coarse[name])
    u, v = coarse["u850"], coarse["v850"]
    out.add("wind850", wind_speed(u, v))
    out.add("adv_tclw", advection_magnitude(u, v, coarse["tclw"], metric=metric))
    out.add("adv_q850", advection_magnitude(u, v, coarse["q850"], metric=metric))
    return out


def preprocess(coarse: FieldSet, lat, lon, mask=None, smooth_width: int = 0,
               stats: Standardization | None = None, metric="equirectangular"):
    """Full input pipeline from six-hourly coarse fields to standardised daily inputs.

    Passing ``stats`` (from a training period) reuses them instead of
    computing new ones. Returns ``(inputs, stats)``.
    """
    derived = derive_inputs(coarse, metric=metric)
    fine = FieldSet()
    for name in derived:
        g = boxcar_smooth(derived[name], smooth_width)
        fine.add(name, regrid_spline(daily_mean(g), lat, lon, mask))
    if stats is None:
        return standardize(fine)
    return apply_standardization(fine, stats, fine.names()), stats


# -- file formats -------------------------------------------------------------


def write_grid(path, fields: FieldSet) -> None:
    """Write a field set as a ``CPTGRID1`` container."""
    ref = fields.reference
    meta = {"fields": fields.names(), "units": {n: fields[n].unit for n in fields}}
    arrays = {"times": ref.times.astype("int64"), "lat": ref.lat, "lon": ref.lon}
    for n in fields:
        g = fields[n]
        arrays[f"mask/{n}"] = g.mask.astype(np.uint8)
        arrays[f"values/{n}"] = np.where(g.mask[None], g.values, np.nan)
    write_container(path, GRID_MAGIC, GRID_VERSION, meta, arrays)


def read_grid(path) -> FieldSet:
    meta, arrays = read_container(path, GRID_MAGIC, GRID_VERSION)
    times = arrays["times"].astype("datetime64[s]")
    out = FieldSet()
    for n in meta["fields"]:
        out.add(n, GridTimeSeries(times, arrays["lat"], arrays["lon"], arrays[f"values/{n}"],
                                  meta["units"][n], arrays[f"mask/{n}"].astype(bool)))
    return out


CSV_COLUMNS = ("time", "lat", "lon", "field", "unit", "value")


def write_grid_csv(path, fields: FieldSet) -> None:
    """Long-format CSV; every float is written in shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for name in fields:
            g = fields[name]
            ts = [str(t) for t in g.times]
            cells = np.argwhere(g.mask)
            for k, t in enumerate(ts):
                for i, j in cells:
                    w.writerow((t, repr(float(g.lat[i])), repr(float(g.lon[j])), name, g.unit,
                                repr(float(g.values[k, i, j]))))


def _first_seen(values):
    _, idx = np.unique(values, return_index=True)
    return values[np.sort(idx)]


def read_grid_csv(path, expected_units: dict | None = None) -> FieldSet:
    """Read the long CSV format.

    Cells with no rows are masked out. ``expected_units`` maps field names to
    required unit tags.

    Raises
    ------
    DataError
        On a malformed row (with its line number), a unit mismatch, duplicate
        or partial cells, or fields on differing grids.
    """
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise DataError(f"{path}: line 1: expected header {','.join(CSV_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise DataError(f"{path}: line {lineno}: expected {len(CSV_COLUMNS)} columns, got {len(row)}")
            t, la, lo, name, unit, val = row
            try:
                rec = (np.datetime64(t, "s"), float(la), float(lo), float(val))
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not math.isfinite(rec[3]):
                raise DataError(f"{path}: line {lineno}: value is not finite")
            entry = rows.setdefault(name, {"unit": unit, "recs": []})
            if entry["unit"] != unit:
                raise DataError(f"{path}: line {lineno}: unit {unit!r} differs from {entry['unit']!r} for {name}")
            if expected_units and name in expected_units and expected_units[name] != unit:
                raise DataError(f"{path}: line {lineno}: field {name} has unit {unit!r}, "
                                f"expected {expected_units[name]!r}")
            entry["recs"].append(rec)
    out = FieldSet()
    for name, entry in rows.items():
        recs = entry["recs"]
        t = np.array([r[0] for r in recs], dtype="datetime64[s]")
        la = np.array([r[1] for r in recs])
        lo = np.array([r[2] for r in recs])
        val = np.array([r[3] for r in recs])
        times = np.unique(t)
        lat_axis, lon_axis = _first_seen(la), _first_seen(lo)
        if not (np.all(np.diff(lat_axis) > 0) or np.all(np.diff(lat_axis) < 0)):
            lat_axis = np.sort(lat_axis)
        if not (np.all(np.diff(lon_axis) > 0) or np.all(np.diff(lon_axis) < 0)):
            lon_axis = np.sort(lon_axis)
        ti = np.searchsorted(times, t)
        li = {v: k for k, v in enumerate(lat_axis)}
        oi = {v: k for k, v in enumerate(lon_axis)}
        ii = np.array([li[v] for v in la])
        jj = np.array([oi[v] for v in lo])
        values = np.full((times.size, lat_axis.size, lon_axis.size), np.nan)
        seen = np.zeros(values.shape, dtype=np.int64)
        np.add.at(seen, (ti, ii, jj), 1)
        if np.any(seen > 1):
            raise DataError(f"{path}: duplicate rows for field {name}")
        values[ti, ii, jj] = val
        mask = seen.any(axis=0)
        if np.any(seen[:, mask] == 0):
            raise DataError(f"{path}: field {name} has cells missing some times")
        out.add(name, GridTimeSeries(times, lat_axis, lon_axis, values, entry["unit"], mask))
    return out


def location_series(inputs: FieldSet, precip: GridTimeSeries, row: int, col: int,
                    names=None) -> LocationData:
    """Input vectors and rainfall for one cell as a :class:`LocationData`."""
    names = inputs.names() if names is None else list(names)
    ref = inputs.reference
    if not np.array_equal(ref.times.astype("datetime64[D]"), precip.times.astype("datetime64[D]")):
        raise DataError("inputs and rainfall cover different days")
    x = np.column_stack([inputs[n].values[:, row, col] for n in names])
    return LocationData(x, precip.values[:, row, col], precip.times.astype("datetime64[D]"),
                        location=f"{row}_{col}", meta={"row": row, "col": col, "inputs": names})


# -- synthetic data -----------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Inputs ``amplitude * sin(2 pi t / period + phase_r) + noise``.

    The defaults give each input unit variance over whole years.
    """

    n_days: int
    n_inputs: int
    amplitude: float = 1.0
    noise_sd: float = math.sqrt(0.5)
    period_days: float = 365.25
    start: str = "2000-01-01"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def synthesize(truth, spec: SyntheticSpec, seed: int, shape=(1, 1)):
    """Simulate rainfall from known parameters on a small grid of locations.

    Parameters
    ----------
    truth : ModelParams or dict mapping ``(row, col)`` to ModelParams
    spec : SyntheticSpec
    seed : int
        Base seed; cell ``(row, col)`` uses ``mix_seed(seed, row, col)``.
    shape : (H, W)

    Returns
    -------
    locations : list of LocationData
        In row-major cell order.
    record : dict
        Per-location truth: parameter vector, dimensions and simulated latent
        counts, with the synthetic settings and seed.
    """
    from .forecast import simulate_forward

    h, w = shape
    calendar = np.datetime64(spec.start, "D") + np.arange(spec.n_days)
    phases = make_rng(mix_seed(seed, 2**40)).uniform(0, 2 * math.pi, spec.n_inputs)
    t = np.arange(spec.n_days)[:, None]
    seasonal = spec.amplitude * np.sin(2 * math.pi * t / spec.period_days + phases[None, :])
    locations, record = [], {"seed": int(seed), "spec": spec.to_dict(), "shape": [h, w],
                             "locations": {}}
    for row in range(h):
        for col in range(w):
            theta = truth[(row, col)] if isinstance(truth, dict) else truth
            if theta.n_inputs != spec.n_inputs:
                raise ValueError("truth and synthetic settings disagree on the number of inputs")
            rng = make_rng(mix_seed(seed, row, col))
            x = seasonal + spec.noise_sd * rng.standard_normal((spec.n_days, spec.n_inputs))
            y, z = simulate_forward(theta, None, None, x, rng, reset=True)
            loc = LocationData(x, y, calendar, location=f"{row}_{col}",
                               meta={"row": row, "col": col})
            locations.append(loc)
            record["locations"][loc.location] = {
                "theta": theta.to_vector().tolist(), "dims": list(theta.dims), "z": z.tolist()}
    return locations, record


def truth_params(record: dict, location: str) -> ModelParams:
    entry = record["locations"][location]
    return ModelParams.from_vector(entry["theta"], *entry["dims"])
