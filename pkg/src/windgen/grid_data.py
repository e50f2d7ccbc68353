"""Grid metadata, the 365-day calendar and CSV ingestion of ensemble wind series."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

DAYS_PER_YEAR = 365
DIRECTIONS = ("N", "S", "E", "W")
OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}


class DataError(ValueError):
    """Raised when input files or arrays violate the data model."""


@dataclass(frozen=True)
class GridPoint:
    id: int
    lat: float
    lon: float
    elev: float = 0.0


@dataclass(frozen=True)
class GridMeta:
    points: tuple[GridPoint, ...]
    grid_spacing: float
    neighbor_map: tuple[tuple[tuple[str, int], ...], ...]

    def __post_init__(self):
        ids = [p.id for p in self.points]
        if ids != list(range(len(ids))):
            raise DataError("point ids must be 0..N-1 in order, without gaps or duplicates")
        if len(self.neighbor_map) != len(self.points):
            raise DataError("neighbor_map must have one entry per point")
        for i, links in enumerate(self.neighbor_map):
            if len(links) > 4:
                raise DataError(f"point {i} has more than 4 stencil neighbors")
            for direction, j in links:
                if (OPPOSITE[direction], i) not in self.neighbor_map[j]:
                    raise DataError(f"neighbor link {i}->{j} ({direction}) is not symmetric")

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def lats(self) -> np.ndarray:
        return np.array([p.lat for p in self.points])

    @property
    def lons(self) -> np.ndarray:
        return np.array([p.lon for p in self.points])

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for _, j in self.neighbor_map[i])

    @classmethod
    def from_points(cls, coords, spacing: float, elev=None, tol: float | None = None) -> "GridMeta":
        coords = [(float(a), float(b)) for a, b in coords]
        if elev is None:
            elev = [0.0] * len(coords)
        points = tuple(GridPoint(i, la, lo, float(e)) for i, ((la, lo), e) in enumerate(zip(coords, elev)))
        nmap = build_neighbors(coords, spacing, tol)
        return cls(points, float(spacing), nmap)

    @classmethod
    def lattice(cls, n_lat: int, n_lon: int, lat0: float = 20.0, lon0: float = 40.0,
                spacing: float = 1.0, mask=None) -> "GridMeta":
        """Rectangular lattice (row-major, south to north), optionally masked."""
        coords = []
        for a in range(n_lat):
            for b in range(n_lon):
                if mask is None or mask[a][b]:
                    coords.append((lat0 + a * spacing, lon0 + b * spacing))
        return cls.from_points(coords, spacing)


@dataclass(frozen=True)
class Calendar365:
    start_year: int
    n_years: int

    @property
    def n_days(self) -> int:
        return DAYS_PER_YEAR * self.n_years

    def day_of_year(self, t=None) -> np.ndarray:
        """1-based day of year for 0-based global day index ``t`` (all days if omitted)."""
        if t is None:
            t = np.arange(self.n_days)
        return np.asarray(t) % DAYS_PER_YEAR + 1

    def year_of(self, t) -> np.ndarray:
        return self.start_year + np.asarray(t) // DAYS_PER_YEAR


@dataclass
class EnsembleSeries:
    meta: GridMeta
    calendar: Calendar365
    values: np.ndarray  # (R, T, N)
    standardized: bool = False
    realization_ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise DataError("values must be indexed (realization, t, point)")
        R, T, N = self.values.shape
        if T != self.calendar.n_days:
            raise DataError(f"expected {self.calendar.n_days} days, got {T}")
        if N != self.meta.n_points:
            raise DataError(f"expected {self.meta.n_points} points, got {N}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")
        if not self.realization_ids:
            self.realization_ids = tuple(range(R))
        elif len(self.realization_ids) != R:
            raise DataError("realization_ids length does not match values")

    @property
    def n_realizations(self) -> int:
        return self.values.shape[0]

    def select(self, realizations) -> "EnsembleSeries":
        """Subset of members by their realization ids."""
        index = {rid: k for k, rid in enumerate(self.realization_ids)}
        try:
            rows = [index[r] for r in realizations]
        except KeyError as exc:
            raise DataError(f"unknown realization id {exc.args[0]}") from None
        return replace(self, values=self.values[rows], realization_ids=tuple(realizations))


def build_neighbors(points, spacing: float, tol: float | None = None):
    """First-order stencil links (N/S/E/W) found by coordinate matching.

    Two points are linked when they differ by ``spacing`` (within ``tol``) along
    exactly one axis. Returns one tuple of ``(direction, neighbor_id)`` per point.
    """
    if spacing <= 0:
        raise DataError("spacing must be positive")
    if tol is None:
        tol = 1e-6 * spacing
    if tol >= spacing / 2:
        raise DataError("tol must be smaller than spacing / 2")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    # snap to lattice cells so that lookups are O(1) per point
    cells: dict[tuple[int, int], int] = {}
    for i, (la, lo) in enumerate(pts):
        key = (round(la / spacing), round(lo / spacing))
        for other in _cell_candidates(cells, key):
            if abs(pts[other, 0] - la) <= tol and abs(pts[other, 1] - lo) <= tol:
                raise DataError(f"duplicate coordinates for points {other} and {i}")
        cells.setdefault(key, i)
    links: list[list[tuple[str, int]]] = [[] for _ in range(n)]
    offsets = {"N": (1, 0), "S": (-1, 0), "E": (0, 1), "W": (0, -1)}
    for i, (la, lo) in enumerate(pts):
        key = (round(la / spacing), round(lo / spacing))
        for direction in DIRECTIONS:
            dla, dlo = offsets[direction]
            target = (la + dla * spacing, lo + dlo * spacing)
            for j in _cell_candidates(cells, (key[0] + dla, key[1] + dlo)):
                if abs(pts[j, 0] - target[0]) <= tol and abs(pts[j, 1] - target[1]) <= tol:
                    links[i].append((direction, j))
    return tuple(tuple(sorted(l, key=lambda x: DIRECTIONS.index(x[0]))) for l in links)


def _cell_candidates(cells, key):
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            j = cells.get((key[0] + da, key[1] + db))
            if j is not None:
                yield j


def haversine_km(lat1, lon1, lat2, lon2, radius: float = 6371.0):
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def distance_matrix_km(meta: GridMeta, ids=None) -> np.ndarray:
    ids = np.arange(meta.n_points) if ids is None else np.asarray(ids)
    lat, lon = meta.lats[ids], meta.lons[ids]
    d = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    np.fill_diagonal(d, 0.0)
    return d


def infer_spacing(lats, lons) -> float:
    steps = []
    for axis in (np.asarray(lats), np.asarray(lons)):
        u = np.unique(np.round(axis, 9))
        if len(u) > 1:
            steps.append(np.min(np.diff(u)))
    if not steps:
        return 1.0
    return float(min(steps))


# -- CSV files ---------------------------------------------------------------

def load_grid(path, spacing: float | None = None) -> GridMeta:
    df = _read_csv(path, ["id", "lat", "lon", "elev"])
    df = df.sort_values("id", kind="stable")
    ids = df["id"].to_numpy()
    if not np.array_equal(ids, np.arange(len(ids))):
        raise DataError(f"{path}: point ids must be exactly 0..{len(ids) - 1}")
    lats, lons = df["lat"].to_numpy(), df["lon"].to_numpy()
    if spacing is None:
        spacing = infer_spacing(lats, lons)
    return GridMeta.from_points(zip(lats, lons), spacing, elev=df["elev"].to_numpy())


def save_grid(meta: GridMeta, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("id,lat,lon,elev\n")
        for p in meta.points:
            fh.write(f"{p.id},{_fmt(p.lat)},{_fmt(p.lon)},{_fmt(p.elev)}\n")


def load_series(path, meta_path, start_year: int = 1, allow_negative: bool = False) -> EnsembleSeries:
    """Read ``series.csv`` (long format) against the grid in ``meta_path``.

    Raw wind speeds must be finite and nonnegative unless ``allow_negative``
    (simulated output may legitimately dip below zero).
    """
    meta = load_grid(meta_path) if not isinstance(meta_path, GridMeta) else meta_path
    df = _read_csv(path, ["realization", "t", "point_id", "value"])
    values = df["value"].to_numpy()
    bad = ~np.isfinite(values)
    if bad.any():
        raise DataError(f"{path}: non-finite value at row {_row(bad)}")
    if not allow_negative and (values < 0).any():
        raise DataError(f"{path}: negative wind speed at row {_row(values < 0)}")
    pid = df["point_id"].to_numpy()
    bad = (pid < 0) | (pid >= meta.n_points)
    if bad.any():
        raise DataError(f"{path}: point_id out of range at row {_row(bad)}")
    t = df["t"].to_numpy()
    if (t < 0).any():
        raise DataError(f"{path}: negative day index at row {_row(t < 0)}")
    real_ids = np.unique(df["realization"].to_numpy())
    n_days = int(t.max()) + 1 if len(t) else 0
    if n_days % DAYS_PER_YEAR:
        n_years = n_days // DAYS_PER_YEAR
        raise DataError(f"{path}: expected {DAYS_PER_YEAR} days per year, "
                        f"found {n_days % DAYS_PER_YEAR} days after {n_years} full years")
    R, T, N = len(real_ids), n_days, meta.n_points
    if len(df) != R * T * N:
        raise DataError(f"{path}: expected {R * T * N} rows ({R} realizations x {T} days x {N} points), "
                        f"found {len(df)}")
    r = np.searchsorted(real_ids, df["realization"].to_numpy())
    out = np.full((R, T, N), np.nan)
    flat = (r * T + t) * N + pid
    if len(np.unique(flat)) != len(flat):
        dup = np.zeros(len(flat), dtype=bool)
        _, first = np.unique(flat, return_index=True)
        dup[np.setdiff1d(np.arange(len(flat)), first)] = True
        raise DataError(f"{path}: duplicate (realization, t, point_id) at row {_row(dup)}")
    out.reshape(-1)[flat] = values
    cal = Calendar365(start_year, T // DAYS_PER_YEAR)
    return EnsembleSeries(meta, cal, out, standardized=False,
                          realization_ids=tuple(int(x) for x in real_ids))


def save_series(series: EnsembleSeries, path) -> None:
    R, T, N = series.values.shape
    df = pd.DataFrame({
        "realization": np.repeat(np.asarray(series.realization_ids, dtype=np.int64), T * N),
        "t": np.tile(np.repeat(np.arange(T), N), R),
        "point_id": np.tile(np.arange(N), R * T),
        "value": series.values.reshape(-1),
    })
    df.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _row(mask) -> int:
    # 1-based data row; header is line 1
    return int(np.flatnonzero(mask)[0]) + 2


def _read_csv(path, columns) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: empty file") from None
    except (pd.errors.ParserError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if list(df.columns) != columns:
        raise DataError(f"{path}: expected header {','.join(columns)}, got {','.join(map(str, df.columns))}")
    for col in columns:
        if not pd.api.types.is_numeric_dtype(df[col]):
            num = pd.to_numeric(df[col], errors="coerce")
            bad = num.isna().to_numpy() & df[col].notna().to_numpy()
            if bad.any():
                k = int(np.flatnonzero(bad)[0])
                raise DataError(f"{path}: row {k + 2}: cannot parse {col}={df[col].iloc[k]!r}")
            df[col] = num
        vals = df[col].to_numpy(dtype=float)
        if np.isnan(vals).any():
            raise DataError(f"{path}: row {_row(np.isnan(vals))}: missing {col}")
        if col in ("id", "realization", "t", "point_id"):
            frac = np.mod(vals, 1) != 0
            if frac.any():
                raise DataError(f"{path}: row {_row(frac)}: {col} must be an integer")
            df[col] = vals.astype(np.int64)
    return df


def lattice_degree_count(meta: GridMeta) -> int:
    """Number of directed stencil links; always even for a symmetric map."""
    return sum(len(l) for l in meta.neighbor_map)


def check_finite(x, what: str = "array") -> None:
    if not np.all(np.isfinite(x)):
        raise DataError(f"{what} contains non-finite values")


__all__ = [
    "DataError", "GridPoint", "GridMeta", "Calendar365", "EnsembleSeries",
    "build_neighbors", "haversine_km", "distance_matrix_km", "load_grid", "save_grid",
    "load_series", "save_series", "lattice_degree_count", "check_finite", "DAYS_PER_YEAR",
]
