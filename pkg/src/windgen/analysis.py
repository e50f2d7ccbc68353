"""Validation diagnostics and wind power density statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid_data import DAYS_PER_YEAR, EnsembleSeries

DEFAULT_PROBS = np.round(np.arange(0.005, 0.9951, 0.005), 3)


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class WpdConfig:
    rho: float = 1.225
    hub_height: float = 80.0
    ref_height: float = 10.0
    exponent: float = 1.0 / 7.0
    negative_speed_policy: str = "clamp_zero"

    def __post_init__(self):
        if self.hub_height <= 0 or self.ref_height <= 0:
            raise AnalysisError("heights must be positive")
        if self.exponent <= 0:
            raise AnalysisError("power-law exponent must be positive")
        if self.negative_speed_policy != "clamp_zero":
            raise AnalysisError(f"unknown negative speed policy {self.negative_speed_policy!r}")

    @property
    def height_factor(self) -> float:
        return (self.hub_height / self.ref_height) ** self.exponent


@dataclass(frozen=True)
class SeasonDef:
    name: str
    ranges: tuple[tuple[int, int], ...]  # inclusive day-of-year ranges

    def __post_init__(self):
        days = []
        for a, b in self.ranges:
            if not 1 <= a <= b <= DAYS_PER_YEAR:
                raise AnalysisError(f"season {self.name}: range ({a}, {b}) outside 1..365")
            days.extend(range(a, b + 1))
        if len(days) != len(set(days)):
            raise AnalysisError(f"season {self.name}: overlapping day ranges")

    @property
    def days(self) -> np.ndarray:
        return np.concatenate([np.arange(a, b + 1) for a, b in self.ranges])


MAM = SeasonDef("MAM", ((60, 151),))
JJA = SeasonDef("JJA", ((152, 243),))
SON = SeasonDef("SON", ((244, 334),))
DJF = SeasonDef("DJF", ((335, 365), (1, 59)))
SEASONS = {s.name: s for s in (MAM, JJA, SON, DJF)}


# -- serial dependence -------------------------------------------------------

def acf(x, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation at lags 0..max_lag."""
    x = np.asarray(x, dtype=float)
    T = x.size
    if max_lag >= T / 2:
        raise AnalysisError(f"max_lag={max_lag} must be below T/2={T / 2}")
    c = x - x.mean()
    denom = c @ c
    if denom == 0:
        raise AnalysisError("autocorrelation undefined for a constant series")
    n = 1 << int(np.ceil(np.log2(2 * T)))
    f = np.fft.rfft(c, n)
    ac = np.fft.irfft(f * np.conj(f), n)[: max_lag + 1]
    return ac / denom


def ensemble_acf(series: EnsembleSeries, point: int, max_lag: int) -> dict:
    """Per-lag mean, min and max of the realization ACFs at one point."""
    curves = np.array([acf(series.values[r, :, point], max_lag) for r in range(series.n_realizations)])
    return {"lag": np.arange(max_lag + 1), "mean": curves.mean(axis=0), "min": curves.min(axis=0),
            "max": curves.max(axis=0), "curves": curves}


# -- marginal distribution ---------------------------------------------------

def mean_quantiles(values2d, probs) -> np.ndarray:
    """Linear-interpolation quantiles per realization (rows), averaged over realizations."""
    v = np.atleast_2d(np.asarray(values2d, dtype=float))
    return np.quantile(v, probs, axis=1, method="linear").mean(axis=1)


def qq_table(ref: EnsembleSeries, sim: EnsembleSeries, point: int, probs=DEFAULT_PROBS) -> np.ndarray:
    """Rows of (prob, ref quantile, sim quantile) using ensemble-mean quantiles."""
    probs = np.asarray(probs, dtype=float)
    r = ref.values[:, :, point]
    s = sim.values[:, :, point]
    if r.size == 0 or s.size == 0:
        raise AnalysisError("both ensembles need data at the requested point")
    return np.column_stack([probs, mean_quantiles(r, probs), mean_quantiles(s, probs)])


# -- excursions --------------------------------------------------------------

def run_lengths(flags) -> tuple[np.ndarray, np.ndarray]:
    """Lengths of maximal True runs, split into (interior, boundary-touching)."""
    f = np.asarray(flags, dtype=bool).astype(np.int8)
    if f.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    edges = np.diff(np.concatenate([[0], f, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    lengths = ends - starts
    censored = (starts == 0) | (ends == f.size)
    return lengths[~censored], lengths[censored]


def excursions(x, threshold: float, side: str = "above") -> dict[int, int]:
    """Histogram {duration: count} of interior runs strictly above (or below) ``threshold``."""
    if not np.isfinite(threshold):
        raise AnalysisError("threshold must be finite")
    x = np.asarray(x, dtype=float)
    if side == "above":
        flags = x > threshold
    elif side == "below":
        flags = x < threshold
    else:
        raise AnalysisError("side must be 'above' or 'below'")
    interior, _ = run_lengths(flags)
    dur, cnt = np.unique(interior, return_counts=True)
    return {int(a): int(b) for a, b in zip(dur, cnt)}


def ensemble_excursions(series: EnsembleSeries, point: int, threshold: float, side: str = "above") -> dict[int, int]:
    total: dict[int, int] = {}
    for r in range(series.n_realizations):
        for k, v in excursions(series.values[r, :, point], threshold, side).items():
            total[k] = total.get(k, 0) + v
    return dict(sorted(total.items()))


# -- wind power density ------------------------------------------------------

def hub_speed(w, cfg: WpdConfig = WpdConfig()) -> np.ndarray:
    return np.maximum(np.asarray(w, dtype=float), 0.0) * cfg.height_factor


def wpd(w, cfg: WpdConfig = WpdConfig()) -> np.ndarray:
    """Wind power density 0.5 rho w^3 (W/m^2) at hub height; negative speeds count as calm."""
    return 0.5 * cfg.rho * hub_speed(w, cfg) ** 3


def wpd_daily(series: EnsembleSeries, cfg: WpdConfig = WpdConfig()) -> np.ndarray:
    if series.standardized:
        raise AnalysisError("WPD needs raw wind speeds")
    return wpd(series.values, cfg)


def seasonal_means(daily: np.ndarray, season: SeasonDef, first_year: int, n_years: int,
                   start_year: int = 1) -> np.ndarray:
    """Season-mean per (realization, year, point) for ``n_years`` years from ``first_year``."""
    R, T, N = daily.shape
    total_years = T // DAYS_PER_YEAR
    k0 = first_year - start_year
    if k0 < 0 or k0 + n_years > total_years or n_years < 1:
        raise AnalysisError(f"window {first_year}..{first_year + n_years - 1} outside the calendar "
                            f"{start_year}..{start_year + total_years - 1}")
    by_year = daily.reshape(R, total_years, DAYS_PER_YEAR, N)[:, k0: k0 + n_years]
    return by_year[:, :, season.days - 1, :].mean(axis=2)


def seasonal_wpd_stats(daily: np.ndarray, season: SeasonDef, first_year: int, n_years: int,
                       start_year: int = 1) -> dict:
    """Across-year seasonal statistics per realization and their spread over realizations.

    Returns per-realization arrays (R, N) of the across-year SD, mean and 5%/95%
    quantiles of the seasonal means, and for the SD its across-realization
    median, min, max and 5%/95% quantiles (N,).
    """
    if n_years < 2:
        raise AnalysisError("an across-year SD needs a window of at least 2 years")
    m = seasonal_means(daily, season, first_year, n_years, start_year)
    sd = m.std(axis=1, ddof=1)
    out = {"season": season.name, "n_days": int(season.days.size), "seasonal_means": m,
           "sd": sd, "mean": m.mean(axis=1),
           "q05": np.quantile(m, 0.05, axis=1), "q95": np.quantile(m, 0.95, axis=1)}
    out["summary"] = {
        "median": np.median(sd, axis=0), "min": sd.min(axis=0), "max": sd.max(axis=0),
        "q05": np.quantile(sd, 0.05, axis=0), "q95": np.quantile(sd, 0.95, axis=0),
        "mean_wpd": m.mean(axis=(0, 1)),
    }
    return out


# -- tidy CSV writers --------------------------------------------------------

def write_acf_csv(path, rows) -> None:
    _write(path, ["point", "lag", "stat", "value"], rows)


def write_qq_csv(path, rows) -> None:
    _write(path, ["point", "prob", "ref_q", "sim_q"], rows)


def write_excursions_csv(path, rows) -> None:
    _write(path, ["point", "threshold", "side", "ensemble", "duration", "count"], rows)


def write_wpd_csv(path, rows) -> None:
    _write(path, ["season", "n_days", "point", "stat", "value"], rows)


def _write(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{x:.9g}" if isinstance(x, float) else x for x in r])
