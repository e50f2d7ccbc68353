"""Day-of-year harmonic mean and standard-deviation cycles."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .grid_data import DAYS_PER_YEAR, DataError, EnsembleSeries

DEFAULT_HARMONICS = 5
SD_FLOOR = 1e-3


class SeasonalFitError(ValueError):
    pass


def harmonic_basis(day, n_harmonics: int = DEFAULT_HARMONICS) -> np.ndarray:
    """Design matrix ``[1, sin(2 pi k d/365), cos(2 pi k d/365), k=1..K]``."""
    d = np.asarray(day, dtype=float).reshape(-1)
    cols = [np.ones_like(d)]
    for k in range(1, n_harmonics + 1):
        w = 2.0 * np.pi * k * d / DAYS_PER_YEAR
        cols.append(np.sin(w))
        cols.append(np.cos(w))
    return np.column_stack(cols)


@dataclass(frozen=True)
class SeasonalModel:
    mean_coefs: np.ndarray  # (N, 2K+1)
    sd_coefs: np.ndarray    # (N, 2K+1)
    n_harmonics: int = DEFAULT_HARMONICS

    def __post_init__(self):
        p = 2 * self.n_harmonics + 1
        if self.mean_coefs.shape[1] != p or self.sd_coefs.shape[1] != p:
            raise ValueError(f"coefficient vectors must have length {p}")
        if self.mean_coefs.shape != self.sd_coefs.shape:
            raise ValueError("mean and sd coefficient arrays differ in shape")

    @property
    def n_points(self) -> int:
        return self.mean_coefs.shape[0]

    def mean(self, day) -> np.ndarray:
        """mu at each requested day of year, shape (len(day), N)."""
        return harmonic_basis(day, self.n_harmonics) @ self.mean_coefs.T

    def sd(self, day) -> np.ndarray:
        return harmonic_basis(day, self.n_harmonics) @ self.sd_coefs.T

    def to_json(self) -> list:
        return [{"id": i, "mean_coefs": self.mean_coefs[i].tolist(), "sd_coefs": self.sd_coefs[i].tolist()}
                for i in range(self.n_points)]

    @classmethod
    def from_json(cls, items) -> "SeasonalModel":
        items = sorted(items, key=lambda x: x["id"])
        mean = np.array([x["mean_coefs"] for x in items], dtype=float)
        sd = np.array([x["sd_coefs"] for x in items], dtype=float)
        return cls(mean, sd, (mean.shape[1] - 1) // 2)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "SeasonalModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def day_of_year_stats(values: np.ndarray):
    """Pooled day-of-year mean and SD over members and years.

    ``values`` is (R, T, N) with T a multiple of 365. Returns two (365, N) arrays;
    the SD is taken about the pooled day mean.
    """
    R, T, N = values.shape
    by_day = values.reshape(R, T // DAYS_PER_YEAR, DAYS_PER_YEAR, N)
    mean = by_day.mean(axis=(0, 1))
    sd = by_day.std(axis=(0, 1))
    return mean, sd


def fit_harmonics(y: np.ndarray, n_harmonics: int = DEFAULT_HARMONICS) -> np.ndarray:
    """Least-squares harmonic coefficients for 365 day-of-year targets (columns of ``y``)."""
    X = harmonic_basis(np.arange(1, DAYS_PER_YEAR + 1), n_harmonics)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SeasonalFitError("harmonic design matrix is singular")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef.T


def fit_seasonal(series: EnsembleSeries, n_harmonics: int = DEFAULT_HARMONICS,
                 sd_floor: float = SD_FLOOR) -> SeasonalModel:
    """Fit harmonic cycles to the day-of-year mean and SD at every gridpoint.

    The mean cycle is regressed on the 365 pooled calendar-day means; the SD
    cycle on the calendar-day SDs of the mean-removed series. A fitted SD
    curve dipping below ``sd_floor`` times the point's overall SD rejects the fit.
    """
    if series.standardized:
        raise SeasonalFitError("seasonal cycles must be fitted to raw wind speeds")
    if 2 * n_harmonics + 1 > DAYS_PER_YEAR or n_harmonics < 0:
        raise SeasonalFitError(f"invalid n_harmonics={n_harmonics}")
    v = series.values
    day_mean, _ = day_of_year_stats(v)
    mean_coefs = fit_harmonics(day_mean, n_harmonics)

    days = series.calendar.day_of_year()
    X = harmonic_basis(np.arange(1, DAYS_PER_YEAR + 1), n_harmonics)
    mu_day = X @ mean_coefs.T  # (365, N)
    resid = v - mu_day[days - 1][None, :, :]
    _, day_sd = day_of_year_stats(resid)
    sd_coefs = fit_harmonics(day_sd, n_harmonics)

    overall_sd = resid.std(axis=(0, 1))
    fitted_sd = X @ sd_coefs.T
    floor = sd_floor * np.where(overall_sd > 0, overall_sd, 1.0)
    bad = np.flatnonzero((fitted_sd <= floor[None, :]).any(axis=0) | (overall_sd == 0))
    if bad.size:
        raise SeasonalFitError(f"fitted SD cycle falls below the floor at gridpoints {bad.tolist()}")
    return SeasonalModel(mean_coefs, sd_coefs, n_harmonics)


def _check(series: EnsembleSeries, model: SeasonalModel) -> None:
    if series.meta.n_points != model.n_points:
        raise DataError(f"grid mismatch: series has {series.meta.n_points} points, "
                        f"seasonal model {model.n_points}")


def standardize(series: EnsembleSeries, model: SeasonalModel) -> EnsembleSeries:
    if series.standardized:
        raise DataError("series is already standardized")
    _check(series, model)
    days = series.calendar.day_of_year()
    mu, sd = model.mean(days), model.sd(days)
    return replace(series, values=(series.values - mu[None]) / sd[None], standardized=True)


def destandardize(series: EnsembleSeries, model: SeasonalModel) -> EnsembleSeries:
    if not series.standardized:
        raise DataError("series is on the raw scale already")
    _check(series, model)
    days = series.calendar.day_of_year()
    mu, sd = model.mean(days), model.sd(days)
    return replace(series, values=series.values * sd[None] + mu[None], standardized=False)
