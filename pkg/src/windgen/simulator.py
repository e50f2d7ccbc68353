"""Synthetic realizations from a fitted seasonal + VAR(2) + regional skew-t bundle."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid_data import Calendar365, EnsembleSeries, GridMeta, load_grid, save_grid
from .regions import Partition
from .seasonal import SeasonalModel, destandardize
from .skewt import RegionSkewT, mean_offset, sample
from .var_model import VarModel

FAMILIES = ("skew-t", "gaussian")
BURN_IN = 1000
BUNDLE_FILES = ("grid.csv", "seasonal.json", "var.json", "partition.json", "skewt.json")


class SimulationError(RuntimeError):
    pass


@dataclass
class GeneratorBundle:
    meta: GridMeta
    seasonal: SeasonalModel
    var: VarModel
    partition: Partition
    regions: list[RegionSkewT]
    innovation_family: str = "skew-t"
    master_seed: int = 0

    def __post_init__(self):
        n = self.meta.n_points
        if self.seasonal.n_points != n or self.var.n_points != n or self.partition.assignment.size != n:
            raise SimulationError("bundle components were fitted on different grids")
        covered = np.sort(np.concatenate([r.members for r in self.regions])) if self.regions else np.zeros(0)
        if not np.array_equal(covered, np.arange(n)):
            raise SimulationError("regions must cover every gridpoint exactly once")
        if self.innovation_family not in FAMILIES:
            raise SimulationError(f"innovation family must be one of {FAMILIES}")

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_grid(self.meta, out / "grid.csv")
        self.seasonal.save(out / "seasonal.json")
        self.var.save(out / "var.json")
        self.partition.save(out / "partition.json")
        with open(out / "skewt.json", "w") as fh:
            json.dump([r.to_json() for r in self.regions], fh, indent=1)

    @classmethod
    def load(cls, bundle_dir, innovation_family: str = "skew-t", master_seed: int = 0) -> "GeneratorBundle":
        d = Path(bundle_dir)
        missing = [f for f in BUNDLE_FILES if not (d / f).exists()]
        if missing:
            raise SimulationError(f"bundle at {d} is missing {', '.join(missing)}")
        with open(d / "skewt.json") as fh:
            regions = [RegionSkewT.from_json(r) for r in json.load(fh)]
        return cls(load_grid(d / "grid.csv"), SeasonalModel.load(d / "seasonal.json"), VarModel.load(d / "var.json"),
                   Partition.load(d / "partition.json"), regions, innovation_family, master_seed)

    def digests(self, bundle_dir) -> dict:
        d = Path(bundle_dir)
        return {f: hashlib.sha256((d / f).read_bytes()).hexdigest() for f in BUNDLE_FILES if (d / f).exists()}


def stream(master_seed: int, realization: int, region: int) -> np.random.Generator:
    """Independent generator per (realization, region) via SeedSequence spawn keys."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(realization, region)))


def draw_innovations(bundle: GeneratorBundle, n_days: int, realization: int) -> np.ndarray:
    """Zero-mean innovations (n_days, N) on the residual scale for one realization."""
    eps = np.zeros((n_days, bundle.meta.n_points))
    for reg in bundle.regions:
        rng = stream(bundle.master_seed, realization, reg.region)
        if bundle.innovation_family == "skew-t":
            x = sample(reg.dp, n_days, rng) - (reg.dp.xi + mean_offset(reg.dp))
            eps[:, reg.members] = x * reg.scale
        else:
            L = np.linalg.cholesky(reg.covariance)
            eps[:, reg.members] = rng.standard_normal((n_days, reg.members.size)) @ L.T
    return eps


def simulate_standardized(A1, A2, eps: np.ndarray, burn_in: int = 0) -> np.ndarray:
    """Run W_t = A1 W_{t-1} + A2 W_{t-2} + eps_t from a zero start; drop ``burn_in`` days.

    ``eps`` may be (T, N) or (R, T, N) for several independent realizations at once.
    """
    e = np.asarray(eps, dtype=float)
    squeeze = e.ndim == 2
    if squeeze:
        e = e[None]
    R, T, N = e.shape
    W = np.zeros((R, T, N))
    prev1 = np.zeros((R, N))
    prev2 = np.zeros((R, N))
    A1T, A2T = np.asarray(A1).T, np.asarray(A2).T
    for t in range(T):
        cur = prev1 @ A1T + prev2 @ A2T + e[:, t]
        W[:, t] = cur
        prev2, prev1 = prev1, cur
    W = W[:, burn_in:]
    return W[0] if squeeze else W


def simulate(bundle: GeneratorBundle, n_realizations: int, n_years: int, burn_in: int = BURN_IN,
             start_year: int = 1, standardized: bool = False) -> EnsembleSeries:
    """Independent synthetic realizations on the raw (m/s) scale.

    Each realization starts from zero on the standardized scale, discards
    ``burn_in`` days and is mapped back through the seasonal cycles.
    """
    if not bundle.var.stable:
        raise SimulationError(f"VAR is not stable (max modulus {bundle.var.max_modulus:.4f}); refusing to simulate")
    if burn_in < 0 or n_realizations < 0 or n_years < 1:
        raise SimulationError("burn_in and n_realizations must be nonnegative and n_years positive")
    cal = Calendar365(start_year, n_years)
    T = cal.n_days + burn_in
    N = bundle.meta.n_points
    eps = np.stack([draw_innovations(bundle, T, r) for r in range(n_realizations)]) if n_realizations \
        else np.zeros((0, T, N))
    W = simulate_standardized(bundle.var.A1, bundle.var.A2, eps, burn_in)
    out = EnsembleSeries(bundle.meta, cal, W, standardized=True)
    return out if standardized else destandardize(out, bundle.seasonal)
