"""Known ground-truth generator bundles and the synthetic ensembles drawn from them."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy import optimize

from .grid_data import Calendar365, EnsembleSeries, GridMeta, distance_matrix_km
from .regions import Partition
from .seasonal import SeasonalModel, destandardize
from .simulator import BURN_IN, GeneratorBundle, draw_innovations, simulate_standardized
from .skewt import RegionSkewT, SkewTParamsDP, alpha_from_delta, b_nu, matern_corr
from .var_model import VarModel, build_restrictions, check_stability, companion_matrix


def stencil_coefficients(meta: GridMeta, rng: np.random.Generator, radius: float = 0.8,
                         a2_diag: float = -0.1) -> tuple[np.ndarray, np.ndarray]:
    """Random stencil A1 (positive) with diagonal A2, scaled to a target companion spectral radius."""
    n = meta.n_points
    base = np.zeros((n, n))
    for i in range(n):
        base[i, i] = rng.uniform(0.4, 0.6)
        for j in meta.neighbors(i):
            base[i, j] = rng.uniform(0.02, 0.08)
    A2 = a2_diag * np.eye(n)

    def gap(c):
        return np.max(np.abs(np.linalg.eigvals(companion_matrix(c * base, A2)))) - radius

    c = optimize.brentq(gap, 0.0, 10.0, xtol=1e-14)
    return c * base, A2


def quadrant_partition(meta: GridMeta, n_regions: int = 4) -> Partition:
    """Split the grid by the median latitude/longitude into up to four blocks."""
    lat, lon = meta.lats, meta.lons
    if n_regions == 1:
        return Partition(1, np.ones(meta.n_points, dtype=int))
    north = lat > np.median(lat)
    east = lon > np.median(lon)
    if n_regions == 2:
        labels = 1 + east.astype(int)
    elif n_regions == 4:
        labels = 1 + east.astype(int) + 2 * north.astype(int)
    else:
        raise ValueError("quadrant partition supports 1, 2 or 4 regions")
    return Partition(n_regions, labels)


def region_truth(meta: GridMeta, members: np.ndarray, region: int, nu: float, skew_strength: float,
                 innovation_sd: float, phi: float = 250.0) -> RegionSkewT:
    """Skew-t region with Matern(1.5) correlation and equal delta, scaled to a target innovation SD."""
    H = distance_matrix_km(meta, members)
    Ob = matern_corr(H, phi)
    np.fill_diagonal(Ob, 1.0)
    ones = np.ones(members.size)
    # delta = c 1 with delta' Ob^-1 delta = skew_strength (< 1)
    c = min(np.sqrt(skew_strength / (ones @ np.linalg.solve(Ob, ones))), 0.97)
    delta = c * ones
    alpha = alpha_from_delta(Ob, delta)
    var_z = nu / (nu - 2.0) - (b_nu(nu) * delta) ** 2
    w = innovation_sd / np.sqrt(var_z)
    dp = SkewTParamsDP(-w * b_nu(nu) * delta, Ob * np.outer(w, w), alpha, nu)
    return RegionSkewT(region, members, dp, phi, np.ones(members.size))


def truth_bundle(n_lat: int = 5, n_lon: int = 5, n_regions: int = 4, seed: int = 0,
                 radius: float = 0.8, unstable: bool = False, nus=(7.0, 9.0, 12.0, 8.0),
                 skew_strength: float = 0.85, innovation_sd: float = 0.6) -> GeneratorBundle:
    """Ground-truth bundle on a regular lattice with skew-t innovations.

    Region DPs are zero-mean on the residual scale with unit ``scale`` so
    that the stored DP fully describes the innovation law.
    """
    rng = np.random.default_rng(seed)
    meta = GridMeta.lattice(n_lat, n_lon)
    n = meta.n_points
    A1, A2 = stencil_coefficients(meta, rng, radius=1.005 if unstable else radius)
    var = VarModel(A1, A2, build_restrictions(meta, "stencil"))
    part = quadrant_partition(meta, n_regions)
    regions = [region_truth(meta, part.members(c), c, nus[(c - 1) % len(nus)], skew_strength, innovation_sd)
               for c in range(1, part.n_clusters + 1)]

    K = 5
    mean = np.zeros((n, 2 * K + 1))
    sd = np.zeros((n, 2 * K + 1))
    mean[:, 0] = rng.uniform(10.0, 11.5, n)
    mean[:, 1] = rng.uniform(-1.2, 1.2, n)   # sin 1
    mean[:, 2] = rng.uniform(-1.0, 1.0, n)   # cos 1
    mean[:, 3] = rng.uniform(-0.3, 0.3, n)   # sin 2
    sd[:, 0] = rng.uniform(1.2, 1.6, n)
    sd[:, 1] = rng.uniform(-0.2, 0.2, n)
    sd[:, 2] = rng.uniform(-0.2, 0.2, n)
    seasonal = SeasonalModel(mean, sd, K)
    bundle = GeneratorBundle(meta, seasonal, var, part, regions, "skew-t", seed)
    assert check_stability(var)[0] != unstable
    return bundle


def generate_ensemble(bundle: GeneratorBundle, n_members: int, n_years: int, burn_in: int = BURN_IN,
                      seed: int | None = None) -> EnsembleSeries:
    """Raw-scale ensemble from a truth bundle; unlike ``simulate`` it does not require stability."""
    seed = bundle.master_seed if seed is None else seed
    b = replace(bundle, master_seed=seed)
    if not bundle.var.stable:
        burn_in = 0
    cal = Calendar365(1, n_years)
    T = cal.n_days + burn_in
    eps = np.stack([draw_innovations(b, T, r) for r in range(n_members)])
    W = simulate_standardized(bundle.var.A1, bundle.var.A2, eps, burn_in)
    return destandardize(EnsembleSeries(bundle.meta, cal, W, standardized=True), bundle.seasonal)
