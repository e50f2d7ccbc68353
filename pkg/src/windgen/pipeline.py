"""Fit the full generator: seasonal cycles, VAR(2), regions and regional skew-t laws."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid_data import EnsembleSeries, distance_matrix_km
from .regions import Partition, build_features, cluster_ward, contiguity_report
from .seasonal import fit_seasonal, standardize
from .simulator import GeneratorBundle
from .skewt import MATERN_KAPPA, fit_region
from .var_model import build_restrictions, fit_var, residual_moments, significance_report

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class FitOptions:
    n_harmonics: int = 5
    scheme: str = "stencil"
    estimator: str = "OLS"
    n_clusters: int = 9
    feature_mode: str = "corr"
    kappa: float = MATERN_KAPPA
    mse_threshold: float = 0.05
    min_region_size: int = 2
    training_members: list | None = None
    partition: Partition | None = None


@dataclass
class FitResult:
    bundle: GeneratorBundle
    report: dict = field(default_factory=dict)


def _stage(name):
    def wrap(fn):
        def inner(*a, **k):
            try:
                return fn(*a, **k)
            except StageError:
                raise
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                raise StageError(name, exc) from exc
        return inner
    return wrap


def fit_bundle(series: EnsembleSeries, opts: FitOptions = FitOptions()) -> FitResult:
    """Run seasonal -> standardize -> VAR -> stability -> clustering -> regional skew-t fits."""
    train = series if opts.training_members is None else series.select(opts.training_members)
    log.info("fitting on members %s", list(train.realization_ids))

    seasonal = _stage("seasonal")(fit_seasonal)(train, opts.n_harmonics)
    z = _stage("standardize")(standardize)(train, seasonal)
    restr = _stage("restrictions")(build_restrictions)(train.meta, opts.scheme)
    var = _stage("var")(fit_var)(z, restr, opts.estimator)
    log.info("VAR fitted: max modulus %.4f stable=%s", var.max_modulus, var.stable)

    moments = residual_moments(var)
    if opts.partition is not None:
        part = opts.partition
        if part.assignment.size != train.meta.n_points:
            raise StageError("partition", ValueError("partition file does not match the grid"))
    else:
        feats = _stage("features")(build_features)(var.residuals, opts.feature_mode, train.meta)
        part = _stage("cluster")(cluster_ward)(feats, opts.n_clusters)
    small = [c for c, s in enumerate(part.sizes, start=1) if s < opts.min_region_size]
    if small:
        raise StageError("cluster", ValueError(f"regions {small} have fewer than {opts.min_region_size} points"))

    resid = var.residuals.reshape(-1, train.meta.n_points)
    regions = []
    for c in range(1, part.n_clusters + 1):
        members = part.members(c)
        dist = distance_matrix_km(train.meta, members)
        reg = _stage(f"skewt region {c}")(fit_region)(resid[:, members], dist, c, members, opts.kappa,
                                                      opts.mse_threshold)
        regions.append(reg)

    bundle = GeneratorBundle(train.meta, seasonal, var, part, regions)
    report = {
        "training_members": list(train.realization_ids),
        "stable": bool(var.stable),
        "max_modulus": float(var.max_modulus),
        "estimator": var.estimator,
        "n_coefficients": restr.M,
        "significance": significance_report(var),
        "residual_skewness": moments["skewness"].tolist(),
        "residual_excess_kurtosis": moments["excess_kurtosis"].tolist(),
        "cluster_sizes": part.sizes.tolist(),
        "contiguity": contiguity_report(part, train.meta),
        "regions": [{"id": r.region, "nu": r.dp.nu, "phi": r.matern_phi, **r.diagnostics} for r in regions],
    }
    return FitResult(bundle, report)
