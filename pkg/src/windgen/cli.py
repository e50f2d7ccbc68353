"""Command-line pipeline: ``windgen {synth,fit,simulate,validate,wpd}``.

Configuration is one JSON file (``--config``) with per-field overrides from
``--set key=value`` (dotted keys reach nested tables) and the ``--seed`` and
``--out`` shortcuts; flags win over the file.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis
from .grid_data import DataError, EnsembleSeries, load_grid, load_series, save_grid, save_series
from .pipeline import FitOptions, StageError, fit_bundle
from .regions import Partition
from .seasonal import SeasonalFitError
from .simulator import BURN_IN, GeneratorBundle, SimulationError, simulate
from .skewt import SkewTError
from .var_model import VarFitError

log = logging.getLogger("windgen")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid: str = "grid.csv"
    series: str = "series.csv"
    out: str = "out"
    bundle: str | None = None          # defaults to ``out`` for fit, required input for simulate
    reference: str | None = None       # validate: reference ensemble
    simulated: str | None = None       # validate: simulated ensemble
    start_year: int = 1
    allow_negative: bool = False       # accept negative speeds in fit input
    n_harmonics: int = 5
    scheme: str = "stencil"
    estimator: str = "OLS"
    n_clusters: int = 9
    feature_mode: str = "corr"
    kappa: float = 1.5
    mse_threshold: float = 0.05
    partition: str | None = None
    training_members: list | None = None
    n_realizations: int = 30
    n_years: int = 30
    burn_in: int = BURN_IN
    seed: int = 0
    family: str = "skew-t"
    points: list | None = None
    max_lag: int = 60
    thresholds: list = field(default_factory=lambda: [5.0])
    sides: list = field(default_factory=lambda: ["above", "below"])
    probs: list | None = None
    wpd: dict = field(default_factory=lambda: {"rho": 1.225, "hub_height": 80.0, "ref_height": 10.0,
                                               "exponent": 1.0 / 7.0})
    seasons: list = field(default_factory=lambda: ["MAM", "JJA"])
    window_first_year: int | None = None
    window_n_years: int | None = None
    synth: dict = field(default_factory=lambda: {"n_lat": 5, "n_lon": 5, "n_regions": 4, "n_members": 3,
                                                 "n_years": 50, "unstable": False})

    @classmethod
    def build(cls, path=None, overrides=()) -> "RunConfig":
        data = {}
        if path:
            try:
                with open(path) as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        for key, value in overrides:
            cfg.set(key, value)
        cfg.check()
        return cfg

    def set(self, key: str, raw) -> None:
        value = _parse_value(raw) if isinstance(raw, str) else raw
        head, _, rest = key.partition(".")
        if head not in {f.name for f in fields(self)}:
            raise ConfigError(f"unknown config key {key!r}")
        if rest:
            table = getattr(self, head)
            if not isinstance(table, dict):
                raise ConfigError(f"{head} is not a table")
            table[rest] = value
        else:
            setattr(self, head, value)

    def check(self) -> None:
        if self.n_harmonics < 0:
            raise ConfigError("n_harmonics must be nonnegative")
        if self.scheme not in ("stencil", "diagonal", "dense"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if str(self.estimator).upper() not in ("OLS", "GLS"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be at least 1")
        if self.family not in ("skew-t", "gaussian"):
            raise ConfigError(f"unknown innovation family {self.family!r}")
        if self.n_realizations < 0 or self.n_years < 1 or self.burn_in < 0:
            raise ConfigError("n_realizations and burn_in must be >= 0 and n_years >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for s in self.seasons:
            if s not in analysis.SEASONS:
                raise ConfigError(f"unknown season {s!r}")
        try:
            analysis.WpdConfig(**self.wpd_kwargs())
        except (TypeError, analysis.AnalysisError) as exc:
            raise ConfigError(f"wpd: {exc}") from None

    def wpd_kwargs(self) -> dict:
        return {"rho": self.wpd.get("rho", 1.225), "hub_height": self.wpd.get("hub_height", 80.0),
                "ref_height": self.wpd.get("ref_height", 10.0), "exponent": self.wpd.get("exponent", 1.0 / 7.0)}


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _require(path, what) -> Path:
    if path is None:
        raise ConfigError(f"{what} path is not configured")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _dump(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


# -- commands ----------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> Path:
    """Write a known truth bundle plus a raw ensemble drawn from it."""
    from .synth import generate_ensemble, truth_bundle

    s = {"n_lat": 5, "n_lon": 5, "n_regions": 4, "n_members": 3, "n_years": 50, "unstable": False, **cfg.synth}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tb = truth_bundle(s["n_lat"], s["n_lon"], s["n_regions"], seed=int(cfg.seed), unstable=bool(s["unstable"]))
    tb.save(out / "truth")
    ens = generate_ensemble(tb, int(s["n_members"]), int(s["n_years"]), seed=int(cfg.seed) + 1)
    save_grid(tb.meta, out / "grid.csv")
    save_series(ens, out / "series.csv")
    _dump({"seed": int(cfg.seed), **s}, out / "synth.json")
    return out


def cmd_fit(cfg: RunConfig) -> Path:
    """Fit a generator bundle to a raw ensemble and write fit_report.json."""
    grid = _require(cfg.grid, "grid file")
    series = load_series(_require(cfg.series, "series file"), grid, cfg.start_year, cfg.allow_negative)
    if cfg.training_members is not None:
        bad = [m for m in cfg.training_members if m not in series.realization_ids]
        if bad:
            raise ConfigError(f"training member ids {bad} not in series (have {list(series.realization_ids)})")
    part = Partition.load(_require(cfg.partition, "partition file")) if cfg.partition else None
    opts = FitOptions(cfg.n_harmonics, cfg.scheme, str(cfg.estimator).upper(), cfg.n_clusters, cfg.feature_mode,
                      cfg.kappa, cfg.mse_threshold, training_members=cfg.training_members, partition=part)
    result = fit_bundle(series, opts)
    out = Path(cfg.bundle or cfg.out)
    result.bundle.save(out)
    _dump(result.report, out / "fit_report.json")
    if not result.report["stable"]:
        log.warning("fitted VAR is unstable (max modulus %.4f); simulate will refuse this bundle",
                    result.report["max_modulus"])
    return out


def cmd_simulate(cfg: RunConfig) -> Path:
    """Draw synthetic realizations from a saved bundle."""
    bdir = Path(cfg.bundle or cfg.out)
    bundle = GeneratorBundle.load(_require(bdir, "bundle directory"), cfg.family, int(cfg.seed))
    sim = simulate(bundle, cfg.n_realizations, cfg.n_years, cfg.burn_in, cfg.start_year)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_series(sim, out / "series.csv")
    if bdir.resolve() != out.resolve():
        save_grid(bundle.meta, out / "grid.csv")
    _dump({"seed": int(cfg.seed), "bundle": str(bdir), "bundle_sha256": bundle.digests(bdir),
           "burn_in": cfg.burn_in, "family": cfg.family, "n_realizations": cfg.n_realizations,
           "n_years": cfg.n_years, "start_year": cfg.start_year,
           "seed_rule": "numpy SeedSequence(seed, spawn_key=(realization, region))"}, out / "manifest.json")
    return out


def _points(cfg: RunConfig, n: int) -> list[int]:
    pts = list(range(n)) if cfg.points is None else [int(p) for p in cfg.points]
    bad = [p for p in pts if not 0 <= p < n]
    if bad:
        raise ConfigError(f"points {bad} are not on the grid (0..{n - 1})")
    return pts


def cmd_validate(cfg: RunConfig) -> Path:
    """ACF envelopes, QQ pairs and excursion histograms for reference vs simulated ensembles."""
    grid = load_grid(_require(cfg.grid, "grid file"))
    ref = load_series(_require(cfg.reference or cfg.series, "reference series"), grid, cfg.start_year,
                      allow_negative=True)
    sim = load_series(_require(cfg.simulated, "simulated series"), grid, cfg.start_year, allow_negative=True)
    pts = _points(cfg, grid.n_points)
    T = min(ref.calendar.n_days, sim.calendar.n_days)
    if cfg.max_lag >= T / 2:
        raise ConfigError(f"max_lag={cfg.max_lag} must be below T/2={T / 2}")
    probs = analysis.DEFAULT_PROBS if cfg.probs is None else np.asarray(cfg.probs, dtype=float)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    acf_rows, qq_rows, exc_rows = [], [], []
    for p in pts:
        for name, ens in (("ref", ref), ("sim", sim)):
            env = analysis.ensemble_acf(ens, p, cfg.max_lag)
            for stat in ("mean", "min", "max"):
                acf_rows += [(p, int(k), f"{name}_{stat}", float(v)) for k, v in zip(env["lag"], env[stat])]
        qq_rows += [(p, float(a), float(b), float(c)) for a, b, c in analysis.qq_table(ref, sim, p, probs)]
        for thr in cfg.thresholds:
            for side in cfg.sides:
                for name, ens in (("ref", ref), ("sim", sim)):
                    hist = analysis.ensemble_excursions(ens, p, float(thr), side)
                    exc_rows += [(p, float(thr), side, name, k, v) for k, v in hist.items()]
    analysis.write_acf_csv(out / "acf.csv", acf_rows)
    analysis.write_qq_csv(out / "qq.csv", qq_rows)
    analysis.write_excursions_csv(out / "excursions.csv", exc_rows)
    return out


def cmd_wpd(cfg: RunConfig) -> Path:
    """Seasonal wind power density statistics at hub height."""
    grid = load_grid(_require(cfg.grid, "grid file"))
    series = load_series(_require(cfg.series, "series file"), grid, cfg.start_year, allow_negative=True)
    wcfg = analysis.WpdConfig(**cfg.wpd_kwargs())
    daily = analysis.wpd_daily(series, wcfg)
    n_years = series.calendar.n_years
    first = cfg.window_first_year if cfg.window_first_year is not None else cfg.start_year + max(n_years - 30, 0)
    length = cfg.window_n_years if cfg.window_n_years is not None else min(30, n_years)
    if first < cfg.start_year or first + length > cfg.start_year + n_years:
        raise ConfigError(f"window {first}..{first + length - 1} outside the calendar "
                          f"{cfg.start_year}..{cfg.start_year + n_years - 1}")
    rows, meta = [], {"window": [first, first + length - 1], "wpd": asdict(wcfg), "seasons": {}}
    for name in cfg.seasons:
        season = analysis.SEASONS[name]
        st = analysis.seasonal_wpd_stats(daily, season, first, length, cfg.start_year)
        meta["seasons"][name] = {"n_days": st["n_days"], "ranges": season.ranges}
        for stat, arr in st["summary"].items():
            rows += [(name, st["n_days"], p, stat, float(v)) for p, v in enumerate(arr)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_wpd_csv(out / "wpd_stats.csv", rows)
    _dump(meta, out / "wpd_meta.json")
    return out


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "simulate": cmd_simulate, "validate": cmd_validate,
            "wpd": cmd_wpd}

CONFIG_ERRORS = (ConfigError, DataError, FileNotFoundError, analysis.AnalysisError)
NUMERIC_ERRORS = (StageError, VarFitError, SkewTError, SeasonalFitError, SimulationError, ArithmeticError,
                  np.linalg.LinAlgError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="windgen", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().split("\n")[0])
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config field; repeatable")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = []
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            overrides.append((key.strip(), value))
        if args.seed is not None:
            overrides.append(("seed", args.seed))
        if args.out is not None:
            overrides.append(("out", args.out))
        cfg = RunConfig.build(args.config, overrides)
        out = COMMANDS[args.command](cfg)
    except CONFIG_ERRORS as exc:
        print(f"windgen {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"windgen {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("wrote %s", out)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
