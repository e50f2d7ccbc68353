"""Neighbor-restricted VAR(2) estimation for standardized gridded series.

The restricted least-squares problem is never assembled as the full
Kronecker system. All cross products come from the stacked lag matrix
``Z_t = (W_{t-1}, W_{t-2})``; under OLS each equation row is solved on its own
regressor subset, under GLS the coupled normal equations are built blockwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .grid_data import EnsembleSeries, GridMeta

SCHEMES = ("stencil", "diagonal", "dense")


class VarFitError(ValueError):
    pass


@dataclass(frozen=True)
class Restrictions:
    """Allowed nonzero entries of (A1, A2) as ``(matrix, row, col)`` triplets."""

    n_points: int
    entries: tuple[tuple[str, int, int], ...]

    @property
    def M(self) -> int:
        return len(self.entries)

    def row_columns(self, i: int) -> np.ndarray:
        """Regressor columns of equation ``i`` in the stacked lag vector (A1 cols then A2 cols + N)."""
        n = self.n_points
        return np.array([j if m == "A1" else n + j for m, r, j in self.entries if r == i], dtype=int)

    def selection_matrix(self) -> np.ndarray:
        """Dense (2N^2 x M) matrix R with vec(B) = R gamma, B = (A1, A2) column-major."""
        n = self.n_points
        R = np.zeros((2 * n * n, self.M))
        for k, (m, i, j) in enumerate(self.entries):
            col = j if m == "A1" else n + j
            R[col * n + i, k] = 1.0
        return R

    def mask(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_points
        m1 = np.zeros((n, n), dtype=bool)
        m2 = np.zeros((n, n), dtype=bool)
        for m, i, j in self.entries:
            (m1 if m == "A1" else m2)[i, j] = True
        return m1, m2


def build_restrictions(meta: GridMeta, scheme: str = "stencil") -> Restrictions:
    """Zero pattern for the VAR(2) coefficient matrices.

    ``stencil``: A1 holds self plus N/S/E/W neighbors, A2 is diagonal.
    ``diagonal``: both matrices diagonal. ``dense``: unrestricted.
    """
    n = meta.n_points
    entries = []
    for i in range(n):
        if scheme == "stencil":
            cols = sorted({i, *meta.neighbors(i)})
            entries += [("A1", i, j) for j in cols]
            entries.append(("A2", i, i))
        elif scheme == "diagonal":
            entries += [("A1", i, i), ("A2", i, i)]
        elif scheme == "dense":
            entries += [("A1", i, j) for j in range(n)]
            entries += [("A2", i, j) for j in range(n)]
        else:
            raise ValueError(f"unknown restriction scheme {scheme!r}; expected one of {SCHEMES}")
    return Restrictions(n, tuple(entries))


@dataclass
class VarModel:
    A1: np.ndarray
    A2: np.ndarray
    restrictions: Restrictions
    estimator: str = "OLS"
    residuals: np.ndarray | None = None  # (R, T-2, N)
    stderr: np.ndarray | None = None     # per restriction entry
    max_modulus: float = field(default=np.nan)
    stable: bool = False

    def __post_init__(self):
        if np.isnan(self.max_modulus):
            self.stable, self.max_modulus = check_stability(self)

    @property
    def n_points(self) -> int:
        return self.A1.shape[0]

    def coefficients(self) -> np.ndarray:
        return np.array([(self.A1 if m == "A1" else self.A2)[i, j] for m, i, j in self.restrictions.entries])

    def to_json(self) -> dict:
        triplets = [{"matrix": m, "i": i, "j": j, "value": float((self.A1 if m == "A1" else self.A2)[i, j])}
                    for m, i, j in self.restrictions.entries]
        return {"n_points": self.n_points, "estimator": self.estimator,
                "max_modulus": float(self.max_modulus), "stable": bool(self.stable),
                "coefficients": triplets}

    @classmethod
    def from_json(cls, obj: dict) -> "VarModel":
        n = int(obj["n_points"])
        A1, A2 = np.zeros((n, n)), np.zeros((n, n))
        entries = []
        for c in obj["coefficients"]:
            (A1 if c["matrix"] == "A1" else A2)[c["i"], c["j"]] = c["value"]
            entries.append((c["matrix"], int(c["i"]), int(c["j"])))
        return cls(A1, A2, Restrictions(n, tuple(entries)), obj.get("estimator", "OLS"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "VarModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def companion_matrix(A1: np.ndarray, A2: np.ndarray) -> np.ndarray:
    n = A1.shape[0]
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = A1
    C[:n, n:] = A2
    C[n:, :n] = np.eye(n)
    return C


def check_stability(model) -> tuple[bool, float]:
    """(stable, max |eigenvalue|) of the VAR(2) companion matrix."""
    A1, A2 = model.A1, model.A2
    if A1.size == 0:
        return True, 0.0
    ev = np.linalg.eigvals(companion_matrix(A1, A2))
    m = float(np.max(np.abs(ev)))
    return m < 1.0, m


def _lag_arrays(values: np.ndarray):
    """Stacked targets W_t and lags Z_t = (W_{t-1}, W_{t-2}) over members, t = 3..T."""
    R, T, N = values.shape
    if T < 3:
        raise VarFitError("need at least 3 days per member")
    y = values[:, 2:, :].reshape(-1, N)
    Z = np.concatenate([values[:, 1:-1, :], values[:, :-2, :]], axis=2).reshape(-1, 2 * N)
    return y, Z


def _solve_spd(G: np.ndarray, b: np.ndarray, labels) -> np.ndarray:
    try:
        c = linalg.cho_factor(G)
        return linalg.cho_solve(c, b)
    except linalg.LinAlgError:
        pass
    _, _, piv = linalg.qr(G, pivoting=True)
    rank = np.linalg.matrix_rank(G)
    bad = [labels[k] for k in sorted(piv[rank:])]
    raise VarFitError(f"singular normal matrix; deficient columns {bad}")


def fit_var(series: EnsembleSeries | np.ndarray, restr: Restrictions, estimator: str = "OLS",
            sigma: np.ndarray | None = None) -> VarModel:
    """Restricted least squares for W_t = A1 W_{t-1} + A2 W_{t-2} + e_t.

    Training members are pooled as independent replicates sharing (A1, A2).
    With ``estimator="GLS"`` the innovation covariance is ``sigma`` if given,
    otherwise the OLS residual covariance (a single refinement step).
    """
    if isinstance(series, EnsembleSeries):
        if not series.standardized:
            raise VarFitError("VAR must be fitted to the standardized series")
        values = series.values
    else:
        values = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(values)):
        raise VarFitError("non-finite input to VAR fit")
    estimator = estimator.upper()
    if estimator not in ("OLS", "GLS"):
        raise ValueError(f"unknown estimator {estimator!r}")
    R, T, N = values.shape
    if N != restr.n_points:
        raise VarFitError("restrictions were built for a different grid")
    y, Z = _lag_arrays(values)
    n_obs = y.shape[0]
    if n_obs < restr.M / N + 1:
        raise VarFitError(f"too few observations ({n_obs}) for {restr.M} coefficients")
    ZZ = Z.T @ Z
    ZY = Z.T @ y

    rows = [restr.row_columns(i) for i in range(N)]
    labels = [f"{m}[{i},{j}]" for m, i, j in restr.entries]
    entry_index = {e: k for k, e in enumerate(restr.entries)}
    row_labels = [[labels[entry_index[e]] for e in restr.entries if e[1] == i] for i in range(N)]

    gamma = np.zeros(restr.M)
    stderr = np.zeros(restr.M)
    order = [[entry_index[e] for e in restr.entries if e[1] == i] for i in range(N)]
    for i in range(N):
        cols = rows[i]
        if cols.size == 0:
            continue
        g = _solve_spd(ZZ[np.ix_(cols, cols)], ZY[cols, i], row_labels[i])
        gamma[order[i]] = g

    A1, A2 = _scatter(gamma, restr)
    resid = y - Z @ np.hstack([A1, A2]).T

    if estimator == "GLS":
        S = np.cov(resid, rowvar=False, bias=True).reshape(N, N) if sigma is None else np.asarray(sigma)
        gamma = _gls(ZZ, ZY, linalg.inv(S), restr, labels)
        A1, A2 = _scatter(gamma, restr)
        resid = y - Z @ np.hstack([A1, A2]).T

    # OLS standard errors per equation under iid innovations
    for i in range(N):
        cols = rows[i]
        if cols.size == 0:
            continue
        dof = max(n_obs - cols.size, 1)
        s2 = resid[:, i] @ resid[:, i] / dof
        inv = linalg.inv(ZZ[np.ix_(cols, cols)])
        stderr[order[i]] = np.sqrt(s2 * np.diag(inv))

    model = VarModel(A1, A2, restr, estimator, resid.reshape(R, T - 2, N), stderr)
    return model


def _scatter(gamma: np.ndarray, restr: Restrictions):
    n = restr.n_points
    A1, A2 = np.zeros((n, n)), np.zeros((n, n))
    for g, (m, i, j) in zip(gamma, restr.entries):
        (A1 if m == "A1" else A2)[i, j] = g
    return A1, A2


def _gls(ZZ, ZY, Sinv, restr: Restrictions, labels) -> np.ndarray:
    # [R'(ZZ' kron Sinv)R]_{pq} = ZZ[a_p, a_q] Sinv[i_p, i_q];
    # [R'(Z kron Sinv) vec W]_p = sum_k Sinv[i_p, k] ZY[a_p, k]
    n = restr.n_points
    rows = np.array([i for _, i, _ in restr.entries])
    cols = np.array([j if m == "A1" else n + j for m, _, j in restr.entries])
    G = ZZ[np.ix_(cols, cols)] * Sinv[np.ix_(rows, rows)]
    b = np.einsum("pk,pk->p", Sinv[rows], ZY[cols])
    return _solve_spd(G, b, labels)


def residual_moments(model_or_resid) -> dict:
    """Pooled per-point skewness, excess kurtosis and the residual correlation matrix."""
    e = model_or_resid.residuals if isinstance(model_or_resid, VarModel) else np.asarray(model_or_resid)
    e = e.reshape(-1, e.shape[-1])
    c = e - e.mean(axis=0)
    m2 = (c ** 2).mean(axis=0)
    skew = (c ** 3).mean(axis=0) / m2 ** 1.5
    kurt = (c ** 4).mean(axis=0) / m2 ** 2 - 3.0
    corr = np.corrcoef(e, rowvar=False) if e.shape[1] > 1 else np.ones((1, 1))
    return {"skewness": skew, "excess_kurtosis": kurt, "corr": np.atleast_2d(corr), "sd": np.sqrt(m2)}


def significance_report(model: VarModel, level: float = 0.01) -> list[dict]:
    """Two-sided z tests per coefficient with Benjamini-Hochberg control at ``level``."""
    coef = model.coefficients()
    se = model.stderr if model.stderr is not None else np.full(coef.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = coef / se
    p = 2.0 * stats.norm.sf(np.abs(z))
    reject = benjamini_hochberg(p, level)
    return [{"matrix": m, "i": i, "j": j, "value": float(c), "stderr": float(s), "p_value": float(pv),
             "significant": bool(r)}
            for (m, i, j), c, s, pv, r in zip(model.restrictions.entries, coef, se, p, reject)]


def benjamini_hochberg(p: np.ndarray, q: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    thresh = q * np.arange(1, m + 1) / m
    below = np.flatnonzero(np.nan_to_num(p[order], nan=1.0) <= thresh)
    reject = np.zeros(m, dtype=bool)
    if below.size:
        reject[order[: below[-1] + 1]] = True
    return reject
