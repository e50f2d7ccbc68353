"""Multivariate skew-t distribution (Azzalini-Capitanio form).

Direct parameters (DP) are ``(xi, Omega, alpha, nu)`` with
``Omega = w Omega_bar w``. Centred parameters (CP) are the mean, covariance,
marginal skewness vector and Mardia's multivariate excess kurtosis. The map
DP -> CP is closed form; CP -> DP is solved numerically in ``(delta, nu)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg, optimize, special, stats

MATERN_KAPPA = 1.5


class SkewTError(ValueError):
    pass


def b_nu(nu):
    """E|T_nu| scaled mean factor ``sqrt(nu) Gamma((nu-1)/2) / (sqrt(pi) Gamma(nu/2))``."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 1):
        raise SkewTError("b_nu requires nu > 1 (the mean does not exist otherwise)")
    out = np.exp(0.5 * np.log(nu) + special.gammaln(0.5 * (nu - 1)) - 0.5 * np.log(np.pi)
                 - special.gammaln(0.5 * nu))
    return float(out) if out.ndim == 0 else out


def _is_spd(A: np.ndarray) -> bool:
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12):
        return False
    try:
        np.linalg.cholesky(A)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass(frozen=True)
class SkewTParamsDP:
    xi: np.ndarray
    Omega: np.ndarray
    alpha: np.ndarray
    nu: float

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        Om = np.atleast_2d(np.asarray(self.Omega, dtype=float))
        al = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "Omega", Om)
        object.__setattr__(self, "alpha", al)
        object.__setattr__(self, "nu", float(self.nu))
        d = xi.size
        if Om.shape != (d, d) or al.size != d:
            raise SkewTError("inconsistent dimensions in skew-t parameters")
        if not self.nu > 0:
            raise SkewTError("nu must be positive")
        if not _is_spd(Om):
            raise SkewTError("Omega must be symmetric positive definite")

    @property
    def d(self) -> int:
        return self.xi.size

    @property
    def omega(self) -> np.ndarray:
        """Scale vector (diagonal of the matrix w)."""
        return np.sqrt(np.diag(self.Omega))

    @property
    def Omega_bar(self) -> np.ndarray:
        w = self.omega
        return self.Omega / np.outer(w, w)

    @property
    def delta(self) -> np.ndarray:
        return delta_from_alpha(self.Omega_bar, self.alpha)

    def to_json(self) -> dict:
        return {"xi": self.xi.tolist(), "Omega": _lower(self.Omega), "alpha": self.alpha.tolist(),
                "nu": self.nu}

    @classmethod
    def from_json(cls, obj) -> "SkewTParamsDP":
        return cls(obj["xi"], _from_lower(obj["Omega"]), obj["alpha"], obj["nu"])


@dataclass(frozen=True)
class SkewTParamsCP:
    mu: np.ndarray
    Sigma: np.ndarray
    gamma1: np.ndarray
    gamma2M: float

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "Sigma", np.atleast_2d(np.asarray(self.Sigma, dtype=float)))
        object.__setattr__(self, "gamma1", np.atleast_1d(np.asarray(self.gamma1, dtype=float)))
        object.__setattr__(self, "gamma2M", float(self.gamma2M))
        if not _is_spd(self.Sigma):
            raise SkewTError("Sigma must be symmetric positive definite")

    @property
    def d(self) -> int:
        return self.mu.size


def _lower(A: np.ndarray) -> list:
    return [A[i, : i + 1].tolist() for i in range(A.shape[0])]


def _from_lower(rows) -> np.ndarray:
    d = len(rows)
    A = np.zeros((d, d))
    for i, r in enumerate(rows):
        A[i, : i + 1] = r
    return A + np.tril(A, -1).T


def delta_from_alpha(Omega_bar: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    Oa = Omega_bar @ alpha
    return Oa / np.sqrt(1.0 + alpha @ Oa)


def alpha_from_delta(Omega_bar: np.ndarray, delta: np.ndarray) -> np.ndarray:
    Oinv_d = linalg.solve(Omega_bar, delta, assume_a="pos")
    q = delta @ Oinv_d
    if q >= 1.0:
        raise SkewTError(f"delta is outside the admissible set (delta' Omega_bar^-1 delta = {q:.6g} >= 1)")
    return Oinv_d / np.sqrt(1.0 - q)


# -- density -----------------------------------------------------------------

def logpdf(z, dp: SkewTParamsDP) -> np.ndarray:
    """Log density at the rows of ``z`` (shape (n, d) or (d,))."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 0 or (z.ndim == 1 and z.size == dp.d)
    z = z.reshape(-1, dp.d)
    d, nu = dp.d, dp.nu
    try:
        L = np.linalg.cholesky(dp.Omega)
    except np.linalg.LinAlgError:
        raise SkewTError("Omega must be symmetric positive definite") from None
    x = z - dp.xi
    u = linalg.solve_triangular(L, x.T, lower=True)
    Q = (u ** 2).sum(axis=0)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    log_t = (special.gammaln(0.5 * (nu + d)) - special.gammaln(0.5 * nu) - 0.5 * d * np.log(nu * np.pi)
             - 0.5 * logdet - 0.5 * (nu + d) * np.log1p(Q / nu))
    arg = (x / dp.omega) @ dp.alpha * np.sqrt((nu + d) / (nu + Q))
    out = np.log(2.0) + log_t + stats.t.logcdf(arg, nu + d)
    return out[0] if single else out


def density(z, dp: SkewTParamsDP):
    return np.exp(logpdf(z, dp))


# -- moments -----------------------------------------------------------------

def univariate_moments(delta, nu):
    """Mean, variance, skewness and excess kurtosis of the standard ST(0, 1, alpha(delta), nu).

    Skewness needs nu > 3 and kurtosis nu > 4; undefined entries are nan.
    """
    delta = np.asarray(delta, dtype=float)
    b = b_nu(nu)
    m = b * delta
    var = nu / (nu - 2.0) - m ** 2
    if nu > 3:
        g1 = m * (nu * (3.0 - delta ** 2) / (nu - 3.0) - 3.0 * nu / (nu - 2.0) + 2.0 * m ** 2) / var ** 1.5
    else:
        g1 = np.full_like(m, np.nan)
    if nu > 4:
        m4 = (3.0 * nu ** 2 / ((nu - 2.0) * (nu - 4.0)) - 4.0 * m ** 2 * nu * (3.0 - delta ** 2) / (nu - 3.0)
              + 6.0 * m ** 2 * nu / (nu - 2.0) - 3.0 * m ** 4)
        g2 = m4 / var ** 2 - 3.0
    else:
        g2 = np.full_like(m, np.nan)
    return m, var, g1, g2


def mardia_kurtosis(d: int, nu: float, beta0_sq: float) -> float:
    """Mardia excess kurtosis of ST_d given ``beta0^2 = mu0' Sigma^-1 mu0`` (nu > 4)."""
    if nu <= 4:
        raise SkewTError("kurtosis undefined for nu <= 4")
    b = b_nu(nu)
    return (2.0 * d * (d + 2) / (nu - 4.0)
            + 4.0 * (d + 2) / ((nu - 3.0) * (nu - 4.0)) * beta0_sq
            + 2.0 * (2.0 * nu / ((nu - 3.0) * b ** 2) - (3.0 * (nu - 3.0) ** 2 - 6.0) / ((nu - 3.0) * (nu - 4.0)))
            * beta0_sq ** 2)


def dp_moments(dp: SkewTParamsDP) -> SkewTParamsCP:
    """Closed-form centred parameters of ``dp``."""
    nu = dp.nu
    if nu <= 4:
        raise SkewTError("kurtosis undefined for nu <= 4")
    w = dp.omega
    delta = dp.delta
    mu_z = b_nu(nu) * delta
    mu0 = w * mu_z
    mu = dp.xi + mu0
    Sigma = nu / (nu - 2.0) * dp.Omega - np.outer(mu0, mu0)
    beta0_sq = float(mu0 @ linalg.solve(Sigma, mu0, assume_a="pos"))
    _, _, g1, _ = univariate_moments(delta, nu)
    return SkewTParamsCP(mu, Sigma, g1, mardia_kurtosis(dp.d, nu, beta0_sq))


def marginal_excess_kurtosis(dp: SkewTParamsDP) -> np.ndarray:
    return univariate_moments(dp.delta, dp.nu)[3]


# -- CP -> DP ----------------------------------------------------------------

class CpToDp(NamedTuple):
    dp: SkewTParamsDP
    distance: float        # squared l2 distance between implied and target (gamma1, gamma2M)
    converged: bool        # distance below the tolerance
    n_evals: int


def _implied(delta: np.ndarray, nu: float, Sigma: np.ndarray):
    """Implied (omega, Omega_bar, gamma1, gamma2M) for given (delta, nu) and covariance."""
    b = b_nu(nu)
    var_z = nu / (nu - 2.0) - (b * delta) ** 2
    w = np.sqrt(np.diag(Sigma) / var_z)
    Ob = (nu - 2.0) / nu * (Sigma / np.outer(w, w) + b ** 2 * np.outer(delta, delta))
    mu0 = w * b * delta
    beta0_sq = float(mu0 @ linalg.solve(Sigma, mu0, assume_a="pos"))
    _, _, g1, _ = univariate_moments(delta, nu)
    return w, Ob, g1, mardia_kurtosis(delta.size, nu, beta0_sq)


def _admissibility(delta, Ob) -> float:
    """delta' Omega_bar^-1 delta, or inf when Omega_bar is not positive definite."""
    try:
        c = linalg.cho_factor(Ob)
    except linalg.LinAlgError:
        return np.inf
    return float(delta @ linalg.cho_solve(c, delta))


def _delta_for_skewness(target: float, nu: float) -> float:
    lim = 1.0 - 1e-9
    f = lambda x: univariate_moments(x, nu)[2] - target  # noqa: E731
    lo, hi = f(-lim), f(lim)
    if lo >= 0:
        return -lim
    if hi <= 0:
        return lim
    return optimize.brentq(f, -lim, lim, xtol=1e-14)


def cp_to_dp(cp: SkewTParamsCP, tol: float = 1e-10, max_iter: int = 500, nu_max: float = 1e8) -> CpToDp:
    """Numerically invert the CP map over ``(delta, nu)``.

    Minimizes the squared l2 distance between the implied and target
    ``(gamma1, gamma2M)`` in the unconstrained coordinates ``arctanh(delta)``
    and ``log(nu - 4)``. Unreachable targets return the best DP together with
    a nonzero distance instead of failing.
    """
    d = cp.d
    g1t, g2t = cp.gamma1, cp.gamma2M
    Sigma = cp.Sigma

    # start: symmetric-case nu, then per-margin delta solving the univariate skewness equation
    nu0 = 4.0 + 2.0 * d * (d + 2) / g2t if g2t > 1e-8 else 1e4
    nu0 = float(np.clip(nu0, 4.5, 1e6))
    for _ in range(50):
        delta0 = np.array([_delta_for_skewness(g, nu0) for g in g1t])
        try:
            g2_at = _implied(delta0, nu0, Sigma)[3]
        except (np.linalg.LinAlgError, ValueError):
            break
        if not np.isfinite(g2_at):
            break
        # the delta contribution raises kurtosis; relax nu when the target is exceeded
        if g2_at > g2t * (1 + 1e-3) and nu0 < 1e6:
            nu0 = min(nu0 * 1.5, 1e6)
        else:
            break
    delta0 = np.clip(delta0, -0.999, 0.999)

    log_nu_max = np.log(nu_max - 4.0)

    def unpack(theta):
        delta = np.tanh(theta[:d])
        nu = 4.0 + np.exp(np.clip(theta[d], -30.0, log_nu_max))
        return delta, nu

    def resid(theta):
        delta, nu = unpack(theta)
        _, Ob, g1, g2 = _implied(delta, nu, Sigma)
        q = _admissibility(delta, Ob)
        penalty = 0.0 if q < 1.0 - 1e-8 else 1e3 * (min(q, 1e6) - (1.0 - 1e-8) + 1e-3)
        return np.concatenate([g1 - g1t, [g2 - g2t, penalty]])

    theta0 = np.concatenate([np.arctanh(delta0), [np.log(nu0 - 4.0)]])
    n_evals = 0
    best = None
    for method in ("trf", "lm"):
        try:
            res = optimize.least_squares(resid, theta0, method=method, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                         max_nfev=max_iter * (d + 2) if method == "lm" else max_iter)
        except (ValueError, np.linalg.LinAlgError):
            continue
        n_evals += res.nfev
        if best is None or 2 * res.cost < 2 * best.cost:
            best = res
        if 2 * best.cost < tol:
            break
        theta0 = best.x
    if best is None:
        raise SkewTError("CP to DP optimizer failed to evaluate the objective")
    delta, nu = unpack(best.x)
    w, Ob, g1, g2 = _implied(delta, nu, Sigma)
    dist = float(np.sum((g1 - g1t) ** 2) + (g2 - g2t) ** 2)
    if not _is_spd(Ob) or _admissibility(delta, Ob) >= 1.0:
        raise SkewTError("implied scale matrix is not positive definite for the best (delta, nu)")
    if not np.isfinite(dist):
        raise SkewTError(f"CP to DP optimizer did not converge within {max_iter} iterations")
    alpha = alpha_from_delta(Ob, delta)
    Omega = Ob * np.outer(w, w)
    Omega = 0.5 * (Omega + Omega.T)
    xi = cp.mu - w * b_nu(nu) * delta
    return CpToDp(SkewTParamsDP(xi, Omega, alpha, nu), dist, dist < tol, n_evals)


# -- sampling ----------------------------------------------------------------

def sample(dp: SkewTParamsDP, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of ST_d via the skew-normal conditioning construction over a chi-square mixture."""
    d = dp.d
    delta = dp.delta
    Ob = dp.Omega_bar
    C = Ob - np.outer(delta, delta)
    vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
    L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    u0 = rng.standard_normal(n)
    x0 = u0[:, None] * delta[None, :] + rng.standard_normal((n, d)) @ L.T
    x = np.where(u0[:, None] > 0, x0, -x0)
    v = rng.chisquare(dp.nu, n) / dp.nu
    return dp.xi + dp.omega * x / np.sqrt(v)[:, None]


def mean_offset(dp: SkewTParamsDP) -> np.ndarray:
    """E(Y) - xi = w b_nu delta."""
    return dp.omega * b_nu(dp.nu) * dp.delta


# -- sample statistics -------------------------------------------------------

def sample_skewness(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    c = x - x.mean(axis=0)
    return (c ** 3).mean(axis=0) / (c ** 2).mean(axis=0) ** 1.5


def sample_excess_kurtosis(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    c = x - x.mean(axis=0)
    return (c ** 4).mean(axis=0) / (c ** 2).mean(axis=0) ** 2 - 3.0


def sample_mardia_kurtosis(x) -> float:
    """Sample Mardia excess kurtosis, mean of squared Mahalanobis distances minus d(d+2)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    c = x - x.mean(axis=0)
    S = c.T @ c / n
    L = np.linalg.cholesky(S)
    u = linalg.solve_triangular(L, c.T, lower=True)
    m = (u ** 2).sum(axis=0)
    return float(np.mean(m ** 2) - d * (d + 2))


# -- Matern ------------------------------------------------------------------

def matern_corr(h, phi: float, kappa: float = MATERN_KAPPA):
    """Matern correlation ``2^(1-k)/Gamma(k) (h/phi)^k K_k(h/phi)``; closed form at k = 1.5."""
    h = np.asarray(h, dtype=float)
    if phi <= 0:
        raise SkewTError("Matern range must be positive")
    x = h / phi
    if kappa == 1.5:
        return (1.0 + x) * np.exp(-x)
    if kappa == 0.5:
        return np.exp(-x)
    with np.errstate(invalid="ignore"):
        out = 2.0 ** (1 - kappa) / special.gamma(kappa) * x ** kappa * special.kv(kappa, x)
    return np.where(x == 0, 1.0, out)


def fit_matern(residual_corr, distances, kappa: float = MATERN_KAPPA) -> float:
    """Least-squares Matern range (km) over the upper triangle of a correlation matrix."""
    C = np.asarray(residual_corr, dtype=float)
    H = np.asarray(distances, dtype=float)
    if C.shape != H.shape or C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise SkewTError("correlation and distance matrices must be square and of equal shape")
    if not np.allclose(H, H.T) or np.any(np.diag(H) != 0):
        raise SkewTError("distances must be symmetric with zero diagonal")
    iu = np.triu_indices_from(H, k=1)
    h, c = H[iu], C[iu]
    if h.size == 0 or np.all(h == 0):
        raise SkewTError("cannot fit a Matern range when all distances are zero")
    hpos = h[h > 0]

    def sse(log_phi):
        return float(np.sum((c - matern_corr(h, math.exp(log_phi), kappa)) ** 2))

    grid = np.linspace(np.log(hpos.min() * 1e-2), np.log(hpos.max() * 1e2), 200)
    vals = [sse(g) for g in grid]
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(sse, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return float(math.exp(res.x if res.fun <= vals[k] else grid[k]))


# -- regional fit ------------------------------------------------------------

@dataclass
class RegionSkewT:
    region: int
    members: np.ndarray
    dp: SkewTParamsDP
    matern_phi: float
    scale: np.ndarray  # residual SD per member; simulated innovations are multiplied by it
    matern_kappa: float = MATERN_KAPPA
    diagnostics: dict = field(default_factory=dict)

    @property
    def covariance(self) -> np.ndarray:
        """Innovation covariance on the residual scale."""
        cp = dp_moments(self.dp)
        return cp.Sigma * np.outer(self.scale, self.scale)

    def to_json(self) -> dict:
        out = {"id": int(self.region), "members": [int(m) for m in self.members]}
        out.update(self.dp.to_json())
        out.update({"phi": self.matern_phi, "kappa": self.matern_kappa, "scale": self.scale.tolist(),
                    "diagnostics": self.diagnostics})
        return out

    @classmethod
    def from_json(cls, obj) -> "RegionSkewT":
        return cls(int(obj["id"]), np.asarray(obj["members"], dtype=int), SkewTParamsDP.from_json(obj),
                   float(obj["phi"]), np.asarray(obj["scale"], dtype=float), float(obj.get("kappa", 1.5)),
                   obj.get("diagnostics", {}))


def _marginal_fit_error(dp: SkewTParamsDP, g1: np.ndarray, g2: np.ndarray) -> tuple[float, float]:
    _, _, ig1, ig2 = univariate_moments(dp.delta, dp.nu)
    return float(np.mean((ig1 - g1) ** 2)), float(np.mean((ig2 - g2) ** 2))


def fit_region(residuals, distances, region: int = 1, members=None, kappa: float = MATERN_KAPPA,
               mse_threshold: float = 0.05, max_iter: int = 500) -> RegionSkewT:
    """Method-of-moments skew-t fit for one region.

    ``residuals`` is (n, d_c), pooled over days and training members. The CP is
    zero mean, a Matern correlation matrix, sample marginal skewness and
    sample Mardia kurtosis. When the implied marginal skewness misfits the
    sample by more than ``mse_threshold`` (MSE), the kurtosis target is
    replaced by the value minimizing the joint marginal (skewness, kurtosis)
    distance.
    """
    e = np.asarray(residuals, dtype=float)
    if e.ndim != 2 or e.shape[1] < 2:
        raise SkewTError("a region needs at least 2 gridpoints")
    d = e.shape[1]
    members = np.arange(d) if members is None else np.asarray(members, dtype=int)
    scale = e.std(axis=0)
    if np.any(scale <= 0):
        raise SkewTError("zero-variance residuals in region")
    z = (e - e.mean(axis=0)) / scale
    corr = np.corrcoef(z, rowvar=False)
    phi = fit_matern(corr, distances, kappa)
    Sigma = matern_corr(distances, phi, kappa)
    np.fill_diagonal(Sigma, 1.0)
    g1 = sample_skewness(z)
    g2 = sample_excess_kurtosis(z)
    g2M = sample_mardia_kurtosis(z)

    fit = cp_to_dp(SkewTParamsCP(np.zeros(d), Sigma, g1, g2M), max_iter=max_iter)
    mse1, mse2 = _marginal_fit_error(fit.dp, g1, g2)
    used, replaced = g2M, False
    if mse1 > mse_threshold:
        def joint(target):
            try:
                r = cp_to_dp(SkewTParamsCP(np.zeros(d), Sigma, g1, target), max_iter=max_iter)
            except SkewTError:
                return np.inf
            a, b = _marginal_fit_error(r.dp, g1, g2)
            return a + b

        hi = max(4.0 * abs(g2M), 2.0 * d * (d + 2), 1.0)
        grid = np.linspace(1e-3, hi, 41)
        vals = [joint(g) for g in grid]
        k = int(np.argmin(vals))
        res = optimize.minimize_scalar(joint, bounds=(grid[max(k - 1, 0)], grid[min(k + 1, 40)]),
                                       method="bounded", options={"xatol": 1e-6})
        cand = res.x if res.fun <= vals[k] else grid[k]
        alt = cp_to_dp(SkewTParamsCP(np.zeros(d), Sigma, g1, cand), max_iter=max_iter)
        a, b = _marginal_fit_error(alt.dp, g1, g2)
        if a + b < mse1 + mse2:
            fit, used, replaced, mse1, mse2 = alt, float(cand), True, a, b
    diagnostics = {"l2_distance": fit.distance, "converged": bool(fit.converged), "mse_gamma1": mse1,
                   "mse_gamma2": mse2, "gamma2M_sample": g2M, "gamma2M_used": used,
                   "gamma2M_replaced": replaced, "n_obs": int(e.shape[0])}
    return RegionSkewT(region, members, fit.dp, phi, scale, kappa, diagnostics)
