import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from windgen.grid_data import GridMeta, distance_matrix_km
from windgen.skewt import (
    RegionSkewT, SkewTError, SkewTParamsCP, SkewTParamsDP, b_nu, cp_to_dp, density, dp_moments,
    fit_matern, fit_region, logpdf, mardia_kurtosis, matern_corr, sample, sample_mardia_kurtosis,
    sample_skewness, univariate_moments,
)


def uni(xi, w2, alpha, nu):
    return SkewTParamsDP([xi], [[w2]], [alpha], nu)


def e_abs_t(nu):
    return 2 * integrate.quad(lambda x: x * stats.t.pdf(x, nu), 0, np.inf, epsabs=1e-13, epsrel=1e-13)[0]


def uni_cdf_table(dp, lo, hi, n=300_001):
    """CDF of a univariate skew-t on a fine grid: tail by adaptive quadrature, body by Simpson panels."""
    grid = np.linspace(lo, hi, n)
    mid = 0.5 * (grid[:-1] + grid[1:])
    f = lambda z: density(np.asarray(z)[:, None], dp)  # noqa: E731
    panels = (grid[1] - grid[0]) / 6 * (f(grid[:-1]) + 4 * f(mid) + f(grid[1:]))
    left = integrate.quad(lambda z: float(density(z, dp)), -np.inf, lo)[0]
    return grid, left + np.concatenate([[0.0], np.cumsum(panels)])


class TestDensity:
    def test_symmetric_is_student_t(self, rng):
        A = rng.standard_normal((3, 3))
        Om = A @ A.T + np.eye(3)
        xi = rng.standard_normal(3)
        dp = SkewTParamsDP(xi, Om, np.zeros(3), 6.5)
        z = rng.standard_normal((20, 3)) * 2
        ref = stats.multivariate_t(loc=xi, shape=Om, df=6.5).logpdf(z)
        assert np.allclose(logpdf(z, dp), ref, rtol=0, atol=1e-10)

    def test_univariate_at_location(self):
        for a in (-4.0, 0.0, 2.5):
            dp = uni(1.3, 4.0, a, 7.0)
            assert float(density(np.array([1.3]), dp)) == pytest.approx(stats.t.pdf(0, 7.0) / 2.0, rel=1e-12)

    def test_integrates_to_one_1d(self):
        dp = uni(0.0, 1.0, 3.0, 5.0)
        f = lambda z: float(density(z, dp))  # noqa: E731
        total = integrate.quad(f, -np.inf, 0)[0] + integrate.quad(f, 0, np.inf, epsabs=1e-12)[0]
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_integrates_to_one_2d(self):
        dp = SkewTParamsDP([0.5, -0.2], [[1.0, 0.4], [0.4, 2.0]], [2.0, -1.0], 6.0)
        # polar coordinates in the frame whitened by the Cholesky factor of Omega
        L = np.linalg.cholesky(dp.Omega)
        det = np.linalg.det(L)

        def g(r, th):
            z = dp.xi + L @ (r * np.array([np.cos(th), np.sin(th)]))
            return float(density(z, dp)) * r * det
        total = integrate.dblquad(g, 0, 2 * np.pi, 0, np.inf, epsabs=1e-11, epsrel=1e-11)[0]
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_reflection(self, rng):
        dp = SkewTParamsDP([0.3, 1.0], [[2.0, 0.5], [0.5, 1.0]], [1.5, -3.0], 9.0)
        neg = SkewTParamsDP(dp.xi, dp.Omega, -dp.alpha, dp.nu)
        z = rng.standard_normal((15, 2)) * 3
        assert np.allclose(density(z, neg), density(2 * dp.xi - z, dp), rtol=1e-12)

    def test_rejects_non_spd(self):
        with pytest.raises(SkewTError):
            SkewTParamsDP([0, 0], [[1.0, 2.0], [2.0, 1.0]], [0, 0], 5)


class TestBnu:
    def test_gaussian_limit(self):
        assert b_nu(1e6) == pytest.approx(np.sqrt(2 / np.pi), abs=1e-5)

    @pytest.mark.parametrize("nu", [3.0, 5.0, 8.0, 20.0])
    def test_quadrature(self, nu):
        assert b_nu(nu) == pytest.approx(e_abs_t(nu), abs=1e-8)

    def test_domain_edge(self):
        assert 0 < b_nu(2.0) < np.inf
        assert 1e3 < b_nu(1.0001) < np.inf
        for bad in (1.0, 0.5):
            with pytest.raises(SkewTError):
                b_nu(bad)


class TestMoments:
    def test_symmetric(self):
        Om = np.array([[2.0, 0.3], [0.3, 1.0]])
        cp = dp_moments(SkewTParamsDP([1.0, -1.0], Om, [0.0, 0.0], 10.0))
        assert np.allclose(cp.mu, [1.0, -1.0])
        assert np.allclose(cp.Sigma, 10 / 8 * Om)
        assert np.allclose(cp.gamma1, 0.0)
        assert cp.gamma2M == pytest.approx(2 * 2 * 4 / 6)

    def test_t8_kurtosis(self):
        assert dp_moments(uni(0, 1, 0, 8.0)).gamma2M == 1.5

    def test_kurtosis_undefined(self):
        with pytest.raises(SkewTError, match="kurtosis undefined"):
            dp_moments(uni(0, 1, 1, 4.0))

    @pytest.mark.parametrize("alpha,nu", [(2.0, 10.0), (-5.0, 7.0), (0.7, 30.0)])
    def test_univariate_against_quadrature(self, alpha, nu):
        dp = uni(0.4, 2.25, alpha, nu)
        f = lambda z, k: z ** k * float(density(z, dp))  # noqa: E731
        raw = [sum(integrate.quad(f, a, b, args=(k,), epsabs=1e-12, limit=200)[0]
                   for a, b in ((-np.inf, 0.4), (0.4, np.inf))) for k in range(1, 5)]
        m1 = raw[0]
        var = raw[1] - m1 ** 2
        m3 = raw[2] - 3 * m1 * raw[1] + 2 * m1 ** 3
        m4 = raw[3] - 4 * m1 * raw[2] + 6 * m1 ** 2 * raw[1] - 3 * m1 ** 4
        cp = dp_moments(dp)
        assert cp.mu[0] == pytest.approx(m1, abs=1e-7)
        assert cp.Sigma[0, 0] == pytest.approx(var, rel=1e-7)
        assert cp.gamma1[0] == pytest.approx(m3 / var ** 1.5, abs=1e-6)
        assert cp.gamma2M == pytest.approx(m4 / var ** 2 - 3, abs=1e-5)

    def test_mardia_reduces_to_univariate(self):
        for delta in (0.0, 0.3, -0.8, 0.99):
            for nu in (5.0, 9.0, 40.0):
                m, var, _, g2 = univariate_moments(delta, nu)
                assert mardia_kurtosis(1, nu, m ** 2 / var) == pytest.approx(g2, rel=1e-12, abs=1e-14)


class TestCpToDp:
    def test_symmetric(self):
        d, nu = 3, 11.0
        Sigma = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.5], [0.2, 0.5, 1.0]])
        res = cp_to_dp(SkewTParamsCP(np.zeros(d), Sigma, np.zeros(d), 2 * d * (d + 2) / (nu - 4)))
        assert res.converged
        assert res.dp.nu == pytest.approx(nu, abs=1e-6)
        assert np.allclose(res.dp.delta, 0.0, atol=1e-6)

    def test_round_trip(self):
        Ob = np.array([[1.0, 0.3, 0.1], [0.3, 1.0, 0.4], [0.1, 0.4, 1.0]])
        w = np.array([1.0, 2.0, 0.5])
        dp = SkewTParamsDP([0.1, 0.2, -0.3], Ob * np.outer(w, w), [1.0, -2.0, 0.5], 9.0)
        res = cp_to_dp(dp_moments(dp))
        assert res.converged
        assert res.dp.nu == pytest.approx(9.0, abs=1e-4)
        assert np.allclose(res.dp.delta, dp.delta, atol=1e-4)
        assert np.allclose(res.dp.alpha, dp.alpha, atol=1e-3)
        assert np.allclose(res.dp.xi, dp.xi, atol=1e-4)

    def test_large_nu_target(self):
        # 6 / (nu - 4) = 0.01 has the exact solution nu = 604
        res = cp_to_dp(SkewTParamsCP([0.0], [[1.0]], [0.0], 0.01))
        assert res.converged
        assert res.dp.nu == pytest.approx(604.0, rel=1e-4)

    def test_infeasible_target(self):
        res = cp_to_dp(SkewTParamsCP([0.0], [[1.0]], [0.0], -0.3))
        assert not res.converged
        assert res.distance > 1e-3

    def test_reflection(self):
        Sigma = np.array([[1.0, 0.4], [0.4, 1.0]])
        a = cp_to_dp(SkewTParamsCP([0, 0], Sigma, [0.4, 0.1], 2.0)).dp
        b = cp_to_dp(SkewTParamsCP([0, 0], Sigma, [-0.4, -0.1], 2.0)).dp
        assert np.allclose(a.alpha, -b.alpha, atol=1e-5)
        assert a.nu == pytest.approx(b.nu, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4), st.floats(5.0, 40.0))
def test_cp_round_trip_property(seed, d, nu):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    Om = A @ A.T + 0.5 * np.eye(d)
    dp = SkewTParamsDP(rng.standard_normal(d), Om, rng.uniform(-3, 3, d), nu)
    cp = dp_moments(dp)
    res = cp_to_dp(cp)
    back = dp_moments(res.dp)
    assert np.allclose(back.gamma1, cp.gamma1, atol=1e-4)
    assert back.gamma2M == pytest.approx(cp.gamma2M, abs=1e-4)
    assert np.allclose(back.mu, cp.mu, atol=1e-8)
    assert np.allclose(back.Sigma, cp.Sigma, atol=1e-8)


class TestMatern:
    def test_values(self):
        assert matern_corr(0.0, 123.0) == 1.0
        assert matern_corr(300.0, 300.0) == pytest.approx(2 / np.e, abs=1e-12)

    def test_general_kappa_matches_closed_form(self):
        h = np.array([0.0, 10.0, 250.0, 900.0])
        from scipy import special
        x = h[1:] / 200.0
        general = 2 ** (1 - 1.5) / special.gamma(1.5) * x ** 1.5 * special.kv(1.5, x)
        assert np.allclose(matern_corr(h[1:], 200.0, 1.5), general, rtol=1e-12)
        assert np.allclose(matern_corr(h, 200.0, 2.5)[0], 1.0)

    def test_fit_recovers_range(self):
        meta = GridMeta.lattice(4, 4)
        H = distance_matrix_km(meta)
        assert fit_matern(matern_corr(H, 300.0), H) == pytest.approx(300.0, abs=1.0)

    def test_zero_distances(self):
        with pytest.raises(SkewTError):
            fit_matern(np.eye(2), np.zeros((2, 2)))


class TestSampler:
    def test_gaussian_limit(self, rng):
        Om = np.array([[1.0, 0.6], [0.6, 2.0]])
        x = sample(SkewTParamsDP([1.0, -2.0], Om, [0.0, 0.0], 1e6), 1_000_000, rng)
        assert np.allclose(x.mean(axis=0), [1.0, -2.0], atol=5e-3)
        assert np.allclose(np.cov(x, rowvar=False), Om, atol=1e-2)

    def test_mean(self, rng):
        dp = SkewTParamsDP([0.0, 1.0], [[1.0, 0.3], [0.3, 1.5]], [2.0, 0.0], 7.0)
        x = sample(dp, 2_000_000, rng)
        se = x.std(axis=0) / np.sqrt(x.shape[0])
        assert np.all(np.abs(x.mean(axis=0) - dp_moments(dp).mu) < 4 * se)

    def test_margin_ks(self, rng):
        Ob = np.array([[1.0, 0.5], [0.5, 1.0]])
        dp = SkewTParamsDP([0.0, 0.0], Ob, [3.0, -1.0], 6.0)
        x = sample(dp, 1_000_000, rng)
        for i in range(2):
            d_i = dp.delta[i]
            marg = uni(0.0, 1.0, d_i / np.sqrt(1 - d_i ** 2), 6.0)
            grid, cdf = uni_cdf_table(marg, -15, 15)
            xs = np.sort(x[:, i])
            xs = xs[(xs > grid[0]) & (xs < grid[-1])]
            F = np.interp(xs, grid, cdf)
            n = x.shape[0]
            lo = np.searchsorted(np.sort(x[:, i]), xs, side="left")
            ks = max(np.max(np.abs((lo + 1) / n - F)), np.max(np.abs(lo / n - F)))
            assert ks < 0.002

    def test_margin_moments(self, rng):
        Ob = np.array([[1.0, 0.2, -0.3], [0.2, 1.0, 0.4], [-0.3, 0.4, 1.0]])
        dp = SkewTParamsDP(np.zeros(3), Ob, [2.0, -1.0, 0.5], 25.0)
        x = sample(dp, 1_000_000, rng)
        _, var, g1, _ = univariate_moments(dp.delta, 25.0)
        assert np.allclose(x.var(axis=0), var, rtol=0.01)
        assert np.allclose(sample_skewness(x), g1, atol=0.03)

    def test_reproducible(self):
        dp = uni(0, 1, 1, 5)
        a = sample(dp, 100, np.random.default_rng(3))
        b = sample(dp, 100, np.random.default_rng(3))
        assert np.array_equal(a, b)


class TestMardiaSample:
    def test_gaussian_null(self, rng):
        x = rng.standard_normal((100_000, 4)) @ np.array([[1, 0, 0, 0], [0.5, 1, 0, 0], [0, 0, 2, 0], [0, 1, 0, 1.0]])
        assert abs(sample_mardia_kurtosis(x)) < 0.1

    def test_converges_to_closed_form(self):
        dp = SkewTParamsDP([0, 0], [[1.0, 0.3], [0.3, 1.0]], [2.0, -1.0], 20.0)
        target = dp_moments(dp).gamma2M
        rmse = []
        for n in (20_000, 80_000):
            errs = [sample_mardia_kurtosis(sample(dp, n, np.random.default_rng(500 + k))) - target
                    for k in range(40)]
            rmse.append(np.sqrt(np.mean(np.square(errs))))
        assert 1.4 < rmse[0] / rmse[1] < 3.0


@pytest.fixture(scope="module")
def geometry():
    H = distance_matrix_km(GridMeta.lattice(2, 2))
    Ob = matern_corr(H, 250.0)
    np.fill_diagonal(Ob, 1.0)
    return H, Ob


class TestFitRegion:
    def test_known_skew_t(self, geometry):
        H, Ob = geometry
        dp = SkewTParamsDP(np.zeros(4), Ob, [3.0, 1.0, 0.0, -1.0], 8.0)
        x = sample(dp, 100_000, np.random.default_rng(21))
        reg = fit_region(x, H, region=2, members=np.array([5, 6, 9, 10]))
        assert reg.dp.nu == pytest.approx(8.0, abs=1.5)
        assert np.allclose(dp_moments(reg.dp).gamma1, dp_moments(dp).gamma1, atol=0.05)
        assert reg.region == 2 and reg.members.tolist() == [5, 6, 9, 10]
        assert reg.diagnostics["n_obs"] == 100_000

    def test_gaussian_null(self, geometry):
        H, Ob = geometry
        n = 100_000
        x = np.random.default_rng(22).standard_normal((n, 4)) @ np.linalg.cholesky(Ob).T
        reg = fit_region(x, H)
        assert reg.dp.nu > 50
        # implied marginal skewness stays within sampling noise of zero
        assert np.all(np.abs(dp_moments(reg.dp).gamma1) < 4 * np.sqrt(6 / n))

    def test_symmetric_sample_gives_no_skew(self, geometry):
        H, Ob = geometry
        half = np.random.default_rng(23).standard_normal((50_000, 4)) @ np.linalg.cholesky(Ob).T
        reg = fit_region(np.concatenate([half, -half]), H)
        assert reg.dp.nu > 50
        assert np.all(np.abs(reg.dp.alpha) < 0.2)

    def test_needs_two_points(self):
        with pytest.raises(SkewTError):
            fit_region(np.zeros((100, 1)), np.zeros((1, 1)))

    def test_json_round_trip(self, geometry):
        H, Ob = geometry
        dp = SkewTParamsDP(np.zeros(4), Ob, [3.0, 1.0, 0.0, -1.0], 8.0)
        reg = fit_region(sample(dp, 20_000, np.random.default_rng(24)), H)
        back = RegionSkewT.from_json(reg.to_json())
        assert np.allclose(back.dp.Omega, reg.dp.Omega) and back.dp.nu == reg.dp.nu
        assert np.allclose(back.covariance, reg.covariance)
        assert back.matern_phi == reg.matern_phi
