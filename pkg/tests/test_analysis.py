import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_series
from windgen.analysis import (
    DJF, JJA, MAM, SON, AnalysisError, SeasonDef, WpdConfig, acf, ensemble_acf, ensemble_excursions, excursions,
    hub_speed, qq_table, run_lengths, seasonal_wpd_stats, wpd, wpd_daily, write_qq_csv,
)


class TestAcf:
    def test_lag_zero_and_white_noise(self, rng):
        T = 20_000
        r = acf(rng.standard_normal(T), 100)
        assert r[0] == 1.0
        assert np.mean(np.abs(r[1:]) < 3 / np.sqrt(T)) >= 0.97

    def test_ar1(self, rng):
        from scipy import signal
        x = signal.lfilter([1.0], [1.0, -0.7], rng.standard_normal(100_500))[500:]
        r = acf(x, 10)
        assert np.allclose(r, 0.7 ** np.arange(11), atol=0.02)

    def test_matches_direct_sum(self, rng):
        x = rng.standard_normal(300)
        c = x - x.mean()
        direct = [c[: 300 - k] @ c[k:] / (c @ c) for k in range(20)]
        assert np.allclose(acf(x, 19), direct, atol=1e-12)

    def test_errors(self):
        with pytest.raises(AnalysisError):
            acf(np.ones(50), 5)
        with pytest.raises(AnalysisError):
            acf(np.arange(10.0), 5)

    def test_envelope(self, rng):
        s = make_series(rng.standard_normal((4, 730, 2)))
        env = ensemble_acf(s, 1, 20)
        assert np.all(env["min"] <= env["mean"]) and np.all(env["mean"] <= env["max"])
        assert env["curves"].shape == (4, 21)


class TestQQ:
    def test_identical(self, rng):
        s = make_series(rng.standard_normal((3, 365, 2)))
        t = qq_table(s, s, 0)
        assert np.array_equal(t[:, 1], t[:, 2])

    def test_offset(self, rng):
        v = rng.standard_normal((3, 365, 1))
        t = qq_table(make_series(v), make_series(v + 1.0), 0, [0.05, 0.5, 0.99])
        assert np.allclose(t[:, 2] - t[:, 1], 1.0, atol=1e-12)

    def test_heavy_tail_above_diagonal(self, rng):
        ref = make_series(rng.standard_normal((5, 3650, 1)))
        sim = make_series(rng.standard_t(5, (5, 3650, 1)))
        t = qq_table(ref, sim, 0, [0.99, 0.995])
        assert np.all(t[:, 2] > t[:, 1])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone(self, seed):
        rng = np.random.default_rng(seed)
        s = make_series(rng.standard_normal((2, 365, 1)))
        t = qq_table(s, make_series(rng.exponential(size=(3, 365, 1))), 0)
        assert np.all(np.diff(t[:, 1]) >= 0) and np.all(np.diff(t[:, 2]) >= 0)

    def test_csv(self, tmp_path):
        write_qq_csv(tmp_path / "qq.csv", [(0, 0.5, 1.0, 1.25)])
        assert (tmp_path / "qq.csv").read_text() == "point,prob,ref_q,sim_q\n0,0.5,1,1.25\n"


class TestExcursions:
    def test_hand_traced(self):
        assert excursions([1, 5, 5, 1, 5], 3, "above") == {2: 1}
        assert excursions([1, 5, 5, 1, 5], 3, "below") == {1: 1}

    def test_all_above(self):
        assert excursions([4, 5, 6], 3) == {}
        interior, censored = run_lengths([True, True, True])
        assert interior.size == 0 and censored.tolist() == [3]

    def test_bernoulli_geometric(self, rng):
        h = excursions(rng.integers(0, 2, 100_000).astype(float), 0.5)
        d = np.array(list(h))
        c = np.array(list(h.values()))
        assert (d * c).sum() / c.sum() == pytest.approx(2.0, rel=0.05)

    def test_ensemble_sum(self):
        s = make_series(np.array([[1, 5, 5, 1, 5, 1, 1] + [1] * 358, [1, 5, 1, 5, 5, 1, 5] + [1] * 358],
                                 dtype=float)[:, :, None])
        assert ensemble_excursions(s, 0, 3) == {1: 3, 2: 2}

    def test_errors(self):
        with pytest.raises(AnalysisError):
            excursions([1, 2], np.nan)
        with pytest.raises(AnalysisError):
            excursions([1, 2], 1, "sideways")


class TestWpd:
    def test_hub_height_reference(self):
        cfg = WpdConfig(hub_height=10.0, ref_height=10.0)
        assert wpd(10.0, cfg) == 612.5

    def test_height_factor(self):
        cfg = WpdConfig()
        assert cfg.height_factor == pytest.approx(1.3459002, abs=1e-6)
        assert hub_speed(5.0) == pytest.approx(6.72950, abs=1e-5)
        assert wpd(5.0) == pytest.approx(0.5 * 1.225 * (5 * 8 ** (1 / 7)) ** 3, rel=1e-14)
        assert wpd(5.0) == pytest.approx(186.66, abs=0.01)

    def test_negative_clamped(self):
        assert wpd(-0.5) == 0.0

    @settings(max_examples=50)
    @given(st.floats(0.0, 40.0), st.floats(0.1, 5.0))
    def test_cube_scaling(self, w, c):
        assert wpd(c * w) == pytest.approx(c ** 3 * wpd(w), rel=1e-12, abs=1e-12)

    def test_config_errors(self):
        for kw in ({"hub_height": 0.0}, {"ref_height": -1.0}, {"exponent": 0.0},
                   {"negative_speed_policy": "reflect"}):
            with pytest.raises(AnalysisError):
                WpdConfig(**kw)

    def test_standardized_rejected(self):
        with pytest.raises(AnalysisError):
            wpd_daily(make_series(np.zeros((1, 365, 1)), standardized=True))


class TestSeasons:
    def test_lengths(self):
        assert MAM.days.size == 92 and JJA.days.size == 92
        assert MAM.days[0] == 60 and JJA.days[-1] == 243
        allday = np.sort(np.concatenate([s.days for s in (DJF, MAM, JJA, SON)]))
        assert np.array_equal(allday, np.arange(1, 366))

    def test_bad_season(self):
        with pytest.raises(AnalysisError):
            SeasonDef("X", ((300, 400),))
        with pytest.raises(AnalysisError):
            SeasonDef("Y", ((1, 10), (5, 20)))


class TestSeasonalStats:
    def test_constant(self):
        out = seasonal_wpd_stats(np.full((2, 365 * 5, 3), 7.0), MAM, 1, 5)
        assert np.all(out["sd"] == 0)
        assert out["n_days"] == 92

    def test_clt(self, rng):
        m, s, R, Y = 100.0, 20.0, 200, 30
        daily = rng.normal(m, s, (R, 365 * Y, 1))
        out = seasonal_wpd_stats(daily, JJA, 1, Y)
        assert out["summary"]["median"][0] == pytest.approx(s / np.sqrt(92), rel=0.1)
        assert out["summary"]["mean_wpd"][0] == pytest.approx(m, rel=0.01)

    def test_identical_realizations(self, rng):
        one = rng.normal(50, 5, (1, 365 * 4, 2))
        summ = seasonal_wpd_stats(np.concatenate([one, one]), MAM, 1, 4)["summary"]
        assert np.array_equal(summ["min"], summ["max"]) and np.array_equal(summ["median"], summ["min"])

    def test_window(self, rng):
        daily = rng.normal(size=(1, 365 * 6, 1))
        daily[:, : 365 * 3] += 1000.0
        out = seasonal_wpd_stats(daily, MAM, 14, 3, start_year=11)
        assert np.all(out["mean"] < 10)
        with pytest.raises(AnalysisError):
            seasonal_wpd_stats(daily, MAM, 1, 1)
        with pytest.raises(AnalysisError):
            seasonal_wpd_stats(daily, MAM, 14, 5, start_year=11)
