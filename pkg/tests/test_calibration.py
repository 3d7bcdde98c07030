import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from defensive_forecasting.calibration import (RoundedForecaster, binned_calibration_error, bump, merge_residuals,
                                               round_forecast, round_forecasts, rounded_calibration_bound,
                                               rounding_probabilities, smce_bound, smce_headline,
                                               smooth_calibration_error)
from defensive_forecasting.core import play_game
from defensive_forecasting.dmm import DMM
from defensive_forecasting.search import cumulative_tolerance

from helpers import binary_natures

STEP = 0.05


def grid_smce(p, y, step=STEP):
    """Best |sum f(p_i) c_i| over f with values on a step grid, by dynamic programming along sorted points."""
    v, c = merge_residuals(p, y)
    levels = np.round(np.arange(0.0, 1.0 + step / 2, step), 12)
    best = 0.0
    for sign in (1.0, -1.0):
        score = sign * c[0] * levels
        for i in range(1, len(v)):
            ok = np.abs(levels[:, None] - levels[None, :]) <= v[i] - v[i - 1] + 1e-12
            score = np.max(np.where(ok, score[None, :], -np.inf), axis=1) + sign * c[i] * levels
        best = max(best, float(score.max()))
    return best


class TestSmoothCalibration:
    def test_single_pair(self):
        assert smooth_calibration_error([0.3], [1]) == pytest.approx(0.7)

    def test_cancelling_pair(self):
        assert smooth_calibration_error([0.5, 0.5], [1, 0]) == pytest.approx(0.0, abs=1e-12)

    def test_opposite_residuals_far_apart(self):
        # f drops from 1 to 0.2 across the gap of 0.8
        assert smooth_calibration_error([0.1, 0.9], [1, 0]) == pytest.approx(0.9 - 0.9 * 0.2)

    def test_opposite_residuals_close(self):
        # f moves by at most 0.1 between the points: 0.55 (1 - 0.9)
        assert smooth_calibration_error([0.45, 0.55], [1, 0]) == pytest.approx(0.55 * 1.0 - 0.55 * 0.9)

    def test_returns_witness(self):
        val, f = smooth_calibration_error([0.2, 0.7, 0.9], [1, 0, 1], return_f=True)
        v, c = merge_residuals([0.2, 0.7, 0.9], [1, 0, 1])
        assert abs(f @ c) == pytest.approx(val)
        assert np.all(np.abs(np.diff(f)) <= np.diff(v) + 1e-9)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            smooth_calibration_error([], [])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=1, max_size=6))
    def test_matches_grid_search_on_grid(self, pairs):
        # with forecasts on the step grid the LP has a grid-valued optimum
        p = np.array([k * STEP for k, _ in pairs])
        y = np.array([b for _, b in pairs])
        assert smooth_calibration_error(p, y) == pytest.approx(grid_smce(p, y), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=6))
    def test_grid_search_is_a_lower_bound(self, pairs):
        p = np.array([a for a, _ in pairs])
        y = np.array([b for _, b in pairs])
        lp = smooth_calibration_error(p, y)
        assert grid_smce(p, y) <= lp + 1e-9
        # a single constant level is always feasible
        assert lp >= abs(float(np.sum(y - p))) - 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 1.0), st.floats(0, 1))
    def test_bump_lower_bound(self, seed, eps, alpha):
        rng = np.random.default_rng(seed)
        p = rng.random(30)
        y = rng.integers(0, 2, 30)
        # height eps keeps the bump 1-Lipschitz
        w = eps * bump(eps, alpha)(p)
        assert smooth_calibration_error(p, y) >= abs(float(w @ (y - p))) - 1e-9

    @pytest.mark.parametrize("nature", list(binary_natures()))
    def test_fs_dmm_traces(self, nature):
        T = 600
        trace = play_game(DMM("fs"), binary_natures()[nature], T, seed=13)
        slack = math.sqrt(2 * cumulative_tolerance("default", T))
        assert smooth_calibration_error(trace.p, trace.y) <= smce_bound(T, slack)

    def test_bound_values(self):
        assert smce_bound(300) == pytest.approx(math.sqrt(800))
        assert smce_headline(200) == pytest.approx(20.0)


class TestRounding:
    def test_on_grid(self):
        rng = np.random.default_rng(0)
        assert all(round_forecast(0.85, 20, rng) == 0.85 for _ in range(100))
        assert rounding_probabilities(0.85, 20) == {0.85: 1.0}

    def test_nearer_point_gets_more_mass(self):
        law = rounding_probabilities(0.89, 20)
        assert law[0.9] == pytest.approx(0.8)
        assert law[0.85] == pytest.approx(0.2)
        assert sum(v * w for v, w in law.items()) == pytest.approx(0.89)

    def test_monte_carlo(self):
        draws = round_forecasts(np.full(100_000, 0.89), 20, np.random.default_rng(1))
        assert set(np.round(draws, 12)) == {0.85, 0.9}
        assert np.mean(np.isclose(draws, 0.9)) == pytest.approx(0.8, abs=0.01)

    def test_unbiased(self):
        rng = np.random.default_rng(2)
        n = 100_000
        for p in rng.random(50):
            draws = round_forecasts(np.full(n, p), 7, rng)
            sigma = math.sqrt(max(np.var(draws), 1e-30))
            assert abs(draws.mean() - p) <= 3 * sigma / math.sqrt(n) + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.integers(1, 50))
    def test_support(self, p, N):
        law = rounding_probabilities(p, N)
        assert set(law) <= {math.floor(N * p) / N, math.ceil(N * p) / N} | {round(N * p) / N}
        assert sum(law.values()) == pytest.approx(1.0)
        assert sum(v * w for v, w in law.items()) == pytest.approx(p, abs=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            round_forecasts([1.2], 10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            round_forecasts([0.5], 0, np.random.default_rng(0))


class TestBinned:
    def test_balanced_half(self):
        table = binned_calibration_error([0.5] * 4, [1, 0, 1, 0], 2)
        np.testing.assert_allclose(table.errors, 0.0)
        assert table.counts.tolist() == [0, 4, 0]

    def test_single_pair(self):
        table = binned_calibration_error([0.5], [1], 2)
        assert table.errors[1] == -0.5
        assert table.max_error == 0.5

    def test_off_grid(self):
        with pytest.raises(ValueError):
            binned_calibration_error([0.33], [1], 10)

    def test_bound_formula(self):
        T, N, d = 1000, 10, 0.05
        expected = math.sqrt(T) * (math.sqrt(82 / 3) + math.sqrt(2 * math.log(2 * 11 / d))) + T / 20
        assert rounded_calibration_bound(T, N, d) == pytest.approx(expected)

    @pytest.mark.parametrize("nature", ["flip", "contrarian", "bernoulli"])
    def test_rounded_fs_dmm(self, nature):
        T = 1000
        N = 10  # ceil(T^(1/3))
        trace = play_game(RoundedForecaster(DMM("fs"), N), binary_natures()[nature], T, seed=17)
        assert binned_calibration_error(trace.p, trace.y, N).max_error <= rounded_calibration_bound(T, N, 0.05)

    def test_wrapper_reveals_grid_values(self):
        trace = play_game(RoundedForecaster(DMM("fs"), 4), binary_natures()["flip"], 50, seed=0)
        np.testing.assert_allclose(trace.p * 4, np.round(trace.p * 4))
        hedged = [r.forecast.distribution for r in trace if r.forecast.distribution is not None]
        assert all(abs(w1 + w2 - 1.0) < 1e-12 for (_, w1), (_, w2) in hedged)
