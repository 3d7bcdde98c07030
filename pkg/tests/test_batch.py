import math

import numpy as np
import pytest

from defensive_forecasting.batch import (BatchPredictor, GroupCoverage, batch_conditional_coverage, batch_excess_risk,
                                         batch_risk, conditional_coverage_bound, online_to_batch,
                                         replicated_excess_risk, snapshot_risks)
from defensive_forecasting.calibration import bump
from defensive_forecasting.core import BINARY, Forecast, Forecaster, interval
from defensive_forecasting.dmm import DMM, bit_predictor
from defensive_forecasting.experts import ConstantExpert, ExpertPanel, ExpertsForecaster
from defensive_forecasting.quantiles import RandomizedQuantileForecaster, group_feature_map


def square(p, y):
    return (p - np.asarray(y)) ** 2


def log_loss(p, y):
    p = np.clip(p, 1e-6, 1 - 1e-6)
    y = np.asarray(y)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def bernoulli_sampler(theta, d=0):
    def sample(rng, m):
        return np.zeros((m, d)), (rng.random(m) < theta).astype(int)
    return sample


class Fixed(Forecaster):
    outcome_space = BINARY

    def __init__(self, p):
        self.p = p

    def predict(self, x, rng=None):
        return Forecast(self.p)

    def update(self, x, forecast, y):
        pass


class TestConversion:
    def test_single_round(self):
        predictor, trace = online_to_batch(DMM("fs"), np.zeros((1, 0)), [0])
        assert len(predictor) == 1
        assert predictor.predict(np.zeros(0), np.random.default_rng(0)).value == 1.0

    def test_bit_snapshots_repeat_previous_bit(self):
        ys = [1, 0, 0, 1, 1, 0]
        rng = np.random.default_rng(0)
        xs = rng.normal(size=(6, 2))
        predictor, _ = online_to_batch(bit_predictor(), xs, ys)
        for i in range(6):
            want = 0 if i == 0 else ys[i - 1]
            for x in rng.normal(size=(3, 2)):
                assert predictor.snapshot_forecast(i, x, rng).value == want

    @pytest.mark.parametrize("kernel", ["fs", "1 + fs + pp + lin", "1 + pp + lin"])
    def test_replay_equality(self, kernel):
        rng = np.random.default_rng(3)
        xs = rng.normal(size=(40, 2)) / 2
        ys = rng.integers(0, 2, 40)
        predictor, trace = online_to_batch(DMM(kernel), xs, ys)
        for i, r in enumerate(trace):
            assert predictor.snapshot_forecast(i, r.x, rng).value == r.p

    def test_causality(self):
        rng = np.random.default_rng(4)
        xs = rng.normal(size=(30, 2)) / 2
        ys = rng.integers(0, 2, 30)
        xs2, ys2 = xs.copy(), ys.copy()
        xs2[15:] = rng.normal(size=(15, 2))
        ys2[15:] = 1 - ys2[15:]
        a, _ = online_to_batch(DMM("1 + fs + pp + lin"), xs, ys)
        b, _ = online_to_batch(DMM("1 + fs + pp + lin"), xs2, ys2)
        probe = rng.normal(size=(5, 2)) / 2
        for i in range(16):
            for x in probe:
                assert a.snapshot_forecast(i, x, rng).value == b.snapshot_forecast(i, x, rng).value
        assert any(a.snapshot_forecast(20, x, rng).value != b.snapshot_forecast(20, x, rng).value for x in probe)

    def test_same_seed_same_predictor(self):
        rng = np.random.default_rng(5)
        xs = rng.uniform(-1, 1, size=(50, 2))
        ys = rng.random(50)
        make = lambda: RandomizedQuantileForecaster("1 + pp + lin", 0.8)  # noqa: E731
        a, ta = online_to_batch(make(), xs, ys, seed=9, outcome_space=interval(0, 1))
        b, tb = online_to_batch(make(), xs, ys, seed=9, outcome_space=interval(0, 1))
        assert ta.to_csv() == tb.to_csv()
        assert a.predict(xs[0], np.random.default_rng(1)).value == b.predict(xs[0], np.random.default_rng(1)).value

    def test_needs_snapshots(self):
        with pytest.raises(ValueError):
            BatchPredictor([])


class TestRisk:
    def test_half_forecast_square_loss(self):
        est = batch_risk(BatchPredictor([Fixed(0.5)]), bernoulli_sampler(0.5), square, replicates=32)
        assert est.mean == pytest.approx(0.25)
        assert est.stderr == pytest.approx(0.0, abs=1e-15)

    def test_zero_loss(self):
        predictor, _ = online_to_batch(DMM("1"), np.zeros((20, 0)), [1] * 20)
        est = batch_risk(predictor, bernoulli_sampler(1.0), square, replicates=16)
        assert est.mean == 0.0

    def test_uniform_mixture_identity(self):
        rng = np.random.default_rng(6)
        xs = np.zeros((60, 0))
        ys = (rng.random(60) < 0.3).astype(int)
        predictor, _ = online_to_batch(DMM("fs"), xs, ys)
        # the forecasts do not depend on x, so each snapshot's risk is E (p_i - y)^2 exactly
        p = np.array([predictor.snapshot_forecast(i, np.zeros(0), rng).value for i in range(60)])
        exact = float(np.mean(0.3 * (1 - p) ** 2 + 0.7 * p ** 2))
        est = batch_risk(predictor, bernoulli_sampler(0.3), square, replicates=256, points=64, seed=1)
        assert abs(est.mean - exact) <= 3 * est.stderr

    def test_snapshot_risks(self):
        predictor = BatchPredictor([Fixed(0.0), Fixed(0.5), Fixed(1.0)])
        risks = snapshot_risks(predictor, np.zeros((4, 0)), np.array([1, 1, 0, 1]), square,
                               np.random.default_rng(0))
        np.testing.assert_allclose(risks, [0.75, 0.25, 0.25])

    def test_excess_risk_against_itself(self):
        est = batch_excess_risk(BatchPredictor([Fixed(0.3)]), lambda x: 0.3, bernoulli_sampler(0.4), square,
                                replicates=8)
        assert est.mean == 0.0

    def test_log_loss_experts(self):
        thetas = [round(0.1 * k, 1) for k in range(1, 10)]
        n = 200
        make = lambda: ExpertsForecaster(ExpertPanel([ConstantExpert(c) for c in thetas], loss="log"))  # noqa: E731
        comps = [(lambda c: lambda x: c)(c) for c in thetas]
        est = replicated_excess_risk(make, comps, bernoulli_sampler(0.3), log_loss, n, replicates=64, points=64)
        clamp = -math.log1p(-1e-6)
        assert est.mean <= math.log(len(thetas)) / n + clamp + 3 * est.stderr

    def test_calibration_residual_in_expectation(self):
        # online: |sum f(p_t)(y_t - p_t)| <= sqrt(8n/3) for 1-Lipschitz f; batch divides by n
        n = 400
        rng = np.random.default_rng(7)
        predictor, _ = online_to_batch(DMM("fs"), np.zeros((n, 0)), (rng.random(n) < 0.3).astype(int))
        for eps, alpha in [(0.2, 0.3), (0.5, 0.5), (1.0, 0.0)]:
            f = bump(eps, alpha)
            omega = lambda p, y: eps * f(p) * (np.asarray(y) - p)  # noqa: E731
            est = batch_risk(predictor, bernoulli_sampler(0.3), omega, replicates=128, points=64, seed=2)
            assert abs(est.mean) <= math.sqrt(8 * n / 3) / n + 3 * est.stderr


def two_group_sampler(rng, m):
    X = rng.uniform(-1, 1, size=(m, 2))
    left = X[:, 0] < 0
    y = np.where(left, 1.0 - rng.random(m), 1.0 - 0.5 * rng.random(m))
    return X, y


def side(x):
    return int(x[0] >= 0)


@pytest.fixture(scope="module")
def predictor():
    n = 2000
    X, y = two_group_sampler(np.random.default_rng(8), n)
    fc = RandomizedQuantileForecaster(group_feature_map(side, 2), 0.9)
    predictor, _ = online_to_batch(fc, X, y, seed=8, outcome_space=interval(0, 1))
    return predictor


class TestConditionalCoverage:
    def test_two_groups_within_bound(self, predictor):
        groups = {"left": lambda x, p: x[0] < 0, "right": lambda x, p: x[0] >= 0, "all": lambda x, p: 1}
        # uniform on (0, 1] and on (0.5, 1]: the steeper CDF has slope 2
        rows = batch_conditional_coverage(predictor, two_group_sampler, groups, 0.9, 2000, 2.0, 3.0, 0.1,
                                          replicates=256, points=64)
        for row in rows:
            assert row.defined
            assert row.passed, row
        masses = {r.name: r.mass for r in rows}
        assert masses["all"] == 1.0
        assert masses["left"] == pytest.approx(0.5, abs=0.02)

    def test_empty_group(self, predictor):
        rows = batch_conditional_coverage(predictor, two_group_sampler, {"none": lambda x, p: 0}, 0.9, 2000, 2.0,
                                          3.0, replicates=8, points=8)
        assert rows[0].deviation is None
        assert rows[0].passed is None

    def test_bound_formula(self):
        expected = (1.0 / 100 + 2 * 3.0 * math.sqrt((1 + math.log(2 * 5 / 0.1)) / 100)) / 0.25
        assert conditional_coverage_bound(100, 1.0, 3.0, 5, 0.1, 0.25) == pytest.approx(expected)

    def test_undefined_row_has_no_verdict(self):
        row = GroupCoverage("g", 0.0, None, None, None)
        assert not row.defined and row.passed is None
