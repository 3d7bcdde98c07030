import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from defensive_forecasting.search import (MIN_BRACKET, Branch, SearchError, anticorrelation_search,
                                          cumulative_tolerance, default_tolerance, sign_change_search,
                                          tolerance_schedule)


def worst_correlation(S, p):
    return max((y - p) * S(p) for y in (0.0, 1.0))


class TestAnticorrelationSearch:
    def test_negative_constant_goes_to_zero(self):
        res = anticorrelation_search(lambda p: -0.5, 1e-9)
        assert (res.p, res.branch) == (0.0, Branch.AT_ZERO)

    def test_zero_summary_goes_to_one(self):
        res = anticorrelation_search(lambda p: 0.0, 1e-9)
        assert (res.p, res.branch) == (1.0, Branch.AT_ONE)

    def test_zero_summary_prefers_low_when_asked(self):
        res = anticorrelation_search(lambda p: 0.0, 1e-9, prefer="lo")
        assert (res.p, res.branch) == (0.0, Branch.AT_ZERO)

    def test_affine_root(self):
        res = anticorrelation_search(lambda p: 0.5 - p, 1e-9)
        assert res.branch == Branch.ROOT
        assert abs(res.p - 0.5) <= 1e-9

    def test_positive_everywhere(self):
        res = anticorrelation_search(lambda p: 1.0 + p, 1e-9)
        assert res.branch == Branch.AT_ONE

    def test_custom_interval(self):
        res = anticorrelation_search(lambda p: 0.3 - p, 1e-12, lo=0.1, hi=0.9)
        assert abs(res.p - 0.3) <= 1e-12

    def test_discontinuous_summary_raises(self):
        with pytest.raises(SearchError):
            anticorrelation_search(lambda p: 0.5 - p, 1e-9, continuous=False)

    def test_jump_terminates_at_machine_width(self):
        # no root: S jumps from +1 to -1 at 0.3
        res = anticorrelation_search(lambda p: 1.0 if p < 0.3 else -1.0, 1e-9)
        assert abs(res.p - 0.3) <= 2 * MIN_BRACKET
        assert res.evaluations <= 60

    def test_non_finite_summary(self):
        with pytest.raises(FloatingPointError):
            anticorrelation_search(lambda p: math.nan, 1e-9)

    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            anticorrelation_search(lambda p: 0.0, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-12, 1e-3),
           st.sampled_from(["hi", "lo"]))
    def test_postcondition(self, a, b, c, tol, prefer):
        # cubic summaries with arbitrary sign patterns
        S = lambda p: a + b * p + c * p ** 3  # noqa: E731
        res = anticorrelation_search(S, tol, prefer=prefer)
        assert 0.0 <= res.p <= 1.0
        assert worst_correlation(S, res.p) <= tol

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.001, 0.999), st.floats(0.1, 100), st.integers(3, 12))
    def test_evaluation_count(self, root, slope, k):
        tol = 10.0 ** -k
        res = anticorrelation_search(lambda p: slope * (root - p), tol)
        # two endpoint evaluations plus at most log2(width / bracket) bisections
        assert res.evaluations <= math.ceil(math.log2(slope / tol)) + 2


class TestSignChangeSearch:
    def test_affine(self):
        p1, p2, s1, s2 = sign_change_search(lambda p: p - 0.3, 0.0, 1.0, 0.01)
        assert p1 <= 0.3 < p2
        assert p2 - p1 <= 0.01
        assert s1 <= 0 < s2

    def test_step(self):
        S = lambda p: -1.0 if p < 0.6 else 2.0  # noqa: E731
        p1, p2, s1, s2 = sign_change_search(S, 0.0, 1.0, 1e-4)
        assert p1 < 0.6 <= p2
        assert (s1, s2) == (-1.0, 2.0)
        assert p2 - p1 <= 1e-4

    def test_wide_gap_returns_input(self):
        assert sign_change_search(lambda p: p - 0.3, 0.0, 1.0, 5.0)[:2] == (0.0, 1.0)

    def test_exact_zero_midpoint_is_negative_side(self):
        p1, p2, s1, s2 = sign_change_search(lambda p: p - 0.5, 0.0, 1.0, 1e-6)
        assert p1 == 0.5 and s1 == 0.0
        assert s2 > 0

    def test_requires_sign_change(self):
        with pytest.raises(ValueError):
            sign_change_search(lambda p: p + 1.0, 0.0, 1.0, 0.1)

    def test_gap_may_depend_on_negative_value(self):
        S = lambda p: p - 0.25  # noqa: E731
        p1, p2, s1, s2 = sign_change_search(S, 0.0, 1.0, lambda s: 1e-3 / abs(s) if s else 1.0)
        assert s1 == 0.0 or p2 - p1 <= 1e-3 / abs(s1)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(0.1, 10), st.floats(1e-9, 0.5))
    def test_strict_bracket(self, root, slope, gap):
        S = lambda p: slope * (p - root)  # noqa: E731
        assume(S(0.0) < 0 < S(1.0))
        p1, p2, s1, s2 = sign_change_search(S, 0.0, 1.0, gap)
        assert s1 <= 0 < s2
        assert S(p1) == s1 and S(p2) == s2
        assert s1 == 0.0 or p2 - p1 <= gap


class TestTolerance:
    def test_default_values(self):
        assert default_tolerance(1) == 1e-9
        assert default_tolerance(10**6) == pytest.approx(1e-13)

    def test_default_is_summable(self):
        assert cumulative_tolerance("default", 10**5) < 1e-9 * 1e4 + np.pi ** 2 / 60

    def test_named_schedules(self):
        assert tolerance_schedule("poly2")(2) == pytest.approx(1 / 40)
        assert tolerance_schedule("fixed:1e-6")(7) == 1e-6
        assert tolerance_schedule(0.01)(3) == 0.01

    def test_unknown_schedule(self):
        with pytest.raises(ValueError):
            tolerance_schedule("cubic")
