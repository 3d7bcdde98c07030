import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from defensive_forecasting.kernels import (Constant, FermiSobolev, Gaussian, KernelPoint, LinearX, ProductP,
                                           Scale, Sum, as_kernel, bump, fs_kernel, fs_norm, fs_norm_bump,
                                           gram_matrix, kernel_eval, parse_kernel, rescale)

LEAVES = [Constant(1.0), Constant(2.5), LinearX(), ProductP(), FermiSobolev(), Gaussian(0.5), Gaussian(3.0)]


def fs_closed_form(p, q):
    # written out independently of the library
    return 0.5 * min(p, q) ** 2 + 0.5 * min(1 - p, 1 - q) ** 2 + 5.0 / 6.0


def points(rng, n, d=3):
    # contexts inside the unit ball
    out = []
    for _ in range(n):
        v = rng.normal(size=d)
        out.append(KernelPoint.of(v / np.linalg.norm(v) * rng.random(), rng.random()))
    return out


kernel_trees = st.recursive(
    st.sampled_from(LEAVES),
    lambda kids: st.one_of(
        st.lists(kids, min_size=2, max_size=3).map(Sum),
        st.tuples(st.floats(0.0, 4.0), kids).map(lambda t: Scale(*t)),
    ),
    max_leaves=5,
)


class TestFermiSobolev:
    def test_corner_value(self):
        assert fs_kernel(0.0, 0.0) == pytest.approx(4.0 / 3.0, abs=1e-15)

    def test_midpoint_value(self):
        assert fs_kernel(0.5, 0.5) == pytest.approx(13.0 / 12.0, abs=1e-15)

    def test_grid_gram(self):
        G = gram_matrix(FermiSobolev(), [KernelPoint.of([], p) for p in (0.0, 0.5, 1.0)])
        np.testing.assert_allclose(np.diag(G), [4 / 3, 13 / 12, 4 / 3], atol=1e-15)
        expected = [[fs_closed_form(a, b) for b in (0.0, 0.5, 1.0)] for a in (0.0, 0.5, 1.0)]
        np.testing.assert_allclose(G, expected, atol=1e-15)

    def test_diagonal_sup_at_endpoints(self):
        grid = np.linspace(0.0, 1.0, 10_001)
        assert abs(fs_kernel(grid, grid).max() - 4.0 / 3.0) <= 1e-12
        assert FermiSobolev().diag_sup() == 4.0 / 3.0

    @settings(max_examples=100)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_matches_closed_form(self, p, q):
        assert fs_kernel(p, q) == pytest.approx(fs_closed_form(p, q), abs=1e-15)

    def test_bind_matches_pairwise(self):
        rng = np.random.default_rng(0)
        P = rng.random(10)
        X = np.zeros((10, 0))
        at = FermiSobolev().bind(np.zeros(0), X, P)
        np.testing.assert_allclose(at(0.3), fs_kernel(0.3, P), atol=1e-15)


class TestKernelEval:
    def test_constant_plus_linear(self):
        k = Sum([Constant(1.0), LinearX()])
        assert kernel_eval(k, KernelPoint.of([1, 2], 0.1), KernelPoint.of([3, 4], 0.9)) == 12.0

    def test_call_syntax(self):
        a, b = KernelPoint.of([1.0], 0.2), KernelPoint.of([2.0], 0.5)
        assert ProductP()(a, b) == pytest.approx(0.1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(LinearX(), KernelPoint.of([1.0], 0.1), KernelPoint.of([1.0, 2.0], 0.1))

    def test_gaussian_value(self):
        a, b = KernelPoint.of([0.0, 0.0], 0.0), KernelPoint.of([1.0, 1.0], 0.0)
        assert kernel_eval(Gaussian(0.5), a, b) == pytest.approx(math.exp(-1.0))

    def test_single_point_constant_gram(self):
        np.testing.assert_array_equal(gram_matrix(Constant(1.0), [KernelPoint.of([0.3], 0.2)]), [[1.0]])

    def test_algebra_operators(self):
        k = LinearX() + 2.0 * ProductP()
        a, b = KernelPoint.of([1.0, 1.0], 0.5), KernelPoint.of([2.0, 0.0], 0.5)
        assert k(a, b) == pytest.approx(2.0 + 2.0 * 0.25)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(kernel_trees, st.integers(0, 2**31))
    def test_symmetric(self, k, seed):
        G = gram_matrix(k, points(np.random.default_rng(seed), 12))
        np.testing.assert_allclose(G, G.T, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(kernel_trees, st.integers(0, 2**31), st.integers(1, 32))
    def test_positive_semidefinite(self, k, seed, n):
        G = gram_matrix(k, points(np.random.default_rng(seed), n))
        assert np.linalg.eigvalsh(G).min() >= -1e-8

    @pytest.mark.parametrize("k", LEAVES)
    def test_twenty_points_each_leaf(self, k):
        G = gram_matrix(k, points(np.random.default_rng(7), 20))
        assert np.linalg.eigvalsh(G).min() >= -1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(["1", "lin", "pp", "1 + pp + lin", "2*pp + 0.5*lin", "3"]), st.integers(0, 2**31))
    def test_features_reproduce_kernel(self, text, seed):
        k = parse_kernel(text)
        pts = points(np.random.default_rng(seed), 6)
        Phi = np.array([k.features(pt.x, pt.p) for pt in pts])
        np.testing.assert_allclose(Phi @ Phi.T, gram_matrix(k, pts), atol=1e-12)
        assert Phi.shape[1] == k.feature_dim(3)

    @settings(max_examples=40, deadline=None)
    @given(kernel_trees, st.integers(0, 2**31))
    def test_diag_sup_bounds_diagonal(self, k, seed):
        pts = points(np.random.default_rng(seed), 20)
        diag = np.diag(gram_matrix(k, pts))
        assert diag.max() <= k.diag_sup(1.0) + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(kernel_trees, st.integers(0, 2**31))
    def test_bind_agrees_with_pairwise(self, k, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(7, 3)) / 2
        P = rng.random(7)
        x, p = rng.normal(size=3) / 2, rng.random()
        np.testing.assert_allclose(k.bind(x, X, P)(p), k.pairwise(x[None, :], p, X, P), atol=1e-12)


class TestParse:
    def test_standard_expression(self):
        k = parse_kernel("1 + fs + pp + lin")
        assert isinstance(k, Sum)
        assert [type(t) for t in k.terms] == [Constant, FermiSobolev, ProductP, LinearX]

    def test_rbf_and_scale(self):
        k = parse_kernel("1 + fs + pp + 2*rbf(0.5)")
        assert k.terms[-1] == Scale(2.0, Gaussian(0.5))

    def test_string_roundtrip(self):
        for text in ["1 + fs + pp + lin", "1 + fs + pp + rbf(0.5)", "0.5*(fs + pp)"]:
            k = parse_kernel(text)
            assert parse_kernel(str(k)) == k

    def test_finite_flag(self):
        assert parse_kernel("1 + pp + lin").finite
        assert not parse_kernel("1 + fs").finite

    @pytest.mark.parametrize("bad", ["", "1 +", "foo", "rbf(x)", "(fs", "fs fs"])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            parse_kernel(bad)

    def test_as_kernel_passthrough(self):
        k = FermiSobolev()
        assert as_kernel(k) is k
        with pytest.raises(TypeError):
            as_kernel(3)


class TestFsNorm:
    def test_bump_grid_width(self):
        assert fs_norm_bump(1 / 20, 0.5) == pytest.approx(math.sqrt(1 / 400 + 40), abs=1e-12)
        assert fs_norm_bump(1 / 20, 0.5) == pytest.approx(6.3248, abs=1e-4)

    def test_wider_bump_is_smoother(self):
        assert fs_norm_bump(0.25, 0.5) < fs_norm_bump(0.1, 0.5)

    def test_bump_must_fit(self):
        with pytest.raises(ValueError):
            fs_norm_bump(1.0, 0.5)
        with pytest.raises(ValueError):
            fs_norm_bump(0.3, 0.2)

    @pytest.mark.parametrize("eps,alpha", [(0.5, 0.5), (0.1, 0.3), (0.05, 0.9)])
    def test_quadrature_agrees_with_closed_form(self, eps, alpha):
        w = bump(eps)
        assert fs_norm(lambda p: w(p - alpha)) == pytest.approx(fs_norm_bump(eps, alpha), rel=1e-3)

    def test_lipschitz_function_norm(self):
        # f(p) = min(p, c): mean c - c^2/2, slope energy c
        c = 0.4
        expected = math.sqrt((c - c * c / 2) ** 2 + c)
        assert fs_norm(lambda p: np.minimum(p, c)) == pytest.approx(expected, rel=1e-4)


def test_rescale_maps_interval_to_unit():
    np.testing.assert_allclose(rescale([-3.0, 0.0, 3.0], -3.0, 3.0), [0.0, 0.5, 1.0])
