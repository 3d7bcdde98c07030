"""Defensive moment matching: forecasts whose residuals anticorrelate with features.

Each round the forecaster builds

    S_t(p) = sum_{s<t} k((x_t, p), (x_s, p_s)) (y_s - p_s)

and runs anticorrelation search on it. With a finite feature map the
kernel is an inner product of features and the history collapses into a
running sum, so a round costs O(dim) instead of O(t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import BINARY, Forecast, Forecaster, GameTrace
from .kernels import Constant, Kernel, as_kernel
from .search import anticorrelation_search, tolerance_schedule


@dataclass
class FeatureMap:
    """Explicit feature map ``(x, p) -> R^dim`` with declared norm bound."""

    fn: Callable[[np.ndarray, float], np.ndarray]
    dim: int | None = None
    bound: float = math.inf
    continuous: bool = True
    name: str = ""

    def __call__(self, x, p) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float), float(p)), dtype=float)


def kernel_features(kernel: Kernel, x_bound: float = 1.0) -> FeatureMap:
    """Feature map of a kernel built from constant, linear and product leaves."""
    if not kernel.finite:
        raise TypeError(f"kernel {kernel} has no finite feature map")
    return FeatureMap(kernel.features, None, math.sqrt(kernel.diag_sup(x_bound)), True, str(kernel))


class _History:
    """Append-only (x, p, r) arrays; prefixes stay valid after reallocation."""

    def __init__(self, d: int | None = None):
        self.n = 0
        self.X = None if d is None else np.empty((16, d))
        self.P = np.empty(16)
        self.R = np.empty(16)

    def append(self, x, p, r):
        if self.X is None:
            self.X = np.empty((16, len(x)))
        if self.n == len(self.P):
            cap = 2 * self.n
            self.X = np.concatenate([self.X[:self.n], np.empty((cap - self.n, self.X.shape[1]))])
            self.P = np.concatenate([self.P[:self.n], np.empty(cap - self.n)])
            self.R = np.concatenate([self.R[:self.n], np.empty(cap - self.n)])
        self.X[self.n] = x
        self.P[self.n] = p
        self.R[self.n] = r
        self.n += 1

    def view(self):
        if self.X is None:
            return np.empty((0, 0)), self.P[:0], self.R[:0]
        return self.X[:self.n], self.P[:self.n], self.R[:self.n]

    def frozen(self) -> "_History":
        h = _History.__new__(_History)
        h.n = self.n
        X, P, R = self.view()
        # later appends write past n or into fresh buffers, never into this prefix
        h.X, h.P, h.R = (None if self.X is None else X), P, R
        return h


class DMM(Forecaster):
    """Defensive moment matching over a kernel or an explicit feature map.

    ``mode`` is ``"explicit"`` when a finite feature map is available (a
    :class:`FeatureMap`, or a kernel with only constant / linear / product
    leaves) and ``"kernelized"`` otherwise.

    ``init="zero"`` forces the first forecast to 0 instead of letting the
    search decide (an empty summary makes the search return 1). ``prefer``
    is passed to the search and decides which endpoint wins when ``S``
    vanishes at both.
    """

    outcome_space = BINARY

    def __init__(self, kernel: Kernel | FeatureMap | str, tolerance="default", init: str = "search",
                 x_bound: float = 1.0, prefer: str = "hi"):
        if init not in ("search", "zero"):
            raise ValueError("init must be 'search' or 'zero'")
        if isinstance(kernel, str):
            kernel = as_kernel(kernel)
        self.kernel = kernel if isinstance(kernel, Kernel) else None
        if isinstance(kernel, FeatureMap):
            self.features = kernel
        elif kernel.finite:
            self.features = kernel_features(kernel, x_bound)
        else:
            self.features = None
        self.continuous = True if self.features is None else self.features.continuous
        self.tolerance = tolerance_schedule(tolerance)
        self.init = init
        self.prefer = prefer
        self.t = 0
        self._feature_sum = None
        self.history = _History() if self.features is None else None
        self._affine_x = self._affine_val = None
        # context-free kernels: the feature sum is A Phi(0) + B (Phi(1) - Phi(0))
        # with A = sum r_t and B = sum r_t p_t, so two floats carry the state
        self._moments = None
        if self.kernel is not None and self.features is not None and not self.kernel.uses_x:
            phi0, slope = self._affine(np.zeros(0))
            self._moments = (0.0, 0.0)
            self._gram = (float(phi0 @ phi0), float(phi0 @ slope), float(slope @ slope))

    @property
    def feature_sum(self) -> np.ndarray | None:
        """Running sum of Phi(x_t, p_t)(y_t - p_t); ``None`` before the first update."""
        if self._moments is None or self.t == 0:
            return self._feature_sum
        phi0, slope = self._affine_val
        A, B = self._moments
        return A * phi0 + B * slope

    @property
    def mode(self) -> str:
        return "kernelized" if self.features is None else "explicit"

    def summary(self, x: np.ndarray) -> Callable[[float], float]:
        """The summary function S_t for the next round at context ``x``."""
        if self.features is not None:
            if self.t == 0:
                return lambda p: 0.0
            if self._moments is not None:
                A, B = self._moments
                g00, g01, g11 = self._gram
                a, b = A * g00 + B * g01, A * g01 + B * g11
                return lambda p: a + b * p
            w = self._feature_sum
            if self.kernel is not None:
                phi0, slope = self._affine(x)
                a, b = float(w @ phi0), float(w @ slope)
                return lambda p: a + b * p
            phi = self.features
            return lambda p: float(w @ phi(x, p))
        X, P, R = self.history.view()
        if len(P) == 0:
            return lambda p: 0.0
        kx = self.kernel.bind(np.asarray(x, dtype=float), X.reshape(len(P), -1), P)
        return lambda p: float(kx(p) @ R)

    def _affine(self, x):
        """(Phi(x, 0), Phi(x, 1) - Phi(x, 0)); finite kernels have features affine in p."""
        if self._affine_x is not x and (self._affine_val is None or self.kernel.uses_x):
            x = np.asarray(x, dtype=float)
            phi0 = self.kernel.features(x, 0.0)
            self._affine_x, self._affine_val = x, (phi0, self.kernel.features(x, 1.0) - phi0)
        return self._affine_val

    def predict(self, x, rng=None) -> Forecast:
        t = self.t + 1
        S = self.summary(x)
        if t == 1 and self.init == "zero":
            return Forecast(0.0, s_value=S(0.0), branch="Init")
        res = anticorrelation_search(S, self.tolerance(t), continuous=self.continuous, prefer=self.prefer)
        return Forecast(res.p, s_value=res.residual, branch=res.branch.value)

    def update(self, x, forecast: Forecast, y) -> None:
        p = forecast.value
        r = float(y) - p
        if self._moments is not None:
            A, B = self._moments
            self._moments = (A + r, B + r * p)
        elif self.features is not None:
            if self.kernel is not None:
                phi0, slope = self._affine(x)
                phi = phi0 + p * slope
            else:
                phi = self.features(x, p)
            if self._feature_sum is None:
                self._feature_sum = np.zeros_like(phi)
            self._feature_sum = self._feature_sum + r * phi
        else:
            self.history.append(np.asarray(x, dtype=float), p, r)
        self.t += 1

    def snapshot(self) -> "DMM":
        snap = DMM.__new__(DMM)
        snap.__dict__.update(self.__dict__)
        if self.history is not None:
            snap.history = self.history.frozen()
        return snap


def bit_predictor(init: str = "zero", tolerance="default") -> DMM:
    """Constant-kernel DMM that repeats the previous bit.

    Predicting 1 only when the running residual sum is strictly positive
    keeps that sum equal to the last outcome, so the mean forecast trails
    the mean outcome by exactly ``y_T / T``.
    """
    return DMM(Constant(1.0), tolerance, init, prefer="lo")


def residual_sum(trace: GameTrace, features: FeatureMap) -> np.ndarray:
    """sum_t Phi(x_t, p_t)(y_t - p_t) recomputed from the trace."""
    total = None
    for r in trace:
        v = (r.y - r.forecast.value) * features(r.x, r.forecast.value)
        total = v if total is None else total + v
    return total


def diagonal_bound_terms(trace: GameTrace, kernel: Kernel | FeatureMap, tolerance="default",
                         rescale=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-prefix sides of the diagonal bound.

    Returns ``(lhs, rhs)`` with ``lhs[t-1] = ||sum_{s<=t} Phi_s r_s||^2`` and
    ``rhs[t-1] = sum_{s<=t} ||Phi_s||^2 r_s^2 + 2 sum_{s<=t} eps_s``. Kernels
    are handled through the Gram matrix: ``lhs`` is the leading-block
    quadratic form ``r^T K r``, summed by a 2-D cumulative sum.
    """
    X, P, Y = trace.x, trace.p, trace.y
    R = Y - P
    if rescale is not None:
        P = rescale(P)
    T = len(R)
    if isinstance(kernel, FeatureMap):
        Phi = np.array([kernel(X[i], P[i]) for i in range(T)])
        K = Phi @ Phi.T
    else:
        kernel = as_kernel(kernel)
        K = kernel.pairwise(X[:, None, :], P[:, None], X[None, :, :], P[None, :])
    W = K * np.outer(R, R)
    lhs = np.diagonal(np.cumsum(np.cumsum(W, axis=0), axis=1)).copy()
    sched = tolerance_schedule(tolerance)
    eps = np.array([sched(t) for t in range(1, T + 1)])
    rhs = np.cumsum(np.diag(K) * R * R) + 2.0 * np.cumsum(eps)
    return lhs, rhs


def oi_gap(trace: GameTrace, f: Callable) -> float:
    """|sum f(x,p,y) - sum E_{y'~Ber(p)} f(x,p,y')| / T on a binary trace."""
    if not trace.outcome_space.is_binary:
        raise ValueError("outcome indistinguishability needs a binary game")
    total = 0.0
    for r in trace:
        p = r.forecast.value
        f1, f0 = f(r.x, p, 1), f(r.x, p, 0)
        total += f(r.x, p, r.y) - (p * f1 + (1.0 - p) * f0)
    return abs(total) / len(trace)


def oi_bound(v_norm: float, M: float, T: int) -> float:
    """Right-hand side ||v|| M / sqrt(T) of the indistinguishability bound."""
    return v_norm * M / math.sqrt(T)
