"""Quantile forecasting: the marginal coverage tracker and the randomized conditional forecaster.

Outcomes live in an interval ``(y_min, y_max]`` and the target is
``P(y <= p) = q``. The residual of a round is ``1{y <= p} - q``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, logit

from .core import Forecast, Forecaster, GameTrace, Nature, interval
from .dmm import FeatureMap, _History
from .kernels import Kernel, as_kernel
from .search import sign_change_search

POINT_MASS_THRESHOLD = 1e-12


# marginal tracker

class MarginalTracker(Forecaster):
    """Predict ``y_max`` while the running coverage is at most ``q``, else ``y_min``.

    Coverage is kept as an integer count and compared exactly against
    ``q (t - 1)``, so the tracker's guarantee holds with no rounding slack.
    """

    def __init__(self, q: float, y_min: float = 0.0, y_max: float = 1.0):
        if not 0.0 < q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        self.q = q
        self.qf = Fraction(q)
        self.outcome_space = interval(y_min, y_max)
        self.covered = 0
        self.t = 0

    @property
    def coverage(self) -> Fraction:
        """Running coverage x_t (zero before any round)."""
        return Fraction(self.covered, self.t) if self.t else Fraction(0)

    def predict(self, x, rng=None) -> Forecast:
        s = self.covered - self.qf * self.t
        if s <= 0:
            return Forecast(self.outcome_space.y_max, s_value=float(s), branch="AtMax")
        return Forecast(self.outcome_space.y_min, s_value=float(s), branch="AtMin")

    def update(self, x, forecast, y) -> None:
        self.covered += int(y <= forecast.value)
        self.t += 1


def tracker_sequence(q: float, T: int) -> list[Fraction]:
    """x_1, ..., x_T from the coverage recursion alone; no outcomes are consulted.

    ``x_1 = 0`` and ``x_{t+1} = (1 - 1/t) x_t + (1/t) 1{x_t <= q}``.
    """
    qf = Fraction(q)
    xs = [Fraction(0)]
    for t in range(1, T):
        x = xs[-1]
        xs.append((1 - Fraction(1, t)) * x + Fraction(1, t) * (1 if x <= qf else 0))
    return xs


def tracker_counts(q: float, T: int) -> list[int]:
    """c_t = (t - 1) x_t for t = 1..T as exact integers."""
    # q = n / d exactly; d reaches 2^54 for q = 0.05, so stay in Python ints
    n, d = Fraction(q).as_integer_ratio()
    c = [0] * T
    for t in range(1, T):
        # x_t <= q  <=>  c_t d <= n (t - 1), with x_1 = 0
        c[t] = c[t - 1] + (1 if c[t - 1] * d <= n * (t - 1) else 0)
    return c


def tracker_bound_holds(q: float, T: int) -> np.ndarray:
    """For t = 2..T, whether |x_t - q| <= max(q, 1 - q)/(t - 1), in integer arithmetic.

    Multiplying through by ``(t - 1) d`` (``q = n / d`` exactly) turns the
    check into ``|c_t d - n (t - 1)| <= max(n, d - n)``.
    """
    n, d = Fraction(q).as_integer_ratio()
    c = tracker_counts(q, T)
    m = max(n, d - n)
    return np.array([abs(c[t - 1] * d - n * (t - 1)) <= m for t in range(2, T + 1)])


def tracker_errors(q: float, T: int) -> list[Fraction]:
    """|x_t - q| for t = 1..T, exact."""
    qf = Fraction(q)
    return [abs(x - qf) for x in tracker_sequence(q, T)]


def tracker_bound(q: float, T: int) -> Fraction:
    """max(q, 1 - q) / (T - 1), exact in the binary value of ``q``."""
    if T < 2:
        raise ValueError("the tracker bound needs T >= 2")
    qf = Fraction(q)
    return max(qf, 1 - qf) / (T - 1)


def tracker_gap(trace: GameTrace, q: float) -> Fraction:
    """Coverage error over the first T - 1 rounds, the quantity the tracker bound controls."""
    hits = sum(int(r.y <= r.p) for r in trace.rounds[:-1])
    return abs(Fraction(hits, trace.T - 1) - Fraction(q))


# outcome distributions

class OutcomeDistribution:
    lipschitz: float = math.inf

    def cdf(self, v):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(OutcomeDistribution):
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("uniform needs a < b")

    @property
    def lipschitz(self) -> float:
        return 1.0 / (self.b - self.a)

    def cdf(self, v):
        return np.clip((np.asarray(v, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def sample(self, rng):
        # 1 - U lies in (0, 1], keeping the draw inside (a, b]
        return self.a + (1.0 - rng.random()) * (self.b - self.a)


@dataclass(frozen=True)
class TruncatedLogistic(OutcomeDistribution):
    """Logistic(loc, scale) conditioned on (a, b]."""

    loc: float
    scale: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.a < self.b and self.scale > 0):
            raise ValueError("truncated logistic needs a < b and scale > 0")

    def _F(self, v):
        return expit((np.asarray(v, dtype=float) - self.loc) / self.scale)

    @property
    def mass(self) -> float:
        return float(self._F(self.b) - self._F(self.a))

    @property
    def lipschitz(self) -> float:
        """Density maximum: the logistic density peaks at loc, clamped into [a, b]."""
        m = min(max(self.loc, self.a), self.b)
        z = float(self._F(m))
        return z * (1.0 - z) / self.scale / self.mass

    def cdf(self, v):
        v = np.clip(np.asarray(v, dtype=float), self.a, self.b)
        return (self._F(v) - self._F(self.a)) / self.mass

    def sample(self, rng):
        fa = float(self._F(self.a))
        u = fa + (1.0 - rng.random()) * self.mass
        y = self.loc + self.scale * float(logit(u))
        return min(max(y, math.nextafter(self.a, math.inf)), self.b)


@dataclass(frozen=True)
class PointMass(OutcomeDistribution):
    v: float

    def cdf(self, v):
        return (np.asarray(v, dtype=float) >= self.v).astype(float)

    def sample(self, rng):
        return self.v


def empirical_lipschitz(dist: OutcomeDistribution, a: float, b: float, n: int = 4001) -> float:
    """Largest CDF slope between neighbouring points of an n-point grid on [a, b]."""
    v = np.linspace(a, b, n)
    c = dist.cdf(v)
    return float(np.max(np.abs(np.diff(c)) / np.diff(v)))


def check_lipschitz(dist: OutcomeDistribution, L: float, a: float, b: float, n: int = 4001) -> bool:
    if not math.isfinite(getattr(dist, "lipschitz", math.inf)):
        return False
    return empirical_lipschitz(dist, a, b, n) <= L * (1.0 + 1e-9)


def lipschitz_nature(family: Callable, y_min: float, y_max: float, L: float,
                     contexts: Callable | None = None, context_dim: int = 0,
                     probes: Sequence | None = None, name: str = "") -> Nature:
    """Nature drawing ``y`` from ``family(history, x, forecast)``, an L-Lipschitz distribution.

    The family is probed at construction (at ``probes`` contexts, or the zero
    context) and rejected if a probed CDF is steeper than ``L``.
    """
    space = interval(y_min, y_max)
    probes = probes if probes is not None else [np.zeros(context_dim)]
    empty = GameTrace(space)
    for x in probes:
        for p in (y_min, 0.5 * (y_min + y_max), y_max):
            dist = family(empty, np.asarray(x, dtype=float), Forecast(p))
            if not check_lipschitz(dist, L, y_min, y_max):
                raise ValueError(f"outcome distribution {dist} is not {L}-Lipschitz")
    nature = Nature(family, space, contexts, context_dim, name)
    nature.lipschitz = L
    return nature


# randomized conditional forecaster

def group_feature_map(groups: Callable[[np.ndarray], int], n_groups: int) -> FeatureMap:
    """Phi(x, p) = (1, p, 1{g(x) = 0}, ..., 1{g(x) = n-1}) with ||Phi||^2 <= 3 on p in [0, 1]."""

    def phi(x, p):
        out = np.zeros(2 + n_groups)
        out[0] = 1.0
        out[1] = p
        out[2 + groups(x)] = 1.0
        return out

    return FeatureMap(phi, 2 + n_groups, math.sqrt(3.0), True, f"groups:{n_groups}")


def quadrant(x: np.ndarray) -> int:
    """Index 0..3 of the quadrant containing (x_0, x_1)."""
    return (2 if x[0] >= 0 else 0) + (1 if x[1] >= 0 else 0)


class RandomizedQuantileForecaster(Forecaster):
    """Two-point randomized forecasts driving kernel-weighted coverage residuals to zero.

    ``S(p) = sum_s k((x, p), (x_s, p_s)) (1{y_s <= p_s} - q)`` with every
    ``p`` rescaled to [0, 1] before it reaches the kernel. Endpoint rounds
    return a point mass; otherwise a sign-change bracket ``S(p1) <= 0 < S(p2)``
    of width at most ``1 / (10 t^2 |S(p1)|)`` is hedged with weight
    ``tau = |S(p2)| / (|S(p1)| + |S(p2)|)`` on ``p1``.
    """

    def __init__(self, kernel: Kernel | FeatureMap | str, q: float, y_min: float = 0.0,
                 y_max: float = 1.0):
        if not 0.0 < q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        if isinstance(kernel, str):
            kernel = as_kernel(kernel)
        self.q = q
        self.outcome_space = interval(y_min, y_max)
        self.kernel = kernel if isinstance(kernel, Kernel) else None
        if isinstance(kernel, FeatureMap):
            self.features = kernel
        elif kernel.finite:
            self.features = FeatureMap(kernel.features, name=str(kernel))
        else:
            self.features = None
        self.feature_sum = None
        self.history = _History() if self.features is None else None
        self.t = 0

    def rescale(self, p):
        s = self.outcome_space
        return (p - s.y_min) / (s.y_max - s.y_min)

    def summary(self, x) -> Callable[[float], float]:
        x = np.asarray(x, dtype=float)
        if self.features is not None:
            if self.feature_sum is None:
                return lambda p: 0.0
            w, phi, resc = self.feature_sum, self.features, self.rescale
            return lambda p: float(w @ phi(x, resc(p)))
        X, P, R = self.history.view()
        if len(P) == 0:
            return lambda p: 0.0
        kx = self.kernel.bind(x, X.reshape(len(P), -1), P)
        resc = self.rescale
        return lambda p: float(kx(resc(p)) @ R)

    def gap(self, t: int):
        return lambda s1: 1.0 / (10.0 * t * t * abs(s1))

    def predict(self, x, rng=None) -> Forecast:
        t = self.t + 1
        S = self.summary(x)
        lo, hi = self.outcome_space.y_min, self.outcome_space.y_max
        s_lo = S(lo)
        if s_lo >= 0:
            return Forecast(lo, s_value=s_lo, branch="AtMin")
        s_hi = S(hi)
        if s_hi <= 0:
            return Forecast(hi, s_value=s_hi, branch="AtMax")
        p1, p2, s1, s2 = sign_change_search(S, lo, hi, self.gap(t), s_lo, s_hi)
        if abs(s1) < POINT_MASS_THRESHOLD:
            return Forecast(p1, s_value=s1, branch="Root", bracket=(s1, s2))
        tau = abs(s2) / (abs(s1) + abs(s2))
        rng = rng if rng is not None else np.random.default_rng()
        first = rng.random() < tau
        return Forecast(p1 if first else p2, distribution=((p1, tau), (p2, 1.0 - tau)),
                        s_value=s1 if first else s2, branch="Hedge", bracket=(s1, s2))

    def residual(self, p, y) -> float:
        return float(y <= p) - self.q

    def update(self, x, forecast, y) -> None:
        p = forecast.value
        r = self.residual(p, y)
        x = np.asarray(x, dtype=float)
        if self.features is not None:
            phi = self.features(x, self.rescale(p))
            self.feature_sum = r * phi if self.feature_sum is None else self.feature_sum + r * phi
        else:
            self.history.append(x, self.rescale(p), r)
        self.t += 1

    def snapshot(self) -> "RandomizedQuantileForecaster":
        snap = RandomizedQuantileForecaster.__new__(RandomizedQuantileForecaster)
        snap.__dict__.update(self.__dict__)
        if self.history is not None:
            snap.history = self.history.frozen()
        return snap


def coverage_residuals(trace: GameTrace, q: float) -> np.ndarray:
    return (trace.y <= trace.p).astype(float) - q


def conditional_coverage_gap(trace: GameTrace, f: Callable, q: float, signed: bool = False) -> float:
    """|sum_t f(x_t, p_t)(1{y_t <= p_t} - q)|."""
    w = np.array([f(r.x, r.p) for r in trace], dtype=float)
    total = float(w @ coverage_residuals(trace, q))
    return total if signed else abs(total)


def coverage_bound(v_norm: float, L: float, M: float, T: int) -> float:
    """||v|| sqrt(L + M T), with M bounding ||Phi||^2."""
    return v_norm * math.sqrt(L + M * T)


def group_gaps(trace: GameTrace, q: float, groups: Callable[[np.ndarray], int], n_groups: int) -> np.ndarray:
    """Signed sums for each group indicator, followed by the marginal (f = 1) sum."""
    r = coverage_residuals(trace, q)
    g = np.array([groups(x) for x in trace.x], dtype=int)
    out = np.array([r[g == i].sum() for i in range(n_groups)] + [r.sum()])
    return out
