"""Aggregating expert advice with an exponential potential over per-expert gaps.

Each expert j carries a gap ``F_j(x, p, y)``; ``Q_j`` accumulates it and the
forecaster keeps ``log sum_j exp(Q_j)`` from growing. When every gap obeys

    p exp(F_j(x, p, 1)) + (1 - p) exp(F_j(x, p, 0)) <= 1

(checked by :func:`assumption_value`), the potential never increases beyond
the search tolerance, so ``max_j Q_j <= log N + sum eps_t``.
"""
from __future__ import annotations

import copy
import math
from collections import deque
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import BINARY, Forecast, Forecaster, GameTrace
from .search import anticorrelation_search, cumulative_tolerance, tolerance_schedule

LOG_CLAMP = 1e-6


class Expert:
    """An expert maps the round index and context to a forecast in [0, 1]."""

    name = "expert"

    def __call__(self, t: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def observe(self, y) -> None:
        pass


class ConstantExpert(Expert):
    def __init__(self, c: float):
        if not 0.0 <= c <= 1.0:
            raise ValueError("constant expert must lie in [0, 1]")
        self.c = float(c)
        self.name = f"constant:{c!r}"

    def __call__(self, t, x):
        return self.c


class LinearExpert(Expert):
    """<w, x> + b clipped to [0, 1]."""

    def __init__(self, w, b: float = 0.0):
        self.w = np.asarray(w, dtype=float)
        self.b = float(b)
        self.name = "linear"

    def __call__(self, t, x):
        return float(np.clip(self.w @ x + self.b, 0.0, 1.0))


class LaggedMeanExpert(Expert):
    """Mean of the last ``k`` outcomes (1/2 before any outcome is seen)."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("lag must be positive")
        self.k = k
        self.recent = deque(maxlen=k)
        self.name = f"lagged-mean:{k}"

    def __call__(self, t, x):
        return sum(self.recent) / len(self.recent) if self.recent else 0.5

    def observe(self, y):
        self.recent.append(float(y))


class TableExpert(Expert):
    """Precomputed forecasts, one per round."""

    def __init__(self, values: Sequence[float], name: str = "table"):
        self.values = np.asarray(values, dtype=float)
        self.name = name

    def __call__(self, t, x):
        return float(self.values[t - 1])


def parse_expert(text: str) -> Expert:
    """Build an expert from ``constant:c``, ``lagged-mean:k`` or ``linear:<w>``.

    ``<w>`` is a comma-separated weight list or a path to a file holding one.
    """
    kind, _, arg = text.partition(":")
    if kind == "constant":
        return ConstantExpert(float(arg))
    if kind == "lagged-mean":
        return LaggedMeanExpert(int(arg))
    if kind == "linear":
        try:
            w = [float(v) for v in arg.split(",")]
        except ValueError:
            w = np.loadtxt(arg, delimiter=",", ndmin=1)
        return LinearExpert(w)
    raise ValueError(f"unknown expert {text!r}")


def builtin_experts(n: int = 10) -> list[Expert]:
    """``n`` constant experts spread evenly over (0, 1)."""
    return [ConstantExpert((j + 0.5) / n) for j in range(n)]


class ExpertPanel:
    """Experts plus the loss defining their gaps.

    ``loss="square"`` uses ``F_j = lam ((p - y)^2 - (f_j - y)^2)`` with
    ``0 < lam <= 2``; ``loss="log"`` uses the log-loss difference with
    forecasts clamped to ``[delta, 1 - delta]``.
    """

    def __init__(self, experts: Sequence[Expert], loss: str = "square", lam: float = 2.0,
                 delta: float = LOG_CLAMP, check: bool = True):
        if len(experts) < 1:
            raise ValueError("panel needs at least one expert")
        if loss not in ("square", "log"):
            raise ValueError("expert loss must be 'square' or 'log'")
        if loss == "square" and check and not 0.0 < lam <= 2.0:
            raise ValueError("squared-loss gaps need 0 < lam <= 2")
        self.experts = list(experts)
        self.loss = loss
        self.lam = float(lam) if loss == "square" else 1.0
        self.delta = float(delta)

    def __len__(self):
        return len(self.experts)

    @property
    def domain(self) -> tuple[float, float]:
        if self.loss == "log":
            return self.delta, 1.0 - self.delta
        return 0.0, 1.0

    def forecasts(self, t: int, x) -> np.ndarray:
        f = np.array([e(t, x) for e in self.experts], dtype=float)
        if np.any((f < 0) | (f > 1)):
            raise ValueError("expert forecasts must lie in [0, 1]")
        if self.loss == "log":
            f = np.clip(f, self.delta, 1.0 - self.delta)
        return f

    def observe(self, y) -> None:
        for e in self.experts:
            e.observe(y)

    def base_loss(self, a, y):
        """Loss of the action (unscaled by lam)."""
        a = np.asarray(a, dtype=float)
        if self.loss == "square":
            return (a - y) ** 2
        a = np.clip(a, self.delta, 1.0 - self.delta)
        return -np.log(a) if y == 1 else -np.log1p(-a)

    def gaps(self, f: np.ndarray, p: float, y) -> np.ndarray:
        """F_j(x, p, y) for the expert forecasts ``f`` in canonical argument order."""
        return self.lam * (self.base_loss(p, y) - self.base_loss(f, y))

    def summary(self, f: np.ndarray, alpha: np.ndarray):
        """S(p) = sum_j alpha_j exp(F_j(p, 1)) - sum_j alpha_j exp(F_j(p, 0)).

        Both sums factor into a p-dependent scalar times a p-free weight, so
        each evaluation is a handful of scalar operations.
        """
        lam = self.lam
        if self.loss == "square":
            a1 = float(alpha @ np.exp(-lam * (f - 1.0) ** 2))
            a0 = float(alpha @ np.exp(-lam * f * f))
            return lambda p: math.exp(lam * (p - 1.0) ** 2) * a1 - math.exp(lam * p * p) * a0
        a1 = float(alpha @ f)
        a0 = float(alpha @ (1.0 - f))
        return lambda p: a1 / p - a0 / (1.0 - p)


def assumption_value(panel: ExpertPanel, f, p):
    """p exp(F(f, p, 1)) + (1 - p) exp(F(f, p, 0)); at most 1 when the assumption holds."""
    f = np.asarray(f, dtype=float)
    return p * np.exp(panel.gaps(f, p, 1)) + (1.0 - p) * np.exp(panel.gaps(f, p, 0))


def assumption_max(panel: ExpertPanel, n: int = 201) -> float:
    """Largest assumption value over an (f, p) grid on the panel's domain."""
    lo, hi = panel.domain
    grid = np.linspace(lo, hi, n)
    return float(max(assumption_value(panel, grid, p).max() for p in grid))


def hoeffding_envelope(lam: float, p, f):
    """exp((lam^2 / 2 - lam)(p - f)^2), an upper bound on the squared-loss assumption value."""
    return np.exp((0.5 * lam * lam - lam) * (np.asarray(p) - np.asarray(f)) ** 2)


class ExpertsForecaster(Forecaster):
    """Potential-based aggregation of an :class:`ExpertPanel`.

    ``Q`` holds the cumulative gaps in the log domain; mixture weights are a
    max-shifted softmax of ``Q``.
    """

    outcome_space = BINARY

    def __init__(self, panel: ExpertPanel, tolerance="default"):
        self.panel = panel
        self.tolerance = tolerance_schedule(tolerance)
        self.Q = np.zeros(len(panel))
        self.t = 0

    @property
    def alpha(self) -> np.ndarray:
        w = np.exp(self.Q - self.Q.max())
        return w / w.sum()

    @property
    def log_potential(self) -> float:
        return float(logsumexp(self.Q))

    def predict(self, x, rng=None) -> Forecast:
        t = self.t + 1
        f = self.panel.forecasts(t, x)
        S = self.panel.summary(f, self.alpha)
        lo, hi = self.panel.domain
        res = anticorrelation_search(S, self.tolerance(t), lo, hi)
        return Forecast(res.p, s_value=res.residual, branch=res.branch.value)

    def update(self, x, forecast, y) -> None:
        f = self.panel.forecasts(self.t + 1, x)
        self.Q = self.Q + self.panel.gaps(f, forecast.value, y)
        self.panel.observe(y)
        self.t += 1

    def snapshot(self) -> "ExpertsForecaster":
        snap = ExpertsForecaster.__new__(ExpertsForecaster)
        snap.__dict__.update(self.__dict__)
        if any(not isinstance(e, (ConstantExpert, LinearExpert, TableExpert)) for e in self.panel.experts):
            snap.panel = copy.deepcopy(self.panel)
        return snap


def replay_gaps(trace: GameTrace, panel: ExpertPanel) -> np.ndarray:
    """(T, N) array of gaps F_j recomputed along the trace.

    The panel must be fresh: stateful experts are advanced as the trace is read.
    """
    out = np.empty((trace.T, len(panel)))
    for i, r in enumerate(trace):
        f = panel.forecasts(r.t, r.x)
        out[i] = panel.gaps(f, r.p, r.y)
        panel.observe(r.y)
    return out


def experts_regret(trace: GameTrace, panel: ExpertPanel) -> float:
    """max_j sum_t [loss(p_t, y_t) - loss(f_j(x_t), y_t)] on a fresh panel."""
    return float(replay_gaps(trace, panel).sum(axis=0).max() / panel.lam)


def experts_regret_bound(panel: ExpertPanel, T: int, tolerance="default") -> float:
    """(log N + sum eps_t) / lam; log loss adds T (-log(1 - delta)) for the clamp."""
    bound = (math.log(len(panel)) + cumulative_tolerance(tolerance, T)) / panel.lam
    if panel.loss == "log":
        bound += T * -math.log1p(-panel.delta)
    return bound
