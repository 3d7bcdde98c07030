"""Losses, Bayes actions, and the feature maps that turn DMM into a risk minimizer."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .core import BINARY, Forecast, Forecaster, GameTrace
from .dmm import FeatureMap

LOG_CLAMP = 1e-6


@dataclass(frozen=True)
class Loss:
    """A loss on actions in [0, 1] and binary outcomes.

    ``pi`` maps a probability to the action minimizing the Bernoulli-expected
    loss; ``B`` bounds ``|loss(a, 1) - loss(a, 0)|``; ``continuous`` says
    whether that discrete derivative composed with ``pi`` is continuous in p.
    """

    name: str
    fn: Callable
    pi: Callable[[float], float]
    B: float
    continuous: bool = True

    def __call__(self, a, y):
        return self.fn(np.asarray(a, dtype=float), np.asarray(y, dtype=float))

    def discrete_derivative(self, a):
        return self(a, 1.0) - self(a, 0.0)

    def expected(self, a, p):
        """E_{y ~ Ber(p)} loss(a, y)."""
        return p * self(a, 1.0) + (1.0 - p) * self(a, 0.0)


def _square(a, y):
    return (y - a) ** 2


def _zero_one(a, y):
    return ((a >= 0.5) != (y >= 0.5)).astype(float)


def _log(a, y):
    a = np.clip(a, LOG_CLAMP, 1.0 - LOG_CLAMP)
    return -(y * np.log(a) + (1.0 - y) * np.log1p(-a))


SQUARE = Loss("square", _square, lambda p: float(p), 1.0)
ZERO_ONE = Loss("zeroone", _zero_one, lambda p: 1.0 if p >= 0.5 else 0.0, 1.0, continuous=False)
LOG = Loss("log", _log, lambda p: float(p), math.inf)

LOSSES = {loss.name: loss for loss in (SQUARE, ZERO_ONE, LOG)}


def get_loss(name: str | Loss) -> Loss:
    if isinstance(name, Loss):
        return name
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None


def bayes_action(loss: Loss | str, p: float) -> float:
    """Minimizer of the Bernoulli(p)-expected loss; ties go to the larger action."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    return get_loss(loss).pi(p)


def risk_feature_map(loss: Loss | str) -> FeatureMap:
    """Phi(x, p) = (loss(pi(p), 1) - loss(pi(p), 0), B), with ||Phi||^2 <= 2 B^2."""
    loss = get_loss(loss)
    if not loss.continuous:
        raise ValueError(f"{loss.name} loss has a discontinuous discrete derivative; "
                         "deterministic DMM is unsupported for it")
    if not math.isfinite(loss.B):
        raise ValueError(f"{loss.name} loss has an unbounded discrete derivative")
    B = loss.B

    def phi(x, p):
        return np.array([float(loss.discrete_derivative(loss.pi(p))), B])

    return FeatureMap(phi, 2, math.sqrt(2.0) * B, True, f"risk:{loss.name}")


def linear_feature_map(d: int, x_bound: float = 1.0) -> FeatureMap:
    """Phi(x, p) = (1, p, x) with ||Phi||^2 <= 2 + x_bound^2."""
    if d < 0:
        raise ValueError("context dimension must be nonnegative")

    def phi(x, p):
        out = np.empty(d + 2)
        out[0] = 1.0
        out[1] = p
        out[2:] = x
        return out

    return FeatureMap(phi, d + 2, math.sqrt(2.0 + x_bound ** 2), True, "linear")


def best_constant(loss: Loss | str, y, step: float = 1e-4) -> tuple[float, float]:
    """(a*, total loss) minimizing sum loss(a, y_t): a grid search then bounded refinement."""
    loss = get_loss(loss)
    y = np.asarray(y, dtype=float)
    n1 = y.sum()
    n0 = len(y) - n1

    def total(a):
        return float(n1 * loss(a, 1.0) + n0 * loss(a, 0.0))

    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    vals = n1 * loss(grid, 1.0) + n0 * loss(grid, 0.0)
    i = int(np.argmin(vals))
    a, v = float(grid[i]), float(vals[i])
    lo, hi = max(0.0, a - step), min(1.0, a + step)
    if hi > lo:
        res = minimize_scalar(total, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        if res.fun < v:
            a, v = float(res.x), float(res.fun)
    return a, v


def regret_vs_constant(trace: GameTrace, loss: Loss | str) -> float:
    """sum loss(pi(p_t), y_t) - min_a sum loss(a, y_t)."""
    loss = get_loss(loss)
    actions = np.array([bayes_action(loss, p) for p in trace.p])
    y = trace.y
    return float(np.sum(loss(actions, y))) - best_constant(loss, y)[1]


def risk_regret_bound(T: int, B: float = 1.0) -> float:
    return 2.0 * B * math.sqrt(2.0 * T)


@dataclass(frozen=True)
class LeastSquaresResult:
    w: np.ndarray
    value: float
    iterations: int
    grad_map_norm: float


def project_ball(w: np.ndarray, M: float) -> np.ndarray:
    n = np.linalg.norm(w)
    return w if n <= M else w * (M / n)


def constrained_least_squares(X, y, M: float, tol: float = 1e-8,
                              max_iter: int = 200_000) -> LeastSquaresResult:
    """min ||y - X w||^2 over ||w|| <= M by accelerated projected gradient.

    Stops once the gradient mapping ``L (w - proj(w - grad / L))`` has norm at
    most ``tol``; at an interior optimum this is the plain gradient norm.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[1] == 0:
        return LeastSquaresResult(np.zeros(0), float(y @ y), 0, 0.0)
    G = X.T @ X
    b = X.T @ y
    L = 2.0 * float(np.linalg.eigvalsh(G)[-1])
    if L == 0.0:
        return LeastSquaresResult(np.zeros(X.shape[1]), float(y @ y), 0, 0.0)

    def grad(w):
        return 2.0 * (G @ w - b)

    def f(w):
        return float(w @ G @ w - 2.0 * b @ w)

    w = np.zeros(X.shape[1])
    fw = 0.0
    z, theta = w.copy(), 1.0
    gm = math.inf
    for it in range(1, max_iter + 1):
        w_new = project_ball(z - grad(z) / L, M)
        f_new = f(w_new)
        if f_new > fw:
            # momentum overshot: restart from a plain projected step
            z, theta = w.copy(), 1.0
            w_new = project_ball(w - grad(w) / L, M)
            f_new = f(w_new)
        # convergence measured at the iterate itself, not the extrapolated point
        gm = L * float(np.linalg.norm(w_new - project_ball(w_new - grad(w_new) / L, M)))
        if gm <= tol:
            w = w_new
            break
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        z = w_new + ((theta - 1.0) / theta_new) * (w_new - w)
        w, fw, theta = w_new, f_new, theta_new
    r = y - X @ w
    return LeastSquaresResult(w, float(r @ r), it, gm)


def regret_vs_linear(trace: GameTrace, M: float, tol: float = 1e-8) -> float:
    """sum (y_t - p_t)^2 - min_{||w|| <= M} sum (y_t - <w, x_t>)^2."""
    r = trace.y - trace.p
    return float(r @ r) - constrained_least_squares(trace.x, trace.y, M, tol).value


def linear_regret_bound(T: int, M: float, B: float = 1.0) -> float:
    return 2.0 * math.sqrt(T * (5.0 + 4.0 * M * M) * (2.0 + B * B))


class OnlineGradient(Forecaster):
    """Online gradient baseline: p_t = <w_t, x_t>, w_{t+1} = w_t - alpha (p_t - y_t) x_t.

    With ``radius`` set, each iterate is projected onto the ball of that radius.
    """

    outcome_space = BINARY

    def __init__(self, d: int, alpha: float, radius: float | None = None):
        if alpha <= 0:
            raise ValueError("step size must be positive")
        self.w = np.zeros(d)
        self.alpha = alpha
        self.radius = radius

    def predict(self, x, rng=None) -> Forecast:
        return Forecast(float(self.w @ x), branch="OGD")

    def update(self, x, forecast, y) -> None:
        self.w = self.w - self.alpha * (forecast.value - y) * np.asarray(x, dtype=float)
        if self.radius is not None:
            self.w = project_ball(self.w, self.radius)

    def snapshot(self) -> "OnlineGradient":
        snap = OnlineGradient.__new__(OnlineGradient)
        snap.__dict__.update(self.__dict__)
        return snap


def ogd_bound(T: int, alpha: float, M: float, B: float = 1.0) -> float:
    """M^2 / (2 alpha) + alpha M^2 B^4 T / 2."""
    return M * M / (2.0 * alpha) + 0.5 * alpha * M * M * B ** 4 * T
