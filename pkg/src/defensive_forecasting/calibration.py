"""Calibration metrics: smooth calibration error, randomized rounding, binned error."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import diags, vstack

from .core import Forecast, Forecaster

GRID_TOL = 1e-9


def merge_residuals(p, y) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct forecasts and the residual sum sum (y - p) at each."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape or p.size == 0:
        raise ValueError("need equally long, nonempty forecast and outcome arrays")
    values, inverse = np.unique(p, return_inverse=True)
    c = np.zeros(len(values))
    np.add.at(c, inverse, y - p)
    return values, c


def smooth_calibration_error(p, y, return_f: bool = False):
    """sup over 1-Lipschitz f: [0,1] -> [0,1] of |sum_t f(p_t)(y_t - p_t)|.

    Only the values of f at the distinct forecasts matter. Lipschitz
    constraints between neighbours suffice (they telescope to all pairs),
    leaving a small LP that is solved once for each sign of the objective.
    """
    v, c = merge_residuals(p, y)
    n = len(v)
    if n == 1:
        # f = 1 attains |c| whichever its sign
        val = abs(float(c[0]))
        return (val, np.ones(1)) if return_f else val
    D = diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    A = vstack([D, -D]).tocsr()
    gaps = np.diff(v)
    b = np.concatenate([gaps, gaps])
    best, best_f = -math.inf, None
    for sign in (1.0, -1.0):
        res = linprog(-sign * c, A_ub=A, b_ub=b, bounds=(0.0, 1.0), method="highs")
        if res.status != 0:
            raise RuntimeError(f"smooth calibration LP failed: {res.message}")
        if -res.fun > best:
            best, best_f = -res.fun, res.x
    best = max(best, 0.0)
    return (best, best_f) if return_f else best


def smce_bound(T: int, slack: float = 0.0) -> float:
    """sqrt(8T/3): the kernel guarantee with sup k_FS = 4/3 and ||f||_FS <= sqrt(2)."""
    return math.sqrt(8.0 * T / 3.0) + slack


def smce_headline(T: int) -> float:
    """sqrt(2T), the tighter figure quoted for the same algorithm."""
    return math.sqrt(2.0 * T)


def bump(eps: float, alpha: float):
    """Triangular bump of height 1 and half-width eps centred at alpha."""
    return lambda p: np.maximum(0.0, 1.0 - np.abs(np.asarray(p, dtype=float) - alpha) / eps)


def _snap(k: np.ndarray) -> np.ndarray:
    # absorb only the float error of N * p, so rounding stays unbiased for tiny p
    r = np.round(k)
    return np.where(np.abs(k - r) <= 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(k)), r, k)


def round_forecasts(p, N: int, rng: np.random.Generator) -> np.ndarray:
    """Unbiased randomized rounding onto {0, 1/N, ..., 1}.

    ``p`` goes up to ``ceil(Np)/N`` with probability ``frac(Np)`` and down
    otherwise, so the nearer grid point gets more mass and ``E = p``.
    """
    if N < 1:
        raise ValueError("grid size must be positive")
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("forecasts must lie in [0, 1]")
    k = _snap(N * p)
    lo = np.floor(k)
    frac = k - lo
    up = rng.random(p.shape) < frac
    return (lo + up) / N


def round_forecast(p: float, N: int, rng: np.random.Generator) -> float:
    return float(round_forecasts(np.array([p]), N, rng)[0])


def rounding_probabilities(p: float, N: int) -> dict[float, float]:
    """Exact law of ``round_forecast(p, N)`` as {grid value: probability}."""
    k = float(_snap(np.array([N * p]))[0])
    lo = math.floor(k)
    frac = k - lo
    if frac == 0.0:
        return {lo / N: 1.0}
    return {lo / N: 1.0 - frac, (lo + 1) / N: frac}


class RoundedForecaster(Forecaster):
    """Reveal ``round_forecast(p, N)`` in place of the wrapped forecaster's ``p``.

    Nature sees the rounded value; the wrapped forecaster is updated with its
    own unrounded forecast.
    """

    def __init__(self, inner: Forecaster, N: int):
        if N < 1:
            raise ValueError("grid size must be positive")
        self.inner = inner
        self.N = N
        self.outcome_space = inner.outcome_space
        self._pending = None

    def predict(self, x, rng=None) -> Forecast:
        rng = rng if rng is not None else np.random.default_rng()
        f = self.inner.predict(x, rng)
        self._pending = f
        law = sorted(rounding_probabilities(f.value, self.N).items())
        value = round_forecast(f.value, self.N, rng)
        return Forecast(value, distribution=tuple(law) if len(law) == 2 else None, branch=f.branch)

    def update(self, x, forecast, y) -> None:
        self.inner.update(x, self._pending, y)
        self._pending = None

    def snapshot(self) -> "RoundedForecaster":
        return RoundedForecaster(self.inner.snapshot(), self.N)


@dataclass
class BinTable:
    grid: np.ndarray
    errors: np.ndarray
    counts: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.max(np.abs(self.errors)))


def binned_calibration_error(p, y, N: int) -> BinTable:
    """Per-bin signed error sum_t 1{p_t = n/N}(n/N - y_t) for on-grid forecasts."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    k = N * p
    idx = np.round(k)
    if np.any(np.abs(k - idx) > GRID_TOL) or np.any((idx < 0) | (idx > N)):
        bad = p[np.abs(k - idx) > GRID_TOL]
        raise ValueError(f"forecasts off the 1/{N} grid, e.g. {bad[:3]}")
    idx = idx.astype(int)
    grid = np.arange(N + 1) / N
    errors = np.zeros(N + 1)
    np.add.at(errors, idx, grid[idx] - y)
    counts = np.bincount(idx, minlength=N + 1)
    return BinTable(grid, errors, counts)


def rounded_calibration_bound(T: int, N: int, delta: float) -> float:
    """sqrt(T)(sqrt((8N + 2)/3) + sqrt(2 log(2(N + 1)/delta))) + T/(2N)."""
    return (math.sqrt(T) * (math.sqrt((8 * N + 2) / 3.0) + math.sqrt(2.0 * math.log(2 * (N + 1) / delta)))
            + T / (2.0 * N))
