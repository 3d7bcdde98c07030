"""Online-to-batch conversion: a uniform mixture over an online forecaster's snapshots."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Forecast, Forecaster, GameTrace, OutcomeSpace, ReplayNature, play_game


class BatchPredictor:
    """Predict by drawing a snapshot uniformly at random and asking it for a forecast.

    ``snapshots[i]`` is the forecaster frozen after the first ``i`` rounds, so
    it answers as the online forecaster would have at round ``i + 1``.
    """

    def __init__(self, snapshots: Sequence[Forecaster]):
        if not snapshots:
            raise ValueError("need at least one snapshot")
        self.snapshots = list(snapshots)

    def __len__(self):
        return len(self.snapshots)

    def snapshot_forecast(self, i: int, x, rng: np.random.Generator) -> Forecast:
        return self.snapshots[i].predict(np.asarray(x, dtype=float), rng)

    def predict(self, x, rng: np.random.Generator) -> Forecast:
        i = int(rng.integers(len(self.snapshots)))
        return self.snapshot_forecast(i, x, rng)


def online_to_batch(forecaster: Forecaster, xs, ys, seed=0,
                    outcome_space: OutcomeSpace | None = None) -> tuple[BatchPredictor, GameTrace]:
    """Run ``forecaster`` once over the dataset, keeping a snapshot before each round."""
    space = outcome_space or forecaster.outcome_space
    snaps = [forecaster.snapshot()]
    trace = play_game(forecaster, ReplayNature(xs, ys, space), len(ys), seed,
                      on_round=lambda r: snaps.append(forecaster.snapshot()))
    return BatchPredictor(snaps[:-1]), trace


@dataclass
class Estimate:
    mean: float
    stderr: float
    n: int

    def __str__(self):
        return f"{self.mean:.6g} ± {self.stderr:.2g}"


def _estimate(values) -> Estimate:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.inf
    return Estimate(float(v.mean()), se, len(v))


def batch_risk(predictor: BatchPredictor, sampler: Callable, loss: Callable, replicates: int = 256,
               points: int = 64, seed=0) -> Estimate:
    """Monte Carlo risk E loss(p, y) with (x, y) from ``sampler(rng, m)`` and p from the predictor.

    Each replicate averages ``points`` fresh draws; the standard error is
    taken across replicate means.
    """
    rng = np.random.default_rng(seed)
    means = []
    for _ in range(replicates):
        X, y = sampler(rng, points)
        p = np.array([predictor.predict(x, rng).value for x in X])
        means.append(float(np.mean(loss(p, y))))
    return _estimate(means)


def batch_excess_risk(predictor: BatchPredictor, comparator: Callable, sampler: Callable, loss: Callable,
                      replicates: int = 256, points: int = 64, seed=0) -> Estimate:
    """E[loss(p, y) - loss(h(x), y)] on shared draws, which cancels most outcome noise."""
    rng = np.random.default_rng(seed)
    means = []
    for _ in range(replicates):
        X, y = sampler(rng, points)
        p = np.array([predictor.predict(x, rng).value for x in X])
        h = np.array([comparator(x) for x in X])
        means.append(float(np.mean(loss(p, y) - loss(h, y))))
    return _estimate(means)


def replicated_excess_risk(make_forecaster: Callable[[], Forecaster], comparator,
                           sampler: Callable, loss: Callable, n: int, replicates: int = 256,
                           points: int = 64, seed=0) -> Estimate:
    """Excess risk averaged over fresh training sets as well as fresh test points.

    Each replicate draws ``n`` training pairs, converts a new forecaster and
    scores it on ``points`` test draws, so the estimate targets the
    expectation over the data that the online-to-batch guarantee bounds.
    ``comparator`` may be a list of hypotheses; the one with the smallest
    average test loss is used, paired draw by draw.
    """
    comps = list(comparator) if isinstance(comparator, (list, tuple)) else [comparator]
    ss = np.random.SeedSequence(seed)
    ours = np.empty(replicates)
    theirs = np.empty((replicates, len(comps)))
    for k, child in enumerate(ss.spawn(replicates)):
        rng = np.random.default_rng(child)
        X, y = sampler(rng, n)
        predictor, _ = online_to_batch(make_forecaster(), X, y, seed=int(rng.integers(2**32)))
        Xt, yt = sampler(rng, points)
        p = np.array([predictor.predict(x, rng).value for x in Xt])
        ours[k] = np.mean(loss(p, yt))
        for j, h in enumerate(comps):
            theirs[k, j] = np.mean(loss(np.array([h(x) for x in Xt]), yt))
    best = int(np.argmin(theirs.mean(axis=0)))
    return _estimate(ours - theirs[:, best])


@dataclass
class GroupCoverage:
    name: str
    mass: float
    deviation: float | None  # |P(y <= p | f = 1) - q|, None when the group was never hit
    stderr: float | None
    bound: float | None

    @property
    def defined(self) -> bool:
        return self.deviation is not None

    @property
    def passed(self) -> bool | None:
        if not self.defined:
            return None
        return self.deviation <= self.bound + 2.0 * self.stderr


def conditional_coverage_bound(n: int, L: float, C: float, n_groups: int, delta: float, mass: float) -> float:
    """(sqrt(L)/n + 2 C sqrt((1 + log(2 |F| / delta)) / n)) / P(f = 1)."""
    return (math.sqrt(L) / n + 2.0 * C * math.sqrt((1.0 + math.log(2.0 * n_groups / delta)) / n)) / mass


def batch_conditional_coverage(predictor: BatchPredictor, sampler: Callable, groups: dict[str, Callable],
                               q: float, n: int, L: float, C: float, delta: float = 0.1,
                               replicates: int = 256, points: int = 64, seed=0) -> list[GroupCoverage]:
    """Per-group coverage deviation of a batch quantile predictor.

    ``sampler(rng, m)`` returns contexts and outcomes; each group is a binary
    function ``f(x, p)``. The deviation is the ratio of the mean of
    ``f (1{y <= p} - q)`` to the group mass, with a delta-method standard
    error from the replicate means.
    """
    rng = np.random.default_rng(seed)
    names = list(groups)
    num = np.zeros((replicates, len(names)))
    den = np.zeros((replicates, len(names)))
    for r in range(replicates):
        X, y = sampler(rng, points)
        p = np.array([predictor.predict(x, rng).value for x in X])
        res = (np.asarray(y) <= p).astype(float) - q
        for j, name in enumerate(names):
            f = np.array([float(groups[name](x, pi)) for x, pi in zip(X, p)])
            num[r, j] = np.mean(f * res)
            den[r, j] = np.mean(f)
    out = []
    for j, name in enumerate(names):
        mass = float(den[:, j].mean())
        if mass == 0.0:
            out.append(GroupCoverage(name, 0.0, None, None, None))
            continue
        a = num[:, j].mean()
        # ratio estimator: linearize a/b around the means
        z = (num[:, j] - (a / mass) * den[:, j]) / mass
        se = float(z.std(ddof=1) / math.sqrt(replicates))
        out.append(GroupCoverage(name, mass, abs(float(a / mass)), se,
                                 conditional_coverage_bound(n, L, C, len(names), delta, mass)))
    return out


def snapshot_risks(predictor: BatchPredictor, X, y, loss: Callable, rng: np.random.Generator) -> np.ndarray:
    """Mean loss of every snapshot on a shared test set (rows: snapshots)."""
    out = np.empty(len(predictor))
    for i in range(len(predictor)):
        p = np.array([predictor.snapshot_forecast(i, x, rng).value for x in X])
        out[i] = np.mean(loss(p, y))
    return out
