"""
From online forecasts to a batch predictor
==========================================

Snapshot the forecaster before every round and predict with a uniformly
chosen snapshot. On i.i.d. data the expected excess risk of that mixture
is at most the online regret divided by n.
"""

import math

import numpy as np

from defensive_forecasting.batch import online_to_batch, replicated_excess_risk
from defensive_forecasting.experts import ConstantExpert, ExpertPanel, ExpertsForecaster

thetas = [round(0.1 * k, 1) for k in range(1, 9)]


def make():
    return ExpertsForecaster(ExpertPanel([ConstantExpert(c) for c in thetas], loss="log"))


def sampler(rng, m):
    return np.zeros((m, 0)), (rng.random(m) < 0.3).astype(int)


def log_loss(p, y):
    p = np.clip(p, 1e-6, 1 - 1e-6)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


rng = np.random.default_rng(5)
X, y = sampler(rng, 500)
predictor, trace = online_to_batch(make(), X, y)
print(f"{len(predictor)} snapshots; forecasts drift from {trace.p[0]:.3f} to {trace.p[-1]:.3f}")

for n in (250, 1000):
    est = replicated_excess_risk(make, [(lambda c: lambda x: c)(c) for c in thetas], sampler, log_loss, n,
                                 replicates=64, points=64)
    print(f"n={n:5d}: excess risk {est.mean:.5f} +- {est.stderr:.5f}   log 8 / n = {math.log(8) / n:.5f}")
