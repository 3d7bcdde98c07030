"""
Marginal versus conditional coverage
====================================

A deterministic tracker reaches the target quantile level on average
without looking at the data at all: it alternates between the ends of the
outcome range. Conditioning on its own forecast exposes it. The randomized
forecaster keeps coverage near q inside every context group.
"""

import numpy as np

from defensive_forecasting.core import play_game
from defensive_forecasting.harness import make_nature
from defensive_forecasting.quantiles import (MarginalTracker, RandomizedQuantileForecaster, group_feature_map,
                                             group_gaps, quadrant, tracker_bound, tracker_gap)

q, T = 0.9, 2000
nature = make_nature({"nature": "logistic-quantile", "d": 2})
lo, hi = nature.outcome_space.y_min, nature.outcome_space.y_max

# the tracker alternates between the ends of the range
trace = play_game(MarginalTracker(q, lo, hi), nature, T, seed=4)
print(f"tracker: first forecasts {np.round(trace.p[:8], 1)}")
print(f"tracker: |coverage - q| = {float(tracker_gap(trace, q)):.5f} <= {float(tracker_bound(q, T)):.5f}")


hit = trace.y <= trace.p
high = trace.p > 0.5 * (lo + hi)
print(f"tracker coverage given a low / high forecast: {hit[~high].mean():.3f} / {hit[high].mean():.3f}")

fc = RandomizedQuantileForecaster(group_feature_map(quadrant, 4), q, lo, hi)
trace = play_game(fc, nature, T, seed=4)
print(f"\nrandomized per quadrant + marginal: {np.round(group_gaps(trace, q, quadrant, 4) / T, 4)}")
print(f"limit sqrt(L + 3T)/T = {np.sqrt(nature.lipschitz + 3 * T) / T:.4f}")
branches = {}
for r in trace:
    branches[r.forecast.branch] = branches.get(r.forecast.branch, 0) + 1
print("search branches:", branches)
