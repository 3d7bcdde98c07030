"""
Predicting bits with a constant kernel
======================================

The smallest game: no contexts, binary outcomes and the feature map
Phi = 1. The forecaster keeps a running residual sum and says 1 only when
that sum is positive.
"""

import numpy as np

from defensive_forecasting.core import nature_adaptive, play_game
from defensive_forecasting.dmm import bit_predictor

T = 1000
ys = np.random.default_rng(0).integers(0, 2, T)

# nature reads the outcomes from a fixed table
trace = play_game(bit_predictor(), nature_adaptive(lambda h, f: int(ys[h.T])), T)

print("first forecasts ", trace.p[:12].astype(int))
print("first outcomes  ", trace.y[:12])

# the mean forecast trails the mean outcome by exactly y_T / T
gap = (trace.p.sum() - trace.y.sum()) / T
print(f"mean forecast - mean outcome = {gap:+.4f}, y_T / T = {ys[-1] / T:.4f}")

# an adversary that always plays the opposite bit cannot do better than 1/T
flip = nature_adaptive(lambda h, f: int(f.value < 0.5))
trace = play_game(bit_predictor(), flip, T)
print(f"against the flip adversary: gap {abs(trace.p.mean() - trace.y.mean()):.4f}")
