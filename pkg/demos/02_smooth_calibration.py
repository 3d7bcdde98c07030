"""
Calibration with the Fermi-Sobolev kernel
=========================================

A DMM over the Fermi-Sobolev kernel on [0, 1] keeps every 1-Lipschitz test
function's weighted residual sum small. We measure the smooth calibration
error exactly with a linear program and compare it with sqrt(8T/3).
"""

import math

import numpy as np

from defensive_forecasting.calibration import (RoundedForecaster, binned_calibration_error,
                                               rounded_calibration_bound, smooth_calibration_error)
from defensive_forecasting.core import Bernoulli, nature_adaptive, play_game
from defensive_forecasting.dmm import DMM

T = 1000
natures = {
    "bernoulli(0.3)": nature_adaptive(lambda h, f: Bernoulli(0.3)),
    "flip": nature_adaptive(lambda h, f: int(f.value < 0.5)),
    "alternating": nature_adaptive(lambda h, f: (h.T + 1) % 2),
}

for name, nature in natures.items():
    trace = play_game(DMM("fs"), nature, T, seed=1)
    smce = smooth_calibration_error(trace.p, trace.y)
    print(f"{name:15s} smCE {smce:7.3f}   sqrt(8T/3) = {math.sqrt(8 * T / 3):.2f}")

# the witness function shows where the residuals pile up
trace = play_game(DMM("fs"), natures["flip"], 200, seed=1)
value, f = smooth_calibration_error(trace.p, trace.y, return_f=True)
print(f"\nflip, T=200: smCE {value:.3f}, witness range [{f.min():.2f}, {f.max():.2f}]")

# rounding forecasts to a grid of N + 1 points makes binned calibration meaningful
N = 10
trace = play_game(RoundedForecaster(DMM("fs"), N), natures["flip"], T, seed=2)
table = binned_calibration_error(trace.p, trace.y, N)
print(f"\nrounded to 1/{N}: bin counts {table.counts.tolist()}")
print(f"max bin error {table.max_error:.1f} <= {rounded_calibration_bound(T, N, 0.05):.1f}")
print("forecast values used:", np.unique(trace.p))
