"""
Following expert advice
=======================

An exponential potential over the experts' cumulative loss gaps. With log
loss and a single expert the forecaster simply copies it; with ten experts
the worst regret stays below log(N)/lambda whatever nature does.
"""

import math

import numpy as np

from defensive_forecasting.core import nature_adaptive, play_game
from defensive_forecasting.experts import (ExpertPanel, ExpertsForecaster, LaggedMeanExpert, builtin_experts,
                                           experts_regret, experts_regret_bound)

T = 5000
flip = nature_adaptive(lambda h, f: int(f.value < 0.5))

for loss, lam in (("square", 2.0), ("log", 1.0)):
    panel = ExpertPanel(builtin_experts(10), loss=loss, lam=lam)
    fc = ExpertsForecaster(panel)
    trace = play_game(fc, flip, T)
    regret = experts_regret(trace, ExpertPanel(builtin_experts(10), loss=loss, lam=lam))
    print(f"{loss:6s} loss: max regret {regret:.3f} <= {experts_regret_bound(panel, T):.3f}")
    print("        final weights", np.round(fc.alpha, 3))

# experts may carry state: a short moving average against a periodic pattern
pattern = nature_adaptive(lambda h, f: int(h.T % 3 != 0))


def lagged():
    return ExpertPanel([LaggedMeanExpert(k) for k in (1, 3, 10)], loss="log")


trace = play_game(ExpertsForecaster(lagged()), pattern, 600)
# a fresh panel replays the experts' forecasts for scoring
print(f"\nlagged means vs period-3 pattern: regret {experts_regret(trace, lagged()):.3f} <= log 3 = {math.log(3):.3f}")
