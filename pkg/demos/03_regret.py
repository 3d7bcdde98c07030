"""
Regret against constants and linear predictors
==============================================

Squared-loss regret follows from driving the right residual sums to zero.
With the feature map (1, p, x) the forecaster competes with every linear
predictor in the unit ball; we compare it with online gradient descent.
"""

import math

from defensive_forecasting.core import play_game
from defensive_forecasting.dmm import DMM
from defensive_forecasting.harness import make_nature
from defensive_forecasting.losses import (OnlineGradient, linear_feature_map, linear_regret_bound,
                                          regret_vs_constant, regret_vs_linear, risk_feature_map,
                                          risk_regret_bound)

T, d = 2000, 5

# constant actions, flip adversary
trace = play_game(DMM(risk_feature_map("square")), make_nature({"nature": "flip"}), T)
print(f"regret vs best constant: {regret_vs_constant(trace, 'square'):7.2f}  (bound {risk_regret_bound(T):.1f})")

# linear predictors with ||w|| <= 1 and contexts in the unit ball
for spec in ("realizable", "linear-logistic", "flip"):
    nature = make_nature({"nature": spec, "d": d})
    dmm = regret_vs_linear(play_game(DMM(linear_feature_map(d)), nature, T, seed=3), 1.0)
    ogd = regret_vs_linear(play_game(OnlineGradient(d, 1 / math.sqrt(T), 1.0), nature, T, seed=3), 1.0)
    print(f"{spec:16s} DMM regret {dmm:8.2f}   OGD regret {ogd:8.2f}")
print(f"guarantee for DMM: {linear_regret_bound(T, 1.0):.1f}")
