"""Defensive forecasting: sequential forecasts chosen to anticorrelate with past errors."""
from .core import (BINARY, Bernoulli, Forecast, Forecaster, GameTrace, Nature, OutcomeSpace, ReplayNature,
                   Round, SpaceViolation, TraceFormatError, interval, nature_adaptive, play_game)
from .search import Branch, SearchError, SearchResult, anticorrelation_search, default_tolerance, \
    sign_change_search, tolerance_schedule
from .kernels import Kernel, as_kernel, fs_kernel, gram_matrix, parse_kernel
from .dmm import DMM, FeatureMap, bit_predictor, diagonal_bound_terms
from .losses import LOG, SQUARE, ZERO_ONE, Loss, OnlineGradient, bayes_action, constrained_least_squares, \
    get_loss, linear_feature_map, regret_vs_constant, regret_vs_linear, risk_feature_map
from .experts import ExpertPanel, ExpertsForecaster, builtin_experts, experts_regret, parse_expert
from .quantiles import MarginalTracker, RandomizedQuantileForecaster, lipschitz_nature
from .calibration import (RoundedForecaster, binned_calibration_error, round_forecast, round_forecasts,
                          smooth_calibration_error)
from .batch import BatchPredictor, batch_conditional_coverage, batch_risk, online_to_batch

__version__ = "0.1.0"
