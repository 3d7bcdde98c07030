"""Natures shared by the test modules."""
import numpy as np
from scipy.special import expit

from defensive_forecasting.core import Bernoulli, Nature


def unit_ball(d):
    def gen(t, history, rng):
        if d == 0:
            return np.empty(0)
        v = rng.normal(size=d)
        return v / np.linalg.norm(v) * rng.random() ** (1.0 / d)
    return gen


def binary_natures(d=0):
    """Five binary natures: two i.i.d., one scheduled and two that watch the forecast."""
    w = np.ones(d) / np.sqrt(d) if d else np.zeros(0)

    def logistic(h, x, f):
        return Bernoulli(float(expit(4.0 * (w @ x)))) if d else Bernoulli(0.7)

    def contrarian(h, x, f):
        # push against the forecast relative to the running frequency
        freq = h.y.mean() if h.T else 0.5
        return int(f.value <= freq)

    strategies = {
        "bernoulli": lambda h, x, f: Bernoulli(0.3),
        "logistic": logistic,
        "alternating": lambda h, x, f: (h.T + 1) % 2,
        "flip": lambda h, x, f: int(f.value < 0.5),
        "contrarian": contrarian,
    }
    return {name: Nature(s, contexts=unit_ball(d), context_dim=d, name=name) for name, s in strategies.items()}
