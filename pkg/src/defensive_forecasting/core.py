"""Sequential prediction game: outcome spaces, records, natures and the game loop.

A game alternates three moves per round: nature reveals a context ``x_t``,
the forecaster commits to a forecast (possibly a two-point distribution),
and nature, having seen that forecast, reveals the outcome ``y_t``.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np


class SpaceViolation(ValueError):
    """An outcome fell outside the declared outcome space."""


class TraceFormatError(ValueError):
    """A serialized trace could not be parsed."""


@dataclass(frozen=True)
class OutcomeSpace:
    """Either the bits {0, 1} or a half-open interval (y_min, y_max]."""

    kind: str = "binary"
    y_min: float = 0.0
    y_max: float = 1.0

    def __post_init__(self):
        if self.kind not in ("binary", "interval"):
            raise ValueError(f"unknown outcome space kind {self.kind!r}")
        if self.kind == "interval" and not self.y_min < self.y_max:
            raise ValueError("interval outcome space needs y_min < y_max")

    @property
    def is_binary(self) -> bool:
        return self.kind == "binary"

    def contains(self, y) -> bool:
        if self.is_binary:
            return y == 0 or y == 1
        return bool(self.y_min < y <= self.y_max)

    def describe(self) -> str:
        if self.is_binary:
            return "binary"
        return f"interval({float(self.y_min)!r},{float(self.y_max)!r})"

    @classmethod
    def parse(cls, text: str) -> "OutcomeSpace":
        text = text.strip()
        if text == "binary":
            return BINARY
        if text.startswith("interval(") and text.endswith(")"):
            lo, hi = text[len("interval("):-1].split(",")
            return cls("interval", float(lo), float(hi))
        raise ValueError(f"cannot parse outcome space {text!r}")


BINARY = OutcomeSpace()


def interval(y_min: float, y_max: float) -> OutcomeSpace:
    return OutcomeSpace("interval", float(y_min), float(y_max))


@dataclass
class Forecast:
    """A revealed forecast plus the per-round diagnostics of the search.

    ``distribution`` is ``None`` for deterministic forecasts; randomized
    forecasters store ``((p1, tau), (p2, 1 - tau))`` and ``value`` is the draw.
    ``s_value`` is the summary function evaluated at ``value`` and
    ``bracket`` holds ``(S(p1), S(p2))`` for hedged rounds.
    """

    value: float
    distribution: tuple | None = None
    s_value: float = 0.0
    branch: str = ""
    bracket: tuple | None = None

    def __post_init__(self):
        if self.distribution is not None:
            (p1, tau), (p2, rest) = self.distribution
            if not 0.0 <= tau <= 1.0 or abs(tau + rest - 1.0) > 1e-12:
                raise ValueError("two-point weights must lie in [0, 1] and sum to 1")
            if p1 == p2:
                raise ValueError("two-point forecast needs distinct support points")

    @property
    def mean(self) -> float:
        if self.distribution is None:
            return self.value
        (p1, tau), (p2, rest) = self.distribution
        return tau * p1 + rest * p2


@dataclass(frozen=True)
class Round:
    t: int
    x: np.ndarray
    forecast: Forecast
    y: float

    @property
    def p(self) -> float:
        return self.forecast.value


def _num(v) -> str:
    # shortest round-trip decimal
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def config_digest(config: dict | None) -> str:
    blob = json.dumps(config or {}, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class GameTrace:
    """Ordered rounds of one game together with its outcome space.

    Serializes to CSV with a one-line JSON header::

        # {"config_digest": ..., "outcome_space": "binary", "seed": 7}
        t,x_0,...,p,y,s_value,branch
    """

    def __init__(self, outcome_space: OutcomeSpace = BINARY, seed=None, config=None,
                 rounds: Iterable[Round] = ()):
        self.outcome_space = outcome_space
        self.seed = seed
        self.config = dict(config or {})
        self.rounds: list[Round] = []
        for r in rounds:
            self.append(r)

    def append(self, r: Round):
        if self.rounds and r.t <= self.rounds[-1].t:
            raise ValueError("round indices must be strictly increasing")
        if not self.outcome_space.contains(r.y):
            raise SpaceViolation(f"outcome {r.y!r} at round {r.t} outside {self.outcome_space.describe()}")
        if self.rounds and len(r.x) != len(self.rounds[0].x):
            raise ValueError("context dimension changed within a game")
        self.rounds.append(r)

    def __len__(self):
        return len(self.rounds)

    def __iter__(self):
        return iter(self.rounds)

    def __getitem__(self, i):
        return self.rounds[i]

    @property
    def T(self) -> int:
        return len(self.rounds)

    @property
    def context_dim(self) -> int:
        return len(self.rounds[0].x) if self.rounds else 0

    @property
    def p(self) -> np.ndarray:
        return np.array([r.forecast.value for r in self.rounds], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.rounds], dtype=float)

    @property
    def x(self) -> np.ndarray:
        return np.array([r.x for r in self.rounds], dtype=float).reshape(len(self.rounds), self.context_dim)

    @property
    def s_values(self) -> np.ndarray:
        return np.array([r.forecast.s_value for r in self.rounds], dtype=float)

    @property
    def branches(self) -> list[str]:
        return [r.forecast.branch for r in self.rounds]

    def prefix(self, n: int) -> "GameTrace":
        return GameTrace(self.outcome_space, self.seed, self.config, self.rounds[:n])

    def header(self) -> dict:
        head = {
            "config_digest": config_digest(self.config),
            "outcome_space": self.outcome_space.describe(),
            "seed": self.seed,
        }
        if self.config:
            head["config"] = self.config
        return head

    def to_csv(self, fh=None) -> str | None:
        buf = io.StringIO() if fh is None else fh
        buf.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
        d = self.context_dim
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{i}" for i in range(d)] + ["p", "y", "s_value", "branch"])
        for r in self.rounds:
            writer.writerow([r.t] + [_num(v) for v in r.x]
                            + [_num(r.forecast.value), _num(r.y), _num(r.forecast.s_value), r.forecast.branch])
        if fh is None:
            return buf.getvalue()
        return None

    def save(self, path):
        with open(path, "w", newline="") as fh:
            self.to_csv(fh)

    @classmethod
    def from_csv(cls, text: str) -> "GameTrace":
        lines = text.splitlines()
        header = {}
        start = 0
        if lines and lines[0].startswith("#"):
            try:
                header = json.loads(lines[0][1:])
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"line 1: bad JSON header: {exc}") from None
            start = 1
        space = OutcomeSpace.parse(header.get("outcome_space", "binary"))
        trace = cls(space, header.get("seed"), header.get("config"))
        reader = csv.reader(lines[start:])
        try:
            cols = next(reader)
        except StopIteration:
            raise TraceFormatError("missing column header") from None
        xcols = [i for i, c in enumerate(cols) if c.startswith("x_")]
        try:
            ip, iy = cols.index("p"), cols.index("y")
        except ValueError:
            raise TraceFormatError(f"line {start + 1}: columns p and y are required") from None
        it = cols.index("t") if "t" in cols else None
        isv = cols.index("s_value") if "s_value" in cols else None
        ib = cols.index("branch") if "branch" in cols else None
        for k, row in enumerate(reader):
            lineno = start + 2 + k
            if not row:
                continue
            if len(row) != len(cols):
                raise TraceFormatError(f"line {lineno}: expected {len(cols)} fields, got {len(row)}")
            try:
                t = int(row[it]) if it is not None else k + 1
                x = np.array([float(row[i]) for i in xcols], dtype=float)
                y = float(row[iy])
                if space.is_binary and y in (0.0, 1.0):
                    y = int(y)
                fc = Forecast(float(row[ip]), s_value=float(row[isv]) if isv is not None else 0.0,
                              branch=row[ib] if ib is not None else "")
                trace.append(Round(t, x, fc, y))
            except (ValueError, SpaceViolation) as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from None
        return trace

    @classmethod
    def load(cls, path) -> "GameTrace":
        with open(path) as fh:
            return cls.from_csv(fh.read())


class Forecaster:
    """Base class for online forecasters.

    ``predict`` must not change state in a way that affects later rounds;
    ``update`` advances the state once the outcome is known.
    """

    outcome_space: OutcomeSpace = BINARY

    def predict(self, x: np.ndarray, rng: np.random.Generator | None = None) -> Forecast:
        raise NotImplementedError

    def update(self, x: np.ndarray, forecast: Forecast, y) -> None:
        raise NotImplementedError

    def snapshot(self) -> "Forecaster":
        """Frozen copy of the current state, used for online-to-batch conversion."""
        return copy.deepcopy(self)


@dataclass(frozen=True)
class Bernoulli:
    prob: float

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.random() < self.prob)


def no_contexts(t, history, rng) -> np.ndarray:
    return np.empty(0)


class Nature:
    """Produces contexts and (adaptively) outcomes.

    ``strategy(history, x, forecast)`` returns either an outcome or an object
    with a ``sample(rng)`` method. ``history`` is the prefix trace, so the
    strategy sees every earlier round and the current forecast distribution.
    """

    def __init__(self, strategy: Callable, outcome_space: OutcomeSpace = BINARY,
                 contexts: Callable | None = None, context_dim: int = 0, name: str = ""):
        self.strategy = strategy
        self.outcome_space = outcome_space
        self.contexts = contexts or no_contexts
        self.context_dim = context_dim
        self.name = name

    def context(self, t: int, history: GameTrace, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(self.contexts(t, history, rng), dtype=float).reshape(-1)

    def outcome(self, t: int, history: GameTrace, x, forecast: Forecast, rng: np.random.Generator):
        y = self.strategy(history, x, forecast)
        if hasattr(y, "sample"):
            y = y.sample(rng)
        return y


def nature_adaptive(strategy: Callable, outcome_space: OutcomeSpace = BINARY,
                    contexts: Callable | None = None, context_dim: int = 0, name: str = "") -> Nature:
    """Wrap ``strategy(history, forecast)`` as an adaptive nature.

    Use :class:`Nature` directly when the strategy needs the context ``x``.
    """
    return Nature(lambda history, x, forecast: strategy(history, forecast),
                  outcome_space, contexts, context_dim, name)


class ReplayNature(Nature):
    """Replays fixed contexts and outcomes, ignoring the forecasts."""

    def __init__(self, xs: Sequence, ys: Sequence, outcome_space: OutcomeSpace = BINARY):
        self.xs = [np.asarray(x, dtype=float).reshape(-1) for x in xs]
        self.ys = list(ys)
        if len(self.xs) != len(self.ys):
            raise ValueError("contexts and outcomes must have equal length")
        d = len(self.xs[0]) if self.xs else 0
        super().__init__(None, outcome_space, None, d, "replay")

    @classmethod
    def from_trace(cls, trace: GameTrace) -> "ReplayNature":
        return cls([r.x for r in trace], [r.y for r in trace], trace.outcome_space)

    def context(self, t, history, rng):
        return self.xs[t - 1]

    def outcome(self, t, history, x, forecast, rng):
        return self.ys[t - 1]


def game_rngs(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent forecaster and nature generators derived from one seed."""
    ss = np.random.SeedSequence(seed)
    f_seq, n_seq = ss.spawn(2)
    return np.random.default_rng(f_seq), np.random.default_rng(n_seq)


def play_game(forecaster: Forecaster, nature: Nature, T: int, seed=0, config: dict | None = None,
              on_round: Callable[[Round], Any] | None = None) -> GameTrace:
    """Run ``T`` rounds and return the trace.

    The forecaster and nature draw from separate streams spawned from
    ``seed``, so a forecaster's internal randomness never shifts nature's.
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    if forecaster.outcome_space.kind != nature.outcome_space.kind:
        raise ValueError("forecaster and nature disagree on the outcome space")
    f_rng, n_rng = game_rngs(seed)
    trace = GameTrace(nature.outcome_space, seed, config)
    for t in range(1, T + 1):
        x = nature.context(t, trace, n_rng)
        forecast = forecaster.predict(x, f_rng)
        y = nature.outcome(t, trace, x, forecast, n_rng)
        if not nature.outcome_space.contains(y):
            raise SpaceViolation(f"outcome {y!r} at round {t} outside {nature.outcome_space.describe()}")
        if nature.outcome_space.is_binary:
            y = int(y)
        forecaster.update(x, forecast, y)
        r = Round(t, x, forecast, y)
        trace.rounds.append(r)
        if on_round is not None:
            on_round(r)
    return trace
