"""Anticorrelation search and bracketing bisection on summary functions."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

# bracket width at which bisection gives up on a near-discontinuous summary
MIN_BRACKET = 2.0 ** -52


class Branch(str, enum.Enum):
    AT_ONE = "AtOne"
    AT_ZERO = "AtZero"
    ROOT = "Root"


@dataclass(frozen=True)
class SearchResult:
    p: float
    branch: Branch
    residual: float
    evaluations: int = 0


class SearchError(RuntimeError):
    pass


def _finite(v: float, p: float) -> float:
    v = float(v)
    if not math.isfinite(v):
        raise FloatingPointError(f"summary function is not finite at p={p!r}: {v!r}")
    return v


def default_tolerance(t: int) -> float:
    """min(1e-9, 1/(10 t^2)): summable, so cumulative slack stays bounded."""
    return min(1e-9, 1.0 / (10.0 * t * t))


def tolerance_schedule(spec: str | float | Callable[[int], float] = "default") -> Callable[[int], float]:
    """Resolve a schedule name (``default``, ``poly2``, ``fixed:<eps>``) or a constant."""
    if callable(spec):
        return spec
    if isinstance(spec, (int, float)):
        eps = float(spec)
        if eps <= 0:
            raise ValueError("tolerance must be positive")
        return lambda t: eps
    if spec == "default":
        return default_tolerance
    if spec == "poly2":
        return lambda t: 1.0 / (10.0 * t * t)
    if spec.startswith("fixed:"):
        return tolerance_schedule(float(spec.split(":", 1)[1]))
    raise ValueError(f"unknown tolerance schedule {spec!r}")


def cumulative_tolerance(schedule, T: int) -> float:
    sched = tolerance_schedule(schedule)
    return math.fsum(sched(t) for t in range(1, T + 1))


def anticorrelation_search(S: Callable[[float], float], tol: float, lo: float = 0.0, hi: float = 1.0,
                           continuous: bool = True, prefer: str = "hi") -> SearchResult:
    """Return p in [lo, hi] with sup_y (y - p) S(p) <= tol over y in {lo, hi}.

    Branch order: ``S(hi) >= 0`` gives ``hi``; otherwise ``S(lo) <= 0`` gives
    ``lo``; otherwise bisect the bracket ``S(lo) > 0 > S(hi)`` until
    ``|S(p)| <= tol``. If the bracket collapses to machine width first the
    endpoint with the smaller ``|S|`` is returned.

    ``prefer="lo"`` swaps the two endpoint tests, so that ``S`` vanishing at
    both ends yields ``lo``. Either order satisfies the same guarantee.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    if prefer not in ("hi", "lo"):
        raise ValueError("prefer must be 'hi' or 'lo'")
    if prefer == "lo":
        s_lo = _finite(S(lo), lo)
        if s_lo <= 0:
            return SearchResult(lo, Branch.AT_ZERO, s_lo, 1)
        s_hi = _finite(S(hi), hi)
        if s_hi >= 0:
            return SearchResult(hi, Branch.AT_ONE, s_hi, 2)
    else:
        s_hi = _finite(S(hi), hi)
        if s_hi >= 0:
            return SearchResult(hi, Branch.AT_ONE, s_hi, 1)
        s_lo = _finite(S(lo), lo)
        if s_lo <= 0:
            return SearchResult(lo, Branch.AT_ZERO, s_lo, 2)
    if not continuous:
        raise SearchError("summary not declared continuous and neither endpoint branch applies")
    a, b, sa, sb = lo, hi, s_lo, s_hi
    n = 2
    while b - a > MIN_BRACKET:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        sm = _finite(S(m), m)
        n += 1
        if abs(sm) <= tol:
            return SearchResult(m, Branch.ROOT, sm, n)
        if sm > 0:
            a, sa = m, sm
        else:
            b, sb = m, sm
    if abs(sa) <= abs(sb):
        return SearchResult(a, Branch.ROOT, sa, n)
    return SearchResult(b, Branch.ROOT, sb, n)


def sign_change_search(S: Callable[[float], float], lo: float, hi: float,
                       gap: float | Callable[[float], float], s_lo: float | None = None,
                       s_hi: float | None = None) -> tuple[float, float, float, float]:
    """Shrink a bracket ``S(lo) < 0 < S(hi)`` until its width is at most ``gap``.

    ``gap`` may depend on the current negative-side value ``S(p1)``. Returns
    ``(p1, p2, S(p1), S(p2))`` with ``S(p1) <= 0 < S(p2)``. A midpoint where
    ``S`` is exactly zero becomes ``p1`` and the search stops there.
    """
    gap_fn = gap if callable(gap) else (lambda s, g=float(gap): g)
    a, b = float(lo), float(hi)
    sa = _finite(S(a) if s_lo is None else s_lo, a)
    sb = _finite(S(b) if s_hi is None else s_hi, b)
    if not (sa < 0 < sb):
        raise ValueError(f"need S(lo) < 0 < S(hi), got S({a!r})={sa!r}, S({b!r})={sb!r}")
    while b - a > gap_fn(sa):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        sm = _finite(S(m), m)
        if sm <= 0:
            a, sa = m, sm
            if sm == 0:
                break
        else:
            b, sb = m, sm
    if not (sa <= 0 < sb):
        raise SearchError("bracket lost its sign change")
    return a, b, sa, sb
