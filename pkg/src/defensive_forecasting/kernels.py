"""Kernels over (context, forecast) pairs and a small algebra for combining them.

Leaves: constant, linear in the context, product of forecasts, Fermi-Sobolev
in the forecast, and a Gaussian in the context. ``Sum`` and ``Scale`` nodes
keep every expression positive semidefinite.

Kernels are written as text, e.g. ``"1 + fs + pp + lin"`` or
``"1 + fs + pp + rbf(0.5)"``. Grammar::

    expr  := term ('+' term)*
    term  := NUMBER | [NUMBER '*'] atom
    atom  := 'fs' | 'pp' | 'lin' | 'rbf(' NUMBER ')' | '(' expr ')'
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


def _spread(values, xa, xb) -> np.ndarray:
    # broadcast forecast-only values against the leading axes of the contexts
    shape = np.broadcast_shapes(np.shape(values), np.shape(xa)[:-1], np.shape(xb)[:-1])
    return np.broadcast_to(values, shape).copy()


class Kernel:
    """Base class. ``pairwise`` broadcasts over leading axes."""

    #: True when the kernel has an explicit finite feature map
    finite = True
    #: True when the kernel value depends on the forecast coordinate
    uses_p = False
    #: True when the kernel value depends on the context
    uses_x = True

    def pairwise(self, xa, pa, xb, pb) -> np.ndarray:
        raise NotImplementedError

    def bind(self, x: np.ndarray, X: np.ndarray, P: np.ndarray) -> Callable[[float], np.ndarray]:
        """Fix the query context ``x`` against a history ``(X, P)``.

        Returns ``p -> [k((x, p), (X_i, P_i))]_i``; context-only parts are
        computed once here rather than on every call.
        """
        fixed = self.pairwise(x[None, :], 0.0, X, P)
        return lambda p: fixed

    def features(self, x: np.ndarray, p: float) -> np.ndarray:
        raise TypeError(f"{self} has no finite feature map")

    def feature_dim(self, d: int) -> int:
        raise TypeError(f"{self} has no finite feature map")

    def diag_sup(self, x_bound: float = 1.0) -> float:
        """Upper bound on k(z, z) for contexts with norm at most ``x_bound``."""
        raise NotImplementedError

    def __add__(self, other: "Kernel") -> "Kernel":
        return Sum([self, other])

    def __rmul__(self, a: float) -> "Kernel":
        return Scale(a, self)

    def __call__(self, a: "KernelPoint", b: "KernelPoint") -> float:
        return kernel_eval(self, a, b)


@dataclass(frozen=True, eq=True)
class Constant(Kernel):
    c: float = 1.0
    uses_x = False

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("constant kernel needs c >= 0")

    def pairwise(self, xa, pa, xb, pb):
        shape = np.broadcast_shapes(np.shape(pa), np.shape(pb), np.shape(xa)[:-1], np.shape(xb)[:-1])
        return np.full(shape, float(self.c))

    def features(self, x, p):
        return np.array([math.sqrt(self.c)])

    def feature_dim(self, d):
        return 1

    def diag_sup(self, x_bound=1.0):
        return float(self.c)

    def __str__(self):
        c = float(self.c)
        return str(int(c)) if c.is_integer() else repr(c)


@dataclass(frozen=True, eq=True)
class LinearX(Kernel):
    def pairwise(self, xa, pa, xb, pb):
        out = np.einsum("...i,...i->...", *np.broadcast_arrays(np.asarray(xa, float), np.asarray(xb, float)))
        return np.broadcast_to(out, np.broadcast_shapes(out.shape, np.shape(pa), np.shape(pb))).copy()

    def features(self, x, p):
        return np.asarray(x, dtype=float)

    def feature_dim(self, d):
        return d

    def diag_sup(self, x_bound=1.0):
        return float(x_bound) ** 2

    def __str__(self):
        return "lin"


@dataclass(frozen=True, eq=True)
class ProductP(Kernel):
    uses_p = True
    uses_x = False

    def pairwise(self, xa, pa, xb, pb):
        return _spread(np.asarray(pa, float) * np.asarray(pb, float), xa, xb)

    def bind(self, x, X, P):
        P = np.asarray(P, float)
        return lambda p: p * P

    def features(self, x, p):
        return np.array([float(p)])

    def feature_dim(self, d):
        return 1

    def diag_sup(self, x_bound=1.0):
        return 1.0

    def __str__(self):
        return "pp"


def fs_kernel(p, q):
    """Fermi-Sobolev kernel 1/2 min(p,q)^2 + 1/2 min(1-p,1-q)^2 + 5/6."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    lo = np.minimum(p, q)
    hi = np.minimum(1.0 - p, 1.0 - q)
    return 0.5 * lo * lo + 0.5 * hi * hi + 5.0 / 6.0


@dataclass(frozen=True, eq=True)
class FermiSobolev(Kernel):
    finite = False
    uses_p = True

    def pairwise(self, xa, pa, xb, pb):
        return _spread(fs_kernel(pa, pb), xa, xb)

    def bind(self, x, X, P):
        P = np.asarray(P, float)
        Q = 1.0 - P

        def at(p):
            lo = np.minimum(P, p)
            hi = np.minimum(Q, 1.0 - p)
            return 0.5 * (lo * lo + hi * hi) + 5.0 / 6.0

        return at

    def diag_sup(self, x_bound=1.0):
        return 4.0 / 3.0

    def __str__(self):
        return "fs"


@dataclass(frozen=True, eq=True)
class Gaussian(Kernel):
    gamma: float = 1.0
    finite = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("Gaussian bandwidth must be positive")

    def pairwise(self, xa, pa, xb, pb):
        xa, xb = np.broadcast_arrays(np.asarray(xa, float), np.asarray(xb, float))
        diff = xa - xb
        out = np.exp(-self.gamma * np.einsum("...i,...i->...", diff, diff))
        return np.broadcast_to(out, np.broadcast_shapes(out.shape, np.shape(pa), np.shape(pb))).copy()

    def diag_sup(self, x_bound=1.0):
        return 1.0

    def __str__(self):
        return f"rbf({self.gamma!r})"


class Sum(Kernel):
    def __init__(self, terms: Sequence[Kernel]):
        flat = []
        for k in terms:
            flat.extend(k.terms if isinstance(k, Sum) else [k])
        if not flat:
            raise ValueError("empty kernel sum")
        self.terms = tuple(flat)
        self.finite = all(k.finite for k in self.terms)
        self.uses_p = any(k.uses_p for k in self.terms)
        self.uses_x = any(k.uses_x for k in self.terms)

    def pairwise(self, xa, pa, xb, pb):
        return sum(k.pairwise(xa, pa, xb, pb) for k in self.terms)

    def bind(self, x, X, P):
        fixed = 0.0
        varying = []
        for k in self.terms:
            if k.uses_p:
                varying.append(k.bind(x, X, P))
            else:
                fixed = fixed + k.bind(x, X, P)(0.0)
        fixed = np.broadcast_to(np.asarray(fixed, float), (len(P),)).copy()
        if not varying:
            return lambda p: fixed
        return lambda p: fixed + sum(f(p) for f in varying)

    def features(self, x, p):
        return np.concatenate([k.features(x, p) for k in self.terms])

    def feature_dim(self, d):
        return sum(k.feature_dim(d) for k in self.terms)

    def diag_sup(self, x_bound=1.0):
        return sum(k.diag_sup(x_bound) for k in self.terms)

    def __eq__(self, other):
        return isinstance(other, Sum) and self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    def __str__(self):
        return " + ".join(f"({k})" if isinstance(k, Sum) else str(k) for k in self.terms)

    def __repr__(self):
        return f"Sum({list(self.terms)!r})"


class Scale(Kernel):
    def __init__(self, a: float, kernel: Kernel):
        if a < 0:
            raise ValueError("scale factor must be nonnegative")
        self.a = float(a)
        self.kernel = kernel
        self.finite = kernel.finite
        self.uses_p = kernel.uses_p
        self.uses_x = kernel.uses_x

    def pairwise(self, xa, pa, xb, pb):
        return self.a * self.kernel.pairwise(xa, pa, xb, pb)

    def bind(self, x, X, P):
        inner = self.kernel.bind(x, X, P)
        return lambda p: self.a * inner(p)

    def features(self, x, p):
        return math.sqrt(self.a) * self.kernel.features(x, p)

    def feature_dim(self, d):
        return self.kernel.feature_dim(d)

    def diag_sup(self, x_bound=1.0):
        return self.a * self.kernel.diag_sup(x_bound)

    def __eq__(self, other):
        return isinstance(other, Scale) and (self.a, self.kernel) == (other.a, other.kernel)

    def __hash__(self):
        return hash((self.a, self.kernel))

    def __str__(self):
        inner = f"({self.kernel})" if isinstance(self.kernel, Sum) else str(self.kernel)
        return f"{self.a!r}*{inner}"

    def __repr__(self):
        return f"Scale({self.a!r}, {self.kernel!r})"


@dataclass(frozen=True)
class KernelPoint:
    x: np.ndarray
    p: float

    @classmethod
    def of(cls, x, p) -> "KernelPoint":
        return cls(np.asarray(x, dtype=float).reshape(-1), float(p))


def kernel_eval(spec: Kernel, a: KernelPoint, b: KernelPoint) -> float:
    if len(a.x) != len(b.x):
        raise ValueError(f"context dimension mismatch: {len(a.x)} vs {len(b.x)}")
    return float(spec.pairwise(a.x, a.p, b.x, b.p))


def gram_matrix(spec: Kernel, points: Sequence[KernelPoint]) -> np.ndarray:
    if not points:
        raise ValueError("need at least one point")
    dims = {len(pt.x) for pt in points}
    if len(dims) != 1:
        raise ValueError("context dimension mismatch within points")
    X = np.array([pt.x for pt in points], dtype=float).reshape(len(points), dims.pop())
    P = np.array([pt.p for pt in points], dtype=float)
    return spec.pairwise(X[:, None, :], P[:, None], X[None, :, :], P[None, :])


def rescale(p, y_min: float, y_max: float):
    """Affine map of [y_min, y_max] onto [0, 1] used for forecast-dependent leaves."""
    return (np.asarray(p, dtype=float) - y_min) / (y_max - y_min)


# ---------------------------------------------------------------------------
# Fermi-Sobolev norms

def bump(eps: float) -> Callable:
    """Triangular bump of half-width ``eps`` and height one."""
    def w(u):
        return np.maximum(0.0, 1.0 - np.abs(np.asarray(u, dtype=float)) / eps)
    return w


def fs_norm_bump(eps: float, alpha: float) -> float:
    """Closed-form Fermi-Sobolev norm of ``p -> bump(eps)(p - alpha)``."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if eps > min(alpha, 1 - alpha) + 1e-15:
        raise ValueError("need eps <= min(alpha, 1 - alpha)")
    return math.sqrt(eps * eps + 2.0 / eps)


def fs_norm(f: Callable, n: int = 100_000) -> float:
    """sqrt((int f)^2 + int f'^2) on [0, 1] by the trapezoid rule on ``n`` points."""
    grid = np.linspace(0.0, 1.0, n)
    vals = np.asarray(f(grid), dtype=float)
    mean = np.trapezoid(vals, grid)
    slopes = np.diff(vals) / np.diff(grid)
    energy = float(np.sum(slopes ** 2 * np.diff(grid)))
    return math.sqrt(mean ** 2 + energy)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|(?P<name>[A-Za-z_]+)|(?P<op>[+*()]))")


def _tokens(text: str):
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"bad kernel expression at {text[pos:]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    return out


_LEAVES = {"fs": FermiSobolev, "pp": ProductP, "lin": LinearX}


def parse_kernel(text: str) -> Kernel:
    """Parse the textual kernel grammar described in the module docstring."""
    toks = _tokens(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else (None, None)

    def take(kind=None, value=None):
        nonlocal pos
        tok = peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            raise ValueError(f"bad kernel expression {text!r}: expected {value or kind}, got {tok[1]!r}")
        pos += 1
        return tok[1]

    def atom():
        kind, val = peek()
        if kind == "op" and val == "(":
            take()
            k = expr()
            take("op", ")")
            return k
        name = take("name").lower()
        if name in _LEAVES:
            return _LEAVES[name]()
        if name == "rbf":
            take("op", "(")
            g = float(take("num"))
            take("op", ")")
            return Gaussian(g)
        raise ValueError(f"unknown kernel leaf {name!r}")

    def term():
        kind, val = peek()
        if kind == "num":
            c = float(take())
            if peek() == ("op", "*"):
                take()
                return Scale(c, atom())
            return Constant(c)
        return atom()

    def expr():
        terms = [term()]
        while peek() == ("op", "+"):
            take()
            terms.append(term())
        return terms[0] if len(terms) == 1 else Sum(terms)

    k = expr()
    if pos != len(toks):
        raise ValueError(f"trailing input in kernel expression {text!r}")
    return k


def as_kernel(spec) -> Kernel:
    if isinstance(spec, Kernel):
        return spec
    if isinstance(spec, str):
        return parse_kernel(spec)
    raise TypeError(f"cannot interpret {spec!r} as a kernel")
