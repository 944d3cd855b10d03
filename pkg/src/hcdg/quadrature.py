"""
One-dimensional node families on the reference interval [-1, 1].

Gauss-Legendre (open), Gauss-Lobatto (closed) and Gauss-Radau (half-closed)
points are computed by Newton iteration on their defining Legendre
conditions, starting from the matching Chebyshev points.  Interpolation and
differentiation use the barycentric form of the Lagrange basis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegreeTooLow

NEWTON_TOL = 1e-15
NEWTON_MAXITER = 100


class Kind(enum.Enum):
    LEGENDRE = "open"
    LOBATTO = "closed"
    RADAU = "halfclosed"


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    def flipped(self) -> "Side":
        return Side.RIGHT if self is Side.LEFT else Side.LEFT


@dataclass(frozen=True)
class NodeFamily:
    """A node family; ``side`` picks the closed end of a Radau set."""

    kind: Kind
    side: Side = Side.LEFT

    def __post_init__(self):
        # side is meaningless for symmetric families; normalise so equality works
        if self.kind is not Kind.RADAU and self.side is not Side.LEFT:
            object.__setattr__(self, "side", Side.LEFT)

    @classmethod
    def parse(cls, name: str) -> "NodeFamily":
        aliases = {
            "open": Kind.LEGENDRE, "legendre": Kind.LEGENDRE, "gauss": Kind.LEGENDRE,
            "closed": Kind.LOBATTO, "lobatto": Kind.LOBATTO,
            "halfclosed": Kind.RADAU, "half-closed": Kind.RADAU, "radau": Kind.RADAU,
        }
        key = name.strip().lower()
        side = Side.LEFT
        if ":" in key:
            key, side_name = key.split(":", 1)
            side = Side(side_name)
        if key not in aliases:
            raise ValueError(f"unknown node family {name!r}")
        return cls(aliases[key], side)

    def exactness_degree(self, n: int) -> int:
        """Polynomial degree integrated exactly by the ``n``-point rule."""
        return {Kind.LEGENDRE: 2 * n - 1, Kind.LOBATTO: 2 * n - 3, Kind.RADAU: 2 * n - 2}[self.kind]


GAUSS_LEGENDRE = NodeFamily(Kind.LEGENDRE)
GAUSS_LOBATTO = NodeFamily(Kind.LOBATTO)
RADAU_LEFT = NodeFamily(Kind.RADAU, Side.LEFT)
RADAU_RIGHT = NodeFamily(Kind.RADAU, Side.RIGHT)


def legendre_eval(p, x):
    """Legendre polynomial P_p and its derivative at ``x``.

    Uses the three-term recurrence for the values and
    P'_{k+1} = P'_{k-1} + (2k+1) P_k for the derivatives, which stays
    regular at the endpoints. ``x`` may be a scalar or an array.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(float)
    p0, p1 = np.ones_like(x), x.copy()
    d0, d1 = np.zeros_like(x), np.ones_like(x)
    if p == 0:
        return _unwrap(p0), _unwrap(d0)
    for k in range(1, p):
        p0, p1 = p1, ((2 * k + 1) * x * p1 - k * p0) / (k + 1)
        d0, d1 = d1, d0 + (2 * k + 1) * p0
    return _unwrap(p1), _unwrap(d1)


def _unwrap(a):
    return float(a) if a.ndim == 0 else a


def _newton(f, x, fixed=(), dtype=np.float64):
    """Simultaneous Newton iteration on all entries of ``x`` not in ``fixed``.

    Converges in double precision first; for a wider ``dtype`` a few more
    steps polish the roots in that precision.
    """
    x = np.array(x, dtype=float)
    free = np.ones(x.size, dtype=bool)
    free[list(fixed)] = False
    for _ in range(NEWTON_MAXITER):
        val, der = f(x[free])
        dx = val / der
        x[free] -= dx
        if np.max(np.abs(dx), initial=0.0) <= NEWTON_TOL:
            break
    if np.dtype(dtype) != np.float64:
        x = x.astype(dtype)
        for _ in range(4):
            val, der = f(x[free])
            x[free] -= val / der
    return x


def _gauss_legendre(n, dtype=np.float64):
    x0 = -np.cos(np.pi * (np.arange(n) + 0.5) / n)
    x = _newton(lambda t: legendre_eval(n, t), x0, dtype=dtype)
    _, dp = legendre_eval(n, x)
    w = 2.0 / ((1.0 - x**2) * dp**2)
    return x, w


def _gauss_lobatto(n, dtype=np.float64):
    m = n - 1
    x0 = -np.cos(np.pi * np.arange(n) / m)

    def cond(t):
        # interior nodes are the roots of P'_m; Newton needs P''_m
        _, d = legendre_eval(m, t)
        pm, _ = legendre_eval(m, t)
        dd = (2 * t * d - m * (m + 1) * pm) / (1 - t**2)
        return d, dd

    x = _newton(cond, x0, fixed=(0, n - 1), dtype=dtype)
    x[0], x[-1] = -1.0, 1.0
    pm, _ = legendre_eval(m, x)
    w = 2.0 / (m * (m + 1) * pm**2)
    return x, w


def _gauss_radau_left(n, dtype=np.float64):
    if n == 1:
        return np.array([-1.0], dtype=dtype), np.array([2.0], dtype=dtype)
    x0 = -np.cos(2 * np.pi * np.arange(n) / (2 * n - 1))

    def cond(t):
        a, da = legendre_eval(n - 1, t)
        b, db = legendre_eval(n, t)
        return a + b, da + db

    x = _newton(cond, x0, fixed=(0,), dtype=dtype)
    x[0] = -1.0
    pn1, _ = legendre_eval(n - 1, x)
    w = np.empty(n, dtype=x.dtype)
    w[0] = x.dtype.type(2) / n**2
    w[1:] = (1.0 - x[1:]) / (n**2 * pn1[1:] ** 2)
    return x, w


def quadrature_rule(family: NodeFamily, n: int, dtype=np.float64):
    """Nodes and weights of the ``n``-point rule of ``family`` (ascending)."""
    if family.kind is Kind.LEGENDRE:
        return _gauss_legendre(n, dtype)
    if family.kind is Kind.LOBATTO:
        if n < 2:
            raise DegreeTooLow("Gauss-Lobatto needs at least two points (p >= 1)")
        return _gauss_lobatto(n, dtype)
    x, w = _gauss_radau_left(n, dtype)
    if family.side is Side.RIGHT:
        return -x[::-1].copy(), w[::-1].copy()
    return x, w


def barycentric_weights(nodes):
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    lam = 1.0 / np.prod(diff, axis=1)
    return lam / np.max(np.abs(lam))


def interpolation_matrix(nodes, bary, points):
    """Row i holds the Lagrange basis of ``nodes`` evaluated at ``points[i]``."""
    points = np.atleast_1d(np.asarray(points, dtype=np.result_type(nodes.dtype, np.float64)))
    diff = points[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, rtol=0.0, atol=1e-15)
    diff[exact] = 1.0
    terms = bary[None, :] / diff
    out = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        out[hit] = exact[hit].astype(out.dtype)
    return out


def differentiation_matrix(nodes, bary):
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    dm = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(dm, 0.0)
    np.fill_diagonal(dm, -dm.sum(axis=1))
    return dm


@dataclass(frozen=True, eq=False)
class Basis1D:
    """Nodal Lagrange basis on [-1, 1] for one node family.

    Attributes
    ----------
    family : NodeFamily
    p : int
        Polynomial degree; there are ``n = p + 1`` nodes.
    nodes, weights : ndarray
        Ascending nodes and their quadrature weights.
    diff_matrix : ndarray
        ``diff_matrix[i, j]`` is the derivative of basis ``j`` at node ``i``.
    trace_left, trace_right : ndarray
        Basis values at -1 and +1.
    """

    family: NodeFamily
    p: int
    nodes: np.ndarray
    weights: np.ndarray
    bary: np.ndarray = field(repr=False)
    diff_matrix: np.ndarray = field(repr=False)
    trace_left: np.ndarray = field(repr=False)
    trace_right: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.p + 1

    def interpolate(self, points):
        return interpolation_matrix(self.nodes, self.bary, points)

    def derivative(self, points):
        """Derivatives of the basis at ``points`` (rows = points)."""
        return self.interpolate(points) @ self.diff_matrix

    def trace(self, end: int):
        """Basis values at the endpoint ``end`` (0 -> -1, 1 -> +1)."""
        return self.trace_right if end else self.trace_left

    def endpoint_node(self, end: int):
        """Index of the node sitting on endpoint ``end``, or ``None``."""
        idx = self.n - 1 if end else 0
        target = 1.0 if end else -1.0
        return idx if self.nodes[idx] == target else None


def make_basis(family: NodeFamily, p: int, dtype=np.float64) -> Basis1D:
    """Cached nodal basis; ``dtype`` may be a wider float for refinement."""
    return _make_basis(family, p, np.dtype(dtype))


@lru_cache(maxsize=None)
def _make_basis(family: NodeFamily, p: int, dtype) -> Basis1D:
    if p < 0:
        raise DegreeTooLow("degree must be non-negative")
    if family.kind is Kind.LOBATTO and p == 0:
        raise DegreeTooLow("Gauss-Lobatto nodes need p >= 1")
    x, w = quadrature_rule(family, p + 1, dtype)
    for a in (x, w):
        a.setflags(write=False)
    bary = barycentric_weights(x)
    dm = differentiation_matrix(x, bary) if p > 0 else np.zeros((1, 1), dtype=dtype)
    tl = interpolation_matrix(x, bary, np.array([-1.0], dtype=dtype))[0]
    tr = interpolation_matrix(x, bary, np.array([1.0], dtype=dtype))[0]
    for a in (bary, dm, tl, tr):
        a.setflags(write=False)
    return Basis1D(family, p, x, w, bary, dm, tl, tr)


def gauss_rule(n: int, dtype=np.float64):
    """Gauss-Legendre rule used for over-integration."""
    return _gauss_rule(n, np.dtype(dtype))


@lru_cache(maxsize=None)
def _gauss_rule(n: int, dtype):
    x, w = _gauss_legendre(n, dtype)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def measured_exactness(nodes, weights, max_degree=None, tol=1e-12):
    """Largest m such that the rule integrates x^0 .. x^m to within ``tol``."""
    max_degree = 4 * len(nodes) + 2 if max_degree is None else max_degree
    for m in range(max_degree + 1):
        exact = 0.0 if m % 2 else 2.0 / (m + 1)
        if abs(np.dot(weights, nodes**m) - exact) > tol:
            return m - 1
    return max_degree
