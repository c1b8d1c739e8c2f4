"""Exact answers on tiny graphs by enumerating every configuration.

A :class:`TinyGraph` is a finite vertex set carrying the spread-out edges
between its vertices, optionally with a ghost link at every vertex.  All
quantities here are computed from first principles (explicit edge lists,
explicit stencils, breadth-first search in pure Python) and share no code
path with the exploration kernel, so they can serve as ground truth for it.

Weights are grouped by the number of open edges, which turns every
expectation into a polynomial in ``p`` with exact integer coefficients
whenever the functional is integer valued.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence, Union

import numba as nb
import numpy as np

from .lattice import LatticeSpec, Point, Region

MAX_LINKS = 20
MAX_BK_EDGES = 16


class EnumerationTooLarge(ValueError):
    pass


def _stencil(spec: LatticeSpec, x: Sequence[int]) -> list[Point]:
    rng = range(-spec.L, spec.L + 1)
    return [tuple(a + b for a, b in zip(x, delta))
            for delta in itertools.product(rng, repeat=spec.d) if any(delta)]


@dataclass(frozen=True)
class TinyGraph:
    """Vertices of Z^d with all spread-out edges among them.

    ``edges`` defaults to the full stencil restriction; an explicit list is
    accepted only if it coincides with it.
    """

    spec: LatticeSpec
    vertices: tuple[Point, ...]
    edges: Optional[tuple[tuple[Point, Point], ...]] = None
    ghost: bool = False
    name: str = ""

    def __post_init__(self):
        verts = tuple(tuple(int(c) for c in v) for v in self.vertices)
        if len(set(verts)) != len(verts):
            raise ValueError("duplicate vertices")
        if any(len(v) != self.spec.d for v in verts):
            raise ValueError("vertex of the wrong dimension")
        if self.spec.origin not in verts:
            raise ValueError("the origin must be a vertex")
        vset = set(verts)
        induced = []
        for i, u in enumerate(verts):
            for v in verts[i + 1:]:
                if 1 <= max(abs(a - b) for a, b in zip(u, v)) <= self.spec.L:
                    induced.append((u, v))
        if self.edges is not None:
            given = {frozenset(e) for e in self.edges}
            if any(len(e) != 2 or not e <= vset for e in given) or given != {frozenset(e) for e in induced}:
                raise ValueError("edges must be the spread-out stencil restricted to the vertices")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "edges", tuple(induced))
        if self.n_links > MAX_LINKS:
            raise EnumerationTooLarge(
                f"{self.n_links} links exceed the enumeration bound of {MAX_LINKS}")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_ghosts(self) -> int:
        return len(self.vertices) if self.ghost else 0

    @property
    def n_links(self) -> int:
        return self.n_edges + self.n_ghosts

    def subset(self, S) -> frozenset:
        """Normalise a Region or an iterable of points to a vertex subset."""
        if isinstance(S, Region):
            out = frozenset(v for v in self.vertices if v in S)
        elif S is None:
            out = frozenset(self.vertices)
        else:
            out = frozenset(tuple(v) for v in S)
            if not out <= set(self.vertices):
                raise ValueError("S must be a subset of the vertices")
        if self.spec.origin not in out:
            raise ValueError("S must contain the origin")
        return out

    def out_pairs(self, x: Point, S: frozenset) -> int:
        """Lattice neighbours of ``x`` outside ``S`` (not limited to the graph)."""
        return sum(1 for y in _stencil(self.spec, x) if y not in S)

    def on_boundary(self, x: Point, S: frozenset) -> bool:
        for i in range(self.spec.d):
            for s in (-1, 1):
                y = list(x)
                y[i] += s
                if tuple(y) not in S:
                    return True
        return False


class Config:
    """One edge (and ghost) configuration of a tiny graph."""

    __slots__ = ("graph", "mask", "ghosts")

    def __init__(self, graph: TinyGraph, mask: int, ghosts: int = 0):
        self.graph = graph
        self.mask = mask
        self.ghosts = ghosts

    def is_open(self, i: int) -> bool:
        return bool(self.mask >> i & 1)

    def cluster(self, S=None) -> frozenset:
        """Vertices joined to the origin by open paths inside ``S``."""
        S = frozenset(self.graph.vertices) if S is None else S
        adj: dict[Point, list[Point]] = {}
        for i, (u, v) in enumerate(self.graph.edges):
            if self.mask >> i & 1 and u in S and v in S:
                adj.setdefault(u, []).append(v)
                adj.setdefault(v, []).append(u)
        start = self.graph.spec.origin
        seen = {start}
        stack = [start]
        while stack:
            x = stack.pop()
            for y in adj.get(x, ()):
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return frozenset(seen)

    def ghost_hit(self, C: Iterable[Point]) -> bool:
        index = {v: i for i, v in enumerate(self.graph.vertices)}
        return any(self.ghosts >> index[v] & 1 for v in C)


@dataclass(frozen=True)
class ExactValue:
    """Exact expectation; ``coeffs[t]`` multiplies ``p**t`` when available."""

    value: float
    coeffs: Optional[tuple] = None

    def at(self, p: float) -> float:
        if self.coeffs is None:
            raise ValueError("no polynomial available (ghost links with h > 0)")
        return float(sum(Fraction(c) * Fraction(p) ** t for t, c in enumerate(self.coeffs)))

    def derivative(self, p: float) -> float:
        if self.coeffs is None:
            raise ValueError("no polynomial available (ghost links with h > 0)")
        return float(sum(t * Fraction(c) * Fraction(p) ** (t - 1)
                         for t, c in enumerate(self.coeffs) if t > 0))


def _bernstein_to_monomial(A: Sequence, m: int) -> tuple:
    """Coefficients of sum_k A[k] p^k (1-p)^(m-k) in the monomial basis."""
    coeffs = [0] * (m + 1)
    for k, a in enumerate(A):
        if a == 0:
            continue
        for i in range(m - k + 1):
            coeffs[k + i] += a * math.comb(m - k, i) * (-1) ** i
    return tuple(coeffs)


def _weights(m: int, p: float) -> list[float]:
    return [p ** k * (1 - p) ** (m - k) for k in range(m + 1)]


def _tables(g: TinyGraph, f: Callable[[Config], float], with_ghost: bool):
    """A[k][j] = sum of f over configurations with k open edges, j open ghosts."""
    m, gn = g.n_edges, (g.n_ghosts if with_ghost else 0)
    A = [[0] * (gn + 1) for _ in range(m + 1)]
    for mask in range(1 << m):
        k = mask.bit_count()
        for gm in range(1 << gn):
            A[k][gm.bit_count()] += f(Config(g, mask, gm))
    return A


def exact_expectation(g: TinyGraph, p: float, h: float, f: Callable[[Config], float]) -> ExactValue:
    """E_{p,h}[f] by full enumeration.

    Ghost links are open with probability ``1 - exp(-h)``.  With ``h = 0``
    every ghost link is closed, so only ghost-free configurations count and
    the answer is a polynomial in ``p``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not h >= 0:
        raise ValueError("h must be nonnegative")
    if g.n_links > MAX_LINKS:
        raise EnumerationTooLarge("enumeration bound exceeded")
    m = g.n_edges
    with_ghost = g.ghost and h > 0
    A = _tables(g, f, with_ghost)
    pw = _weights(m, p)
    if with_ghost:
        gn = g.n_ghosts
        q = -math.expm1(-h)
        qw = [q ** j * math.exp(-h * (gn - j)) for j in range(gn + 1)]
        value = math.fsum(A[k][j] * pw[k] * qw[j] for k in range(m + 1) for j in range(gn + 1))
        return ExactValue(value, None)
    col = [row[0] for row in A]
    value = math.fsum(a * w for a, w in zip(col, pw))
    return ExactValue(value, _bernstein_to_monomial(col, m))


def exact_distribution(g: TinyGraph, p: float, f: Callable[[Config], object]) -> dict:
    """Law of ``f`` under P_p (ghost links ignored)."""
    m = g.n_edges
    pw = _weights(m, p)
    out: dict = {}
    for mask in range(1 << m):
        key = f(Config(g, mask))
        out[key] = out.get(key, 0.0) + pw[mask.bit_count()]
    return out


# --------------------------------------------------------------------------
# Observables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservableRecord:
    p: float
    h: float
    S: frozenset
    tau: dict          # x -> P[0 <-> x] in the whole graph
    tau_S: dict        # x -> P[0 <->_S x]
    theta: float       # P[0 <-> V \ S] in the whole graph
    phi: float
    psi: float
    chi: float         # E|C_S(0)|
    M: float           # P[0 <->_S ghost]


def exact_observables(g: TinyGraph, p: float, S=None, h: float = 0.0) -> ObservableRecord:
    Sset = g.subset(S)
    m = g.n_edges
    pw = _weights(m, p)
    V = frozenset(g.vertices)
    outside = V - Sset
    tau = dict.fromkeys(g.vertices, 0.0)
    tau_S = dict.fromkeys(sorted(Sset), 0.0)
    theta = 0.0
    for mask in range(1 << m):
        w = pw[mask.bit_count()]
        c = Config(g, mask)
        full = c.cluster()
        for x in full:
            tau[x] += w
        for x in c.cluster(Sset):
            tau_S[x] += w
        if full & outside:
            theta += w
    # boundary functionals straight from their definitions
    phi = p * math.fsum(t * g.out_pairs(x, Sset) for x, t in tau_S.items())
    psi = math.fsum(t for x, t in tau_S.items() if g.on_boundary(x, Sset))
    chi = math.fsum(tau_S.values())
    if h == 0:
        M = 0.0
    elif g.ghost:
        M = exact_expectation(g, p, h, lambda c: int(c.ghost_hit(c.cluster(Sset)))).value
    else:
        M = exact_expectation(g, p, 0.0, lambda c: -math.expm1(-h * len(c.cluster(Sset)))).value
    return ObservableRecord(p, h, Sset, tau, tau_S, theta, phi, psi, chi, M)


# --------------------------------------------------------------------------
# Events and the BK inequality
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConnEvent:
    """{u <-> v by an open path inside ``within``} (whole graph if None)."""

    u: Point
    v: Point
    within: Optional[frozenset] = None

    def holds(self, g: TinyGraph, mask: int) -> bool:
        S = frozenset(g.vertices) if self.within is None else self.within
        if self.u not in S or self.v not in S:
            return False
        if self.u == self.v:
            return True
        adj: dict = {}
        for i, (a, b) in enumerate(g.edges):
            if mask >> i & 1 and a in S and b in S:
                adj.setdefault(a, []).append(b)
                adj.setdefault(b, []).append(a)
        seen = {self.u}
        stack = [self.u]
        while stack:
            x = stack.pop()
            if x == self.v:
                return True
            for y in adj.get(x, ()):
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return False


def _event_table(g: TinyGraph, A) -> np.ndarray:
    if not isinstance(A, ConnEvent):
        raise TypeError("only connectivity events u <-> v within S are supported")
    return np.array([A.holds(g, mask) for mask in range(1 << g.n_edges)], dtype=np.bool_)


@nb.njit(cache=True)
def _disjoint_table(ta, tb):
    """For each mask, whether some split of its open edges into I and the
    rest has A on I alone and B on the rest alone."""
    n = ta.shape[0]
    out = np.zeros(n, np.bool_)
    for mask in range(n):
        if not (ta[mask] and tb[mask]):
            continue
        sub = mask
        while True:
            if ta[sub] and tb[mask ^ sub]:
                out[mask] = True
                break
            if sub == 0:
                break
            sub = (sub - 1) & mask
    return out


def _prob_of_table(t: np.ndarray, m: int) -> ExactValue:
    counts = [0] * (m + 1)
    for mask in np.flatnonzero(t):
        counts[int(mask).bit_count()] += 1
    coeffs = _bernstein_to_monomial(counts, m)
    return ExactValue(float("nan"), coeffs)


@dataclass(frozen=True)
class InequalityReport:
    name: str
    passed: bool
    rows: tuple          # per grid point: (p, lhs, rhs)
    extra: dict = field(default_factory=dict)


def default_grid() -> tuple[float, ...]:
    return tuple(round(0.05 * i, 2) for i in range(1, 20))


TOL = 1e-12


def bk_check(g: TinyGraph, A: ConnEvent, B: ConnEvent,
             p_grid: Sequence[float] = default_grid()) -> InequalityReport:
    """P[A o B] <= P[A] P[B] on the grid, disjoint occurrence by brute force."""
    if g.n_edges > MAX_BK_EDGES:
        raise EnumerationTooLarge(f"BK check limited to {MAX_BK_EDGES} edges")
    ta, tb = _event_table(g, A), _event_table(g, B)
    tab = _disjoint_table(ta, tb)
    m = g.n_edges
    pa, pb, pab = (_prob_of_table(t, m) for t in (ta, tb, tab))
    rows = []
    ok = True
    for p in p_grid:
        lhs, rhs = pab.at(p), pa.at(p) * pb.at(p)
        ok &= lhs <= rhs + TOL
        rows.append((p, lhs, rhs))
    return InequalityReport("bk", bool(ok), tuple(rows))


def entropic_inequality_check(g: TinyGraph, A: Union[ConnEvent, Callable[[Config], bool]],
                              p_grid: Sequence[float] = default_grid()) -> InequalityReport:
    """Classical differential inequality with Lambda = the whole graph:

        d/dp P_p[A] <= sqrt(P_p[A] E_p|C(0)|) / (p (1 - p)).

    Also evaluates the finite-difference form for every pair p' < p of the
    grid with the constant ``1 / (p'(1 - p'))``; its outcome and the largest
    constant the grid requires are reported in ``extra`` but do not decide
    ``passed``.
    """
    if g.n_edges > MAX_BK_EDGES:
        raise EnumerationTooLarge(f"limited to {MAX_BK_EDGES} edges")
    if isinstance(A, ConnEvent):
        event = lambda c: int(A.holds(g, c.mask))  # noqa: E731
    else:
        event = lambda c: int(bool(A(c)))  # noqa: E731
    PA = exact_expectation(g, 0.5, 0.0, event)
    EC = exact_expectation(g, 0.5, 0.0, lambda c: len(c.cluster()))
    rows = []
    ok = True
    for p in p_grid:
        lhs = PA.derivative(p)
        rhs = math.sqrt(max(0.0, PA.at(p)) * EC.at(p)) / (p * (1 - p))
        ok &= lhs <= rhs + TOL
        rows.append((p, lhs, rhs))
    fd_ok = True
    worst = 0.0
    for p1, p2 in itertools.combinations(sorted(p_grid), 2):
        a1, a2 = PA.at(p1), PA.at(p2)
        base = (p2 - p1) * math.sqrt(max(a1, a2) * EC.at(p1))
        diff = abs(a2 - a1)
        if base > 0:
            worst = max(worst, diff / base)
        fd_ok &= diff <= base / (p1 * (1 - p1)) + TOL
    return InequalityReport("entropic", bool(ok), tuple(rows),
                            {"finite_difference_passed": bool(fd_ok), "empirical_C0": worst})


def psi_phi_check(g: TinyGraph, S, p_grid: Sequence[float] = default_grid()) -> InequalityReport:
    """p psi_p(S) <= phi_p(S)."""
    rows = []
    ok = True
    for p in p_grid:
        r = exact_observables(g, p, S)
        ok &= p * r.psi <= r.phi + TOL
        rows.append((p, p * r.psi, r.phi))
    return InequalityReport("psi_phi", bool(ok), tuple(rows))


def box_halfspace_check(g: TinyGraph, n: int, p_grid: Sequence[float] = default_grid()) -> InequalityReport:
    """phi_p(Box(n) & V) <= 2d phi_p(HalfSpace(n) & V) for a graph symmetric
    under coordinate reflections and containing the box."""
    from .lattice import Box, HalfSpace

    d = g.spec.d
    rows = []
    ok = True
    for p in p_grid:
        lhs = exact_observables(g, p, Box(n)).phi
        rhs = 2 * d * exact_observables(g, p, HalfSpace(n)).phi
        ok &= lhs <= rhs + TOL
        rows.append((p, lhs, rhs))
    return InequalityReport("box_halfspace", bool(ok), tuple(rows))


# --------------------------------------------------------------------------
# Shipped suite
# --------------------------------------------------------------------------


def _line(spec: LatticeSpec, a: int, b: int, name: str, ghost=False) -> TinyGraph:
    return TinyGraph(spec, tuple((i,) for i in range(a, b + 1)), ghost=ghost, name=name)


def tiny_suite() -> dict[str, TinyGraph]:
    """Tiny graphs in d=1 with L in {1, 2} and at most 8 edges."""
    s1, s2 = LatticeSpec(1, 1), LatticeSpec(1, 2)
    graphs = [
        _line(s1, 0, 1, "single-edge", ghost=True),
        _line(s1, -2, 2, "L1-segment-5"),
        _line(s1, 0, 3, "L1-half-line-4"),
        _line(s2, 0, 2, "L2-triangle"),
        _line(s2, -1, 1, "L2-box-1", ghost=True),
        _line(s2, -2, 2, "L2-segment-5"),
    ]
    return {g.name: g for g in graphs}


def run_inequality_suite(p_grid: Sequence[float] = default_grid()) -> list[InequalityReport]:
    """Every exact inequality on the shipped suite."""
    from .lattice import Box

    suite = tiny_suite()
    o = (0,)
    reports = []

    def tag(r, label):
        return InequalityReport(f"{r.name}:{label}", r.passed, r.rows, r.extra)

    bk_cases = [
        ("single-edge", ConnEvent(o, (1,)), ConnEvent(o, (1,))),
        ("L2-triangle", ConnEvent(o, (1,)), ConnEvent(o, (2,))),
        ("L2-triangle", ConnEvent(o, (2,)), ConnEvent(o, (2,))),
        ("L1-segment-5", ConnEvent(o, (2,)), ConnEvent(o, (-2,))),
        ("L2-segment-5", ConnEvent(o, (2,)), ConnEvent(o, (-2,))),
        ("L2-segment-5", ConnEvent(o, (1,)), ConnEvent(o, (2,))),
        ("L2-segment-5", ConnEvent((-1,), (1,)), ConnEvent(o, (2,))),
    ]
    for name, A, B in bk_cases:
        reports.append(tag(bk_check(suite[name], A, B, p_grid), f"bk {A.u}<->{A.v} o {B.u}<->{B.v}"))
    for name, g in suite.items():
        for x in g.vertices:
            if x != o:
                reports.append(tag(entropic_inequality_check(g, ConnEvent(o, x), p_grid),
                                   f"entropic 0<->{x}"))
        far = frozenset(v for v in g.vertices if abs(v[0]) >= 2)
        if far:
            arm = lambda c, g=g, far=far: bool(c.cluster() & far)  # noqa: E731
            reports.append(tag(entropic_inequality_check(g, arm, p_grid), "entropic one-arm"))
        for n in (0, 1):
            S = g.subset(Box(n))
            reports.append(tag(psi_phi_check(g, S, p_grid), f"psi-phi Box({n})"))
    for name in ("L1-segment-5", "L2-segment-5", "L2-box-1"):
        for n in (0, 1):
            reports.append(tag(box_halfspace_check(suite[name], n, p_grid), f"box-halfspace n={n}"))
    return reports
