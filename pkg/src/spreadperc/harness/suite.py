"""The shipped oracle suite: estimators against exact enumeration, plus
the exact inequality checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

from .. import estimators as E
from .. import oracle as O
from ..lattice import Box, Full, HalfSpace, LatticeSpec, Slab

S1 = LatticeSpec(1, 1)
S2 = LatticeSpec(1, 2)
FULL = Full()
HALF = HalfSpace(0)


@dataclass(frozen=True)
class GateCase:
    name: str
    estimator: str
    run: Callable  # (N, seed, workers) -> Estimate
    exact: Callable  # () -> float


# estimators returning several observables run once per (N, seed, workers)
@lru_cache(maxsize=None)
def _mag_edge(N, s, w):
    return E.est_magnetization(S1, 0.5, 0.7, N, s, V=64, region=Slab(1), workers=w)


@lru_cache(maxsize=None)
def _slab_l2(N, s, w):
    return E.est_slab_moments(S2, 2, 0.5, N, s, workers=w)


def _graph(name):
    return O.tiny_suite()[name]


def _obs(name, p, S=None, h=0.0):
    return O.exact_observables(_graph(name), p, S, h)


def _tail(name, p, S, n):
    g = _graph(name)
    Sset = g.subset(S)
    dist = O.exact_distribution(g, p, lambda c: len(c.cluster(Sset)))
    return math.fsum(w for v, w in dist.items() if v >= n)


def _face_moment(name, p, S, face_x, power):
    g = _graph(name)
    Sset = g.subset(S)
    f = lambda c: sum(1 for v in c.cluster(Sset) if v[0] == face_x) ** power  # noqa: E731
    return O.exact_expectation(g, p, 0.0, f).value


def gate_cases() -> list[GateCase]:
    c = []
    add = lambda *a: c.append(GateCase(*a))  # noqa: E731
    add("one_arm L1 n=1 full p=0.5", "one_arm",
        lambda N, s, w: E.est_one_arm(S1, FULL, 1, 0.5, N, s, workers=w),
        lambda: _obs("L1-segment-5", 0.5, Box(1)).theta)
    add("one_arm L1 n=1 half p=0.7", "one_arm",
        lambda N, s, w: E.est_one_arm(S1, HALF, 1, 0.7, N, s, workers=w),
        lambda: _obs("L1-half-line-4", 0.7, Box(1)).theta)
    add("pt_to_halfspace L1 n=2 p=0.6", "pt_to_halfspace",
        lambda N, s, w: E.est_point_to_halfspace(S1, 2, 0.6, N, s, workers=w),
        lambda: _obs("L1-half-line-4", 0.6, [(0,), (1,)]).theta)
    add("phi L2 Box(1) p=0.5", "phi",
        lambda N, s, w: E.est_phi(S2, Box(1), 0.5, N, s, workers=w),
        lambda: _obs("L2-box-1", 0.5, Box(1)).phi)
    add("phi L2 Box(0) p=0.25", "phi",
        lambda N, s, w: E.est_phi(S2, Box(0), 0.25, N, s, workers=w),
        lambda: _obs("L2-box-1", 0.25, Box(0)).phi)
    add("phi L1 Box(1) p=0.3", "phi",
        lambda N, s, w: E.est_phi(S1, Box(1), 0.3, N, s, workers=w),
        lambda: _obs("L1-segment-5", 0.3, Box(1)).phi)
    add("psi L2 Box(1) p=0.5", "psi",
        lambda N, s, w: E.est_psi(S2, Box(1), 0.5, N, s, workers=w),
        lambda: _obs("L2-box-1", 0.5, Box(1)).psi)
    add("psi L2 Slab(2) p=0.4", "psi",
        lambda N, s, w: E.est_psi(S2, Slab(2), 0.4, N, s, workers=w),
        lambda: _obs("L2-triangle", 0.4, Slab(2)).psi)
    add("chi L1 full m=1 p=0.5", "susceptibility",
        lambda N, s, w: E.est_susceptibility(S1, FULL, 0.5, 1, N, s, workers=w),
        lambda: _obs("L1-segment-5", 0.5, Box(1)).chi)
    add("chi L2 full m=1 p=0.5", "susceptibility",
        lambda N, s, w: E.est_susceptibility(S2, FULL, 0.5, 1, N, s, workers=w),
        lambda: _obs("L2-box-1", 0.5, Box(1)).chi)
    add("chi L2 half m=2 p=0.5", "susceptibility",
        lambda N, s, w: E.est_susceptibility(S2, HALF, 0.5, 2, N, s, workers=w),
        lambda: _obs("L2-triangle", 0.5, None).chi)
    add("magnetization L1 edge p=0.5 h=0.7", "magnetization",
        lambda N, s, w: _mag_edge(N, s, w).ghost,
        lambda: _obs("single-edge", 0.5, None, 0.7).M)
    add("magnetization-volume L1 edge p=0.5 h=0.7", "magnetization",
        lambda N, s, w: _mag_edge(N, s, w).volume,
        lambda: _obs("single-edge", 0.5, None, 0.7).M)
    add("magnetization L2 Box(1) p=0.3 h=0.4", "magnetization",
        lambda N, s, w: E.est_magnetization(S2, 0.3, 0.4, N, s, V=64, region=Box(1), workers=w).ghost,
        lambda: _obs("L2-box-1", 0.3, Box(1), 0.4).M)
    add("slab N L2 n=2 p=0.5", "slab_moments",
        lambda N, s, w: _slab_l2(N, s, w)[0],
        lambda: _face_moment("L2-triangle", 0.5, Slab(2), 2, 1))
    add("slab N^2 L2 n=2 p=0.5", "slab_moments",
        lambda N, s, w: _slab_l2(N, s, w)[1],
        lambda: _face_moment("L2-triangle", 0.5, Slab(2), 2, 2))
    add("slab N L1 n=1 p=0.35", "slab_moments",
        lambda N, s, w: E.est_slab_moments(S1, 1, 0.35, N, s, workers=w)[0],
        lambda: _face_moment("single-edge", 0.35, None, 1, 1))
    add("two_point L1 m=1 p=0.5 r=1", "two_point",
        lambda N, s, w: E.est_two_point_profile(S1, FULL, 0.5, 1, N, s, workers=w).shells[1],
        lambda: sum(t for x, t in _obs("L1-segment-5", 0.5, Box(1)).tau_S.items() if abs(x[0]) == 1))
    add("two_point L2 m=1 p=0.6 r=1", "two_point",
        lambda N, s, w: E.est_two_point_profile(S2, FULL, 0.6, 1, N, s, workers=w).shells[1],
        lambda: sum(t for x, t in _obs("L2-box-1", 0.6, Box(1)).tau_S.items() if abs(x[0]) == 1))
    add("two_point L2 half m=2 p=0.5 r=2", "two_point",
        lambda N, s, w: E.est_two_point_profile(S2, HALF, 0.5, 2, N, s, workers=w).shells[2],
        lambda: _obs("L2-triangle", 0.5, None).tau_S[(2,)])
    add("volume_tail L2 Box(1) p=0.5 n=3", "volume_tail",
        lambda N, s, w: E.est_volume_tail(S2, 0.5, [1, 2, 3], 1, N, s, workers=w)[3],
        lambda: _tail("L2-box-1", 0.5, Box(1), 3))
    return c


@dataclass(frozen=True)
class GateResult:
    name: str
    estimator: str
    exact: float
    mean: float
    stderr: float
    n_samples: int
    passed: bool

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if abs(self.mean - self.exact) <= 1e-12 else math.inf
        return (self.mean - self.exact) / self.stderr


def run_gate(N: int = 10**6, seed: int = 1, workers: int = 1) -> list[GateResult]:
    out = []
    _mag_edge.cache_clear()
    _slab_l2.cache_clear()
    for case in gate_cases():
        est = case.run(N, seed, workers)
        exact = case.exact()
        out.append(GateResult(case.name, case.estimator, exact, est.mean, est.stderr,
                              est.n_samples, est.within(exact, 4.0)))
    return out


def run_exact_suite() -> list[O.InequalityReport]:
    return O.run_inequality_suite()
