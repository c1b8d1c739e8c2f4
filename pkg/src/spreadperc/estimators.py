"""Monte Carlo estimators built on the exploration kernel.

Samples are i.i.d. by construction (one hash stream per sample index), so
every estimator is a plain sample mean with the plug-in standard error.
Samples ``0 .. N-1`` are cut into fixed blocks of ``BLOCK`` indices; each
block is reduced to exact accumulators and blocks are merged in ascending
order.  Worker processes own disjoint sets of blocks (block ``b`` goes to
worker ``b mod k``), so the worker count never changes a reported number.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .explorer import (
    ERROR,
    GHOST,
    MAX_RADIUS,
    OUT_EDGES,
    PIONEERS,
    TARGET,
    TARGET_HITS,
    TRUNCATED,
    VOLUME,
    Problem,
    StopRules,
    one_arm_problem,
)
from .lattice import Box, Complement, Full, HalfSpace, Intersect, LatticeSpec, Region, Slab
from .sampling import SeedSpec

BLOCK = 4096
Number = Union[int, float]


# --------------------------------------------------------------------------
# Estimate
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """Sample mean of ``scale * X`` with exact accumulators of ``X``.

    ``sum`` and ``sum_sq`` are Python ints for count observables (exact
    merges) and floats for real-valued ones.  ``flagged`` counts samples
    that hit a guardrail (volume cap, region boundary, packing range).
    """

    sum: Number
    sum_sq: Number
    n_samples: int
    scale: float = 1.0
    flagged: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("an estimate needs at least one sample")

    @property
    def mean(self) -> float:
        return self.scale * self.sum / self.n_samples

    @property
    def stderr(self) -> float:
        n = self.n_samples
        if isinstance(self.sum, int) and isinstance(self.sum_sq, int):
            # n^2 * variance, exact
            num = n * self.sum_sq - self.sum * self.sum
            var = max(0, num) / (n * n)
        else:
            m = self.sum / n
            var = max(0.0, self.sum_sq / n - m * m)
        return abs(self.scale) * math.sqrt(var / n)

    @property
    def flagged_fraction(self) -> float:
        return self.flagged / self.n_samples

    def merge(self, other: "Estimate") -> "Estimate":
        if self.scale != other.scale:
            raise ValueError("cannot merge estimates with different scales")
        return Estimate(self.sum + other.sum, self.sum_sq + other.sum_sq,
                        self.n_samples + other.n_samples, self.scale,
                        self.flagged + other.flagged)

    def within(self, value: float, k: float = 4.0) -> bool:
        """True when ``value`` is within ``k`` standard errors of the mean
        (exact equality required when the standard error vanishes)."""
        return abs(self.mean - value) <= k * self.stderr + 1e-12 * max(1.0, abs(value))


def agree(a: Estimate, b: Estimate, k: float = 4.0) -> bool:
    return abs(a.mean - b.mean) <= k * math.hypot(a.stderr, b.stderr) + 1e-12


def _int_moments(v: np.ndarray) -> tuple[int, int]:
    v = np.asarray(v, dtype=np.int64)
    if v.size == 0:
        return 0, 0
    if int(np.abs(v).max()) < 1 << 25:
        return int(v.sum()), int((v * v).sum())
    w = v.astype(object)
    return int(w.sum()), int((w * w).sum())


def _real_moments(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=np.float64)
    return math.fsum(v), math.fsum(v * v)


# --------------------------------------------------------------------------
# Sample-block scheduling
# --------------------------------------------------------------------------


def block_ranges(N: int, start: int = 0) -> list[tuple[int, int]]:
    return [(s, min(s + BLOCK, start + N)) for s in range(start, start + N, BLOCK)]


def worker_ranges(N: int, workers: int, start: int = 0) -> dict[int, list[tuple[int, int]]]:
    """Sample ranges owned by each worker."""
    blocks = block_ranges(N, start)
    k = max(1, int(workers))
    return {w: blocks[w::k] for w in range(min(k, len(blocks)) or 1)}


Reducer = Callable[[np.ndarray, np.ndarray], tuple]


def _worker(problem: Problem, p: float, seed: int, shell_m: int, reducer: Reducer,
            blocks: list[tuple[int, int]]):
    parts = []
    for s0, s1 in blocks:
        out, shells = problem.run_block(p, seed, s0, s1, shell_m, strict=False)
        parts.append((s0, reducer(out, shells)))
    return parts


def _add(a, b):
    if isinstance(a, tuple):
        return tuple(_add(x, y) for x, y in zip(a, b))
    return a + b


def run_samples(problem: Problem, p: float, seed, N: int, reducer: Reducer,
                workers: int = 1, shell_m: int = -1, start: int = 0):
    """Reduce samples ``start .. start+N-1`` blockwise and merge in block order."""
    if N < 1:
        raise ValueError("need at least one sample")
    seed = seed.master_seed if isinstance(seed, SeedSpec) else int(seed)
    problem.kernel_args(p)  # validate before forking
    owned = worker_ranges(N, workers, start)
    task = partial(_worker, problem, p, seed, shell_m, reducer)
    if len(owned) == 1:
        parts = task(owned[0])
    else:
        with mp.get_context("fork").Pool(len(owned)) as pool:
            parts = [x for chunk in pool.map(task, [owned[w] for w in sorted(owned)]) for x in chunk]
    parts.sort(key=lambda t: t[0])
    total = parts[0][1]
    for _, r in parts[1:]:
        total = _add(total, r)
    return total


def _flags(out: np.ndarray) -> np.ndarray:
    return (out[:, TRUNCATED] != 0) | (out[:, ERROR] != 0)


# --------------------------------------------------------------------------
# reducers (module level so they pickle)
# --------------------------------------------------------------------------


def _r_indicator(out, shells):
    hit = out[:, TARGET] != 0
    flagged = int((_flags(out) & ~hit).sum())
    s = int(hit.sum())
    return s, s, flagged


def _r_phi_psi(out, shells):
    f = int(_flags(out).sum())
    return _int_moments(out[:, OUT_EDGES]) + _int_moments(out[:, PIONEERS]) + (f,)


def _r_volume_radius(m, out, shells):
    s, q = _int_moments(out[:, VOLUME])
    flagged = _flags(out) | (out[:, MAX_RADIUS] >= m)
    return s, q, int(flagged.sum())


def _r_tail(caps, m, out, shells):
    vol = out[:, VOLUME]
    counts = tuple(int((vol >= c).sum()) for c in caps)
    # reaching the top cap settles every indicator, so it is not truncation
    resolved = (vol >= caps[-1]) & (out[:, ERROR] == 0)
    flagged = (_flags(out) & ~resolved) | (out[:, MAX_RADIUS] >= m)
    return counts, int(flagged.sum())


def _r_ghost(out, shells):
    # a capped cluster that has not met the ghost yet is counted as a hit
    hit = (out[:, GHOST] != 0) | (out[:, TRUNCATED] != 0)
    s = int(hit.sum())
    return s, s, int((out[:, ERROR] != 0).sum())


def _r_magnet_volume(h, out, shells):
    vals = -np.expm1(-h * out[:, VOLUME].astype(np.float64))
    vals[out[:, TRUNCATED] != 0] = 1.0
    # the cap V is chosen so a capped sample is off by at most exp(-hV) <= tol
    return _real_moments(vals) + (int((out[:, ERROR] != 0).sum()),)


def _r_shells(out, shells):
    return (tuple(_int_moments(shells[:, r]) for r in range(shells.shape[1])),
            int(_flags(out).sum()))


def _r_slab(out, shells):
    v = out[:, TARGET_HITS].astype(np.int64)
    s1, s2 = _int_moments(v)
    _, s4 = _int_moments(v * v)
    return s1, s2, s4, int(_flags(out).sum())


# --------------------------------------------------------------------------
# Observables
# --------------------------------------------------------------------------


def _check_ambient(ambient: Region):
    ok = isinstance(ambient, Full) or (isinstance(ambient, HalfSpace) and ambient.n == 0)
    if not ok:
        raise ValueError("ambient must be Full() or HalfSpace(0)")


def est_one_arm(spec: LatticeSpec, ambient: Region, n: int, p: float, N: int, seed,
                volume_cap: Optional[int] = None, workers: int = 1) -> Estimate:
    """Probability that the origin reaches the complement of the n-box
    within ``ambient``.  Capped samples that have not reached the target
    count as failures and are flagged."""
    _check_ambient(ambient)
    problem = one_arm_problem(spec, n, ambient, volume_cap)
    s, q, f = run_samples(problem, p, seed, N, _r_indicator, workers)
    return Estimate(s, q, N, 1.0, f)


def point_to_halfspace_problem(spec: LatticeSpec, n: int, volume_cap=None) -> Problem:
    if n < 1:
        raise ValueError("n must be at least 1")
    # {0 <= x_1 <= n-1} and the target {x_1 >= n}
    S = Intersect((HalfSpace(0), Complement(HalfSpace(-n))))
    return Problem(spec, S, StopRules(volume_cap=volume_cap, target=HalfSpace(-n)))


def est_point_to_halfspace(spec: LatticeSpec, n: int, p: float, N: int, seed,
                           volume_cap: Optional[int] = None, workers: int = 1) -> Estimate:
    problem = point_to_halfspace_problem(spec, n, volume_cap)
    s, q, f = run_samples(problem, p, seed, N, _r_indicator, workers)
    return Estimate(s, q, N, 1.0, f)


def est_phi_psi(spec: LatticeSpec, S: Region, p: float, N: int, seed,
                volume_cap: Optional[int] = None, workers: int = 1,
                start: int = 0) -> tuple[Estimate, Estimate]:
    """Both boundary functionals from the same samples."""
    problem = Problem(spec, S, StopRules(volume_cap=volume_cap))
    s1, q1, s2, q2, f = run_samples(problem, p, seed, N, _r_phi_psi, workers, start=start)
    return Estimate(s1, q1, N, float(p), f), Estimate(s2, q2, N, 1.0, f)


def est_phi(spec, S, p, N, seed, volume_cap=None, workers=1) -> Estimate:
    """p times the mean number of (cluster vertex, outside vertex) pairs."""
    return est_phi_psi(spec, S, p, N, seed, volume_cap, workers)[0]


def est_psi(spec, S, p, N, seed, volume_cap=None, workers=1) -> Estimate:
    """Mean number of cluster vertices on the inner boundary of ``S``."""
    return est_phi_psi(spec, S, p, N, seed, volume_cap, workers)[1]


def est_susceptibility(spec: LatticeSpec, ambient: Region, p: float, m: int, N: int, seed,
                       volume_cap: Optional[int] = None, workers: int = 1) -> Estimate:
    """Mean volume of the cluster restricted to ``ambient & Box(m)``; the
    flagged count holds samples whose cluster touched the box boundary."""
    _check_ambient(ambient)
    if m < 1:
        raise ValueError("truncation radius must be at least 1")
    problem = Problem(spec, Intersect((ambient, Box(m))), StopRules(volume_cap=volume_cap))
    s, q, f = run_samples(problem, p, seed, N, partial(_r_volume_radius, m), workers)
    return Estimate(s, q, N, 1.0, f)


def est_volume_tail(spec: LatticeSpec, p: float, caps: Sequence[int], m: int, N: int, seed,
                    workers: int = 1) -> dict[int, Estimate]:
    """P[|C_{Box(m)}| >= n] for every n in ``caps`` from one capped pass.

    Exploration stops once the cluster reaches ``max(caps)`` vertices, so
    the counters stay exact.  Flags mark samples touching the box boundary.
    """
    caps = [int(c) for c in caps]
    if not caps or any(c < 1 for c in caps) or caps != sorted(set(caps)):
        raise ValueError("caps must be a strictly increasing list of positive integers")
    problem = Problem(spec, Box(m), StopRules(volume_cap=caps[-1]))
    counts, f = run_samples(problem, p, seed, N, partial(_r_tail, tuple(caps), m), workers)
    return {c: Estimate(k, k, N, 1.0, f) for c, k in zip(caps, counts)}


@dataclass(frozen=True)
class Magnetization:
    ghost: Estimate
    volume: Estimate

    @property
    def mean(self) -> float:
        return self.ghost.mean

    @property
    def agree(self) -> bool:
        return agree(self.ghost, self.volume)


def est_magnetization(spec: LatticeSpec, p: float, h: float, N: int, seed, V: int,
                      tol: float = 1e-9, region: Region = Full(),
                      workers: int = 1) -> Magnetization:
    """Two estimators of the probability of reaching the ghost vertex.

    ``ghost``: ghost links sampled at every explored vertex, stopping on
    the first hit.  ``volume``: mean of ``1 - exp(-h |C|)`` over ghost-free
    explorations capped at ``V``.  Capped samples count as 1 in both; the
    bias is at most ``exp(-h V)``, which must not exceed ``tol``, so they
    are not flagged.
    """
    if not h >= 0:
        raise ValueError("h must be nonnegative")
    if h == 0:
        # no ghost links at all: M = 0 exactly, and capped samples carry no bias
        return Magnetization(Estimate(0, 0, N), Estimate(0.0, 0.0, N))
    if math.exp(-h * V) > tol:
        raise ValueError(f"cap V={V} too small for h={h}: exp(-hV) > {tol}")
    rules = StopRules(volume_cap=V, ghost_h=h, stop_at_ghost=True)
    s, q, f = run_samples(Problem(spec, region, rules), p, seed, N, _r_ghost, workers)
    ghost = Estimate(s, q, N, 1.0, f)
    plain = Problem(spec, region, StopRules(volume_cap=V))
    s2, q2, f2 = run_samples(plain, p, seed, N, partial(_r_magnet_volume, float(h)), workers)
    return Magnetization(ghost, Estimate(s2, q2, N, 1.0, f2))


@dataclass(frozen=True)
class RadialProfile:
    """Shell sums of the restricted two-point function, radius -> Estimate."""

    shells: dict[int, Estimate] = field(default_factory=dict)
    m: int = 0

    def __post_init__(self):
        if any(r > self.m or r < 0 for r in self.shells):
            raise ValueError("radii must lie in [0, m]")


def est_two_point_profile(spec: LatticeSpec, ambient: Region, p: float, m: int, N: int, seed,
                          volume_cap: Optional[int] = None, workers: int = 1) -> RadialProfile:
    _check_ambient(ambient)
    if m < 1:
        raise ValueError("m must be at least 1")
    problem = Problem(spec, Intersect((ambient, Box(m))), StopRules(volume_cap=volume_cap))
    moments, f = run_samples(problem, p, seed, N, _r_shells, workers, shell_m=m)
    return RadialProfile({r: Estimate(s, q, N, 1.0, f) for r, (s, q) in enumerate(moments)}, m)


def slab_problem(spec: LatticeSpec, n: int, volume_cap=None) -> Problem:
    if n < 1:
        raise ValueError("n must be at least 1")
    # far face {x_1 = n} of the slab {0 <= x_1 <= n}
    face = Intersect((HalfSpace(-n), Complement(HalfSpace(-n - 1))))
    return Problem(spec, Slab(n), StopRules(volume_cap=volume_cap, target=face,
                                           stop_at_target=False))


def est_slab_moments(spec: LatticeSpec, n: int, p: float, N: int, seed,
                     volume_cap: Optional[int] = None,
                     workers: int = 1) -> tuple[Estimate, Estimate]:
    """First and second moments of the number of far-face vertices joined
    to the origin inside the slab, from the same samples."""
    s1, s2, s4, f = run_samples(slab_problem(spec, n, volume_cap), p, seed, N, _r_slab, workers)
    return Estimate(s1, s2, N, 1.0, f), Estimate(s2, s4, N, 1.0, f)
