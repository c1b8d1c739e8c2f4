"""Breadth-first exploration of restricted open clusters.

The cluster ``C_S(0)`` of vertices joined to the origin by open paths inside
``S`` is grown breadth-first from the origin.  Edge states are never stored:
each is recomputed from the counter-based hash when needed (see
:mod:`spreadperc.sampling`), and the visited set is an open-addressing table
of packed keys, so memory scales with the cluster and not with the region.

Per explored vertex ``x`` the kernel takes one of two paths:

* fast path, when the whole stencil around ``x`` lies inside ``S``: a tight
  loop over precomputed packed offsets, no membership tests;
* slow path otherwise: an odometer over the stencil clipped to the bounding
  box of ``S`` (and of the target), with membership tests, so that edges to
  target vertices outside ``S`` are sampled exactly once per cluster vertex.

Newly found vertices are queued in lexicographic offset order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numba as nb
import numpy as np

from .lattice import (
    Box,
    Complement,
    Full,
    HalfSpace,
    Intersect,
    LatticeSpec,
    Packing,
    PackingOverflow,
    Point,
    Region,
    stencil_offsets,
)
from .sampling import (
    EDGE_C,
    GOLDEN,
    SeedSpec,
    ghost_probability,
    nb_edge_hash,
    nb_ghost_hash,
    nb_mix64,
    nb_stream_key,
    threshold,
)

# layout of the per-sample statistics vector
VOLUME, TRUNCATED, PIONEERS, OUT_EDGES, TARGET, GHOST, TARGET_HITS, MAX_RADIUS, ERROR = range(9)
NSTAT = 9

UNBOUNDED = 1 << 62

_G = np.uint64(GOLDEN)
_C = np.uint64(EDGE_C)
_S11 = np.uint64(11)


@dataclass(frozen=True)
class StopRules:
    """What to record and when to stop.

    ``target`` stops the exploration on first contact unless
    ``stop_at_target`` is False (used when target vertices are counted).
    ``ghost_h = 0`` disables the ghost field.
    """

    volume_cap: Optional[int] = None
    target: Optional[Region] = None
    ghost_h: float = 0.0
    count_out_edges: bool = True
    count_pioneers: bool = True
    stop_at_target: bool = True
    stop_at_ghost: bool = False

    def __post_init__(self):
        if self.volume_cap is not None and self.volume_cap < 1:
            raise ValueError("volume_cap must be at least 1")
        if not self.ghost_h >= 0:
            raise ValueError("ghost_h must be nonnegative")

    @property
    def cap(self) -> int:
        return UNBOUNDED if self.volume_cap is None else int(self.volume_cap)


@dataclass(frozen=True)
class ExplorationReport:
    volume: int
    truncated: bool
    pioneers: int
    out_edges: int
    target_reached: bool
    ghost_hit: bool
    first_target_hits: int
    max_radius: int
    cluster: Optional[tuple[Point, ...]] = None


# --------------------------------------------------------------------------
# numba core
# --------------------------------------------------------------------------


@nb.njit(cache=True)
def _ht_insert(table, key):
    """Insert ``key``; True when it was absent."""
    mask = table.shape[0] - 1
    i = np.int64(nb_mix64(np.uint64(key)) & np.uint64(mask))
    k1 = key + 1
    while True:
        v = table[i]
        if v == 0:
            table[i] = k1
            return True
        if v == k1:
            return False
        i = (i + 1) & mask


@nb.njit(cache=True)
def _ht_contains(table, key):
    mask = table.shape[0] - 1
    i = np.int64(nb_mix64(np.uint64(key)) & np.uint64(mask))
    k1 = key + 1
    while True:
        v = table[i]
        if v == 0:
            return False
        if v == k1:
            return True
        i = (i + 1) & mask


@nb.njit(cache=True)
def _ht_grow(table):
    new = np.zeros(table.shape[0] * 2, np.int64)
    for v in table:
        if v != 0:
            _ht_insert(new, v - 1)
    return new


@nb.njit(inline="always", cache=True)
def _inside(y, lo, hi, hole):
    d = y.shape[0]
    for i in range(d):
        if y[i] < lo[i] or y[i] > hi[i]:
            return False
    if hole >= 0:
        for i in range(d):
            if y[i] > hole or y[i] < -hole:
                return True
        return False
    return True


@nb.njit(inline="always", cache=True)
def _overlap(a, b, c, e):
    lo = a if a > c else c
    hi = b if b < e else e
    return hi - lo + 1 if hi >= lo else 0


@nb.njit(cache=True)
def _out_degree(y, L, full, lo, hi, hole):
    d = y.shape[0]
    inside = 1
    for i in range(d):
        inside *= _overlap(y[i] - L, y[i] + L, lo[i], hi[i])
    if hole >= 0 and inside > 0:
        removed = 1
        for i in range(d):
            removed *= _overlap(y[i] - L, y[i] + L, max(lo[i], -hole), min(hi[i], hole))
        inside -= removed
    return full - inside


@nb.njit(cache=True)
def _admit(y, ky, stats, L, full, bias, s_lo, s_hi, s_hole, has_t, t_lo, t_hi, t_hole,
           stream, gthr, stop_target, stop_ghost):
    """Book-keeping for a vertex just added to the cluster.  Returns 1 to
    stop, 2 on packing overflow, 0 otherwise."""
    d = y.shape[0]
    for i in range(d):
        if y[i] < -bias + L or y[i] > bias - 1 - L:
            stats[ERROR] = 1
            return 2
    stats[VOLUME] += 1
    pioneer = False
    for i in range(d):
        for step in (-1, 1):
            y[i] += step
            if not _inside(y, s_lo, s_hi, s_hole):
                pioneer = True
            y[i] -= step
        if pioneer:
            break
    if pioneer:
        stats[PIONEERS] += 1
    stats[OUT_EDGES] += _out_degree(y, L, full, s_lo, s_hi, s_hole)
    r = 0
    for i in range(d):
        a = abs(y[i])
        if a > r:
            r = a
    if r > stats[MAX_RADIUS]:
        stats[MAX_RADIUS] = r
    if has_t and _inside(y, t_lo, t_hi, t_hole):
        stats[TARGET_HITS] += 1
        stats[TARGET] = 1
        if stop_target:
            return 1
    if gthr > 0:
        if (nb_ghost_hash(stream, ky) >> _S11) < gthr:
            stats[GHOST] = 1
            if stop_ghost:
                return 1
    return 0


@nb.njit(cache=True)
def _push(y, ky, qc, qk, nvol):
    """Append a vertex to the queue, growing it when full."""
    d = y.shape[0]
    if nvol == qk.shape[0]:
        nqc = np.empty((2 * nvol, d), np.int64)
        nqc[:nvol] = qc[:nvol]
        nqk = np.empty(2 * nvol, np.int64)
        nqk[:nvol] = qk[:nvol]
        qc, qk = nqc, nqk
    for i in range(d):
        qc[nvol, i] = y[i]
    qk[nvol] = ky
    return qc, qk


@nb.njit(cache=True)
def _explore_core(L, bits, bias, offs, order, pmul_neg, pmul_pos,
                  s_lo, s_hi, s_hole, b_lo, b_hi,
                  has_t, t_lo, t_hi, t_hole,
                  stream, thr, gthr, cap, stop_target, stop_ghost, hb, hits):
    d = s_lo.shape[0]
    K = offs.shape[0]
    n_neg = pmul_neg.shape[0]
    full = (2 * L + 1) ** d
    last = d - 1
    stats = np.zeros(NSTAT, np.int64)

    qc = np.empty((16, d), np.int64)
    qk = np.empty(16, np.int64)
    table = np.zeros(32, np.int64)
    used = 0
    ttab = np.zeros(16, np.int64)
    tused = 0
    x = np.zeros(d, np.int64)
    y = np.zeros(d, np.int64)
    lo = np.zeros(d, np.int64)
    hi = np.zeros(d, np.int64)

    k0 = np.int64(0)
    for i in range(d):
        k0 += np.int64(bias) << (bits * i)
    _ht_insert(table, k0)
    used = 1
    qc, qk = _push(y, k0, qc, qk, 0)
    nvol = 1
    if _admit(y, k0, stats, L, full, bias, s_lo, s_hi, s_hole, has_t, t_lo, t_hi,
              t_hole, stream, gthr, stop_target, stop_ghost) != 0:
        return stats, qc, qk

    head = 0
    while head < nvol:
        for i in range(d):
            x[i] = qc[head, i]
        kx = qk[head]
        head += 1

        fast = True
        for i in range(d):
            if x[i] - L < s_lo[i] or x[i] + L > s_hi[i]:
                fast = False
                break
        if fast and s_hole >= 0:
            disjoint = False
            for i in range(d):
                if x[i] - L > s_hole or x[i] + L < -s_hole:
                    disjoint = True
                    break
            fast = disjoint

        if fast:
            # whole stencil inside S: hash every offset, then scan
            ukx = np.uint64(kx)
            xg = ukx * _G
            xc = ukx * _C
            base = (xg ^ stream) + xc
            for jj in range(n_neg):
                hb[jj] = nb_mix64(((xg + pmul_neg[jj]) ^ stream) + xc) >> _S11
            for jj in range(K - n_neg):
                hb[n_neg + jj] = nb_mix64(base + pmul_pos[jj]) >> _S11
            nh = 0
            for jj in range(K):
                if hb[jj] < thr:
                    hits[nh] = order[jj]
                    nh += 1
            # insertion sort in place: nh is small and allocation dominates
            for a in range(1, nh):
                v = hits[a]
                b = a - 1
                while b >= 0 and hits[b] > v:
                    hits[b + 1] = hits[b]
                    b -= 1
                hits[b + 1] = v
            for t in range(nh):
                j = hits[t]
                for i in range(d):
                    y[i] = x[i] + offs[j, i]
                ky = kx
                for i in range(d):
                    ky += offs[j, i] << (bits * i)
                if _ht_contains(table, ky):
                    continue
                if nvol >= cap:
                    stats[TRUNCATED] = 1
                    return stats, qc, qk
                _ht_insert(table, ky)
                used += 1
                if 2 * used > table.shape[0]:
                    table = _ht_grow(table)
                qc, qk = _push(y, ky, qc, qk, nvol)
                nvol += 1
                if _admit(y, ky, stats, L, full, bias, s_lo, s_hi, s_hole, has_t, t_lo,
                          t_hi, t_hole, stream, gthr, stop_target, stop_ghost) != 0:
                    return stats, qc, qk
            continue

        # slow path: odometer over the stencil clipped to the bounding box,
        # outer coordinates 0..d-2, innermost coordinate d-1 in a tight loop
        empty = False
        for i in range(d):
            lo[i] = max(x[i] - L, b_lo[i])
            hi[i] = min(x[i] + L, b_hi[i])
            if lo[i] > hi[i]:
                empty = True
        if empty:
            continue
        for i in range(d):
            y[i] = lo[i]
        shift_last = bits * last
        while True:
            s_out = 0
            t_out = 0
            s_far = False
            t_far = False
            diff = 0
            kbase = kx
            for i in range(last):
                yi = y[i]
                if yi < s_lo[i] or yi > s_hi[i]:
                    s_out += 1
                if yi > s_hole or yi < -s_hole:
                    s_far = True
                if yi < t_lo[i] or yi > t_hi[i]:
                    t_out += 1
                if yi > t_hole or yi < -t_hole:
                    t_far = True
                if yi != x[i]:
                    diff += 1
                kbase += (yi - x[i]) << (bits * i)
            for v in range(lo[last], hi[last] + 1):
                if diff == 0 and v == x[last]:
                    continue
                in_s = (s_out == 0 and s_lo[last] <= v <= s_hi[last]
                        and (s_hole < 0 or s_far or v > s_hole or v < -s_hole))
                in_t = False
                if not in_s and has_t:
                    in_t = (t_out == 0 and t_lo[last] <= v <= t_hi[last]
                            and (t_hole < 0 or t_far or v > t_hole or v < -t_hole))
                if not (in_s or in_t):
                    continue
                ky = kbase + ((v - x[last]) << shift_last)
                if (nb_edge_hash(stream, kx, ky) >> _S11) >= thr:
                    continue
                if in_s:
                    if _ht_contains(table, ky):
                        continue
                    if nvol >= cap:
                        stats[TRUNCATED] = 1
                        return stats, qc, qk
                    _ht_insert(table, ky)
                    used += 1
                    if 2 * used > table.shape[0]:
                        table = _ht_grow(table)
                    y[last] = v
                    qc, qk = _push(y, ky, qc, qk, nvol)
                    nvol += 1
                    if _admit(y, ky, stats, L, full, bias, s_lo, s_hi, s_hole, has_t,
                              t_lo, t_hi, t_hole, stream, gthr, stop_target,
                              stop_ghost) != 0:
                        return stats, qc, qk
                elif _ht_insert(ttab, ky):
                    tused += 1
                    if 2 * tused > ttab.shape[0]:
                        ttab = _ht_grow(ttab)
                    stats[TARGET_HITS] += 1
                    stats[TARGET] = 1
                    if stop_target:
                        return stats, qc, qk
            i = last - 1
            while i >= 0:
                y[i] += 1
                if y[i] <= hi[i]:
                    break
                y[i] = lo[i]
                i -= 1
            if i < 0:
                break
    return stats, qc, qk


@nb.njit(cache=True)
def _run_block(s0, s1, seed, L, bits, bias, offs, order, pmul_neg, pmul_pos,
               s_lo, s_hi, s_hole, b_lo, b_hi, has_t, t_lo, t_hi, t_hole,
               thr, gthr, cap, stop_target, stop_ghost, shell_m):
    """Explore samples ``s0 .. s1-1``; per-sample statistics, plus per-sample
    l-infinity shell counts of the cluster when ``shell_m >= 0``."""
    n = s1 - s0
    d = s_lo.shape[0]
    out = np.empty((n, NSTAT), np.int64)
    width = shell_m + 1 if shell_m >= 0 else 0
    shells = np.zeros((n, width), np.int64)
    hb = np.empty(offs.shape[0], np.uint64)
    hits = np.empty(offs.shape[0], np.int64)
    for s in range(s0, s1):
        stream = nb_stream_key(seed, s)
        stats, qc, qk = _explore_core(L, bits, bias, offs, order, pmul_neg, pmul_pos,
                                      s_lo, s_hi, s_hole, b_lo, b_hi,
                                      has_t, t_lo, t_hi, t_hole,
                                      stream, thr, gthr, cap, stop_target, stop_ghost, hb, hits)
        out[s - s0] = stats
        if shell_m >= 0:
            for v in range(stats[VOLUME]):
                r = 0
                for i in range(d):
                    a = abs(qc[v, i])
                    if a > r:
                        r = a
                if r <= shell_m:
                    shells[s - s0, r] += 1
    return out, shells


@nb.njit(cache=True)
def _explore_single(seed, sample, L, bits, bias, offs, order, pmul_neg, pmul_pos,
                    s_lo, s_hi, s_hole, b_lo, b_hi, has_t, t_lo, t_hi, t_hole,
                    thr, gthr, cap, stop_target, stop_ghost):
    stream = nb_stream_key(seed, sample)
    hb = np.empty(offs.shape[0], np.uint64)
    hits = np.empty(offs.shape[0], np.int64)
    stats, qc, qk = _explore_core(L, bits, bias, offs, order, pmul_neg, pmul_pos,
                                  s_lo, s_hi, s_hole, b_lo, b_hi,
                                  has_t, t_lo, t_hi, t_hole,
                                  stream, thr, gthr, cap, stop_target, stop_ghost, hb, hits)
    n = stats[VOLUME]
    return stats, qc[:n].copy()


# --------------------------------------------------------------------------
# Python-side problem setup
# --------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _stencil_arrays(d: int, L: int):
    spec = LatticeSpec(d, L)
    packing = Packing(d)
    if packing.bias <= L:
        raise PackingOverflow(f"d={d} leaves no room for spread {L} in a 63-bit key")
    offs = stencil_offsets(spec)
    shifts = np.arange(d, dtype=np.int64) * packing.bits
    poff = (offs << shifts).sum(axis=1).astype(np.int64)
    neg_idx = np.flatnonzero(poff < 0)
    pos_idx = np.flatnonzero(poff > 0)
    # the smaller packed endpoint of an edge to a neighbour is the neighbour
    # itself for negative offsets and the centre for positive ones
    order = np.concatenate([neg_idx, pos_idx]).astype(np.int64)
    pmul_neg = poff[neg_idx].astype(np.uint64) * np.uint64(GOLDEN)
    pmul_pos = poff[pos_idx].astype(np.uint64) * np.uint64(EDGE_C)
    for a in (offs, order, pmul_neg, pmul_pos):
        a.setflags(write=False)
    return offs, order, pmul_neg, pmul_pos


@dataclass(frozen=True)
class Problem:
    """Everything the kernel needs for one (lattice, region, rules) triple,
    except p, the seed and the sample range."""

    spec: LatticeSpec
    region: Region
    rules: StopRules

    def __post_init__(self):
        if not self.region.bounds(self.spec.d).contains(self.spec.origin):
            raise ValueError(f"the origin is not in {self.region}")

    def kernel_args(self, p: float):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {p!r}")
        d, L = self.spec.d, self.spec.L
        packing = Packing(d)
        offs, order, pmul_neg, pmul_pos = _stencil_arrays(d, L)
        sb = self.region.bounds(d)
        s_lo, s_hi, s_hole = sb.arrays()
        rules = self.rules
        if rules.target is not None:
            tb = rules.target.bounds(d)
            t_lo, t_hi, t_hole = tb.arrays()
            b_lo, b_hi = np.minimum(s_lo, t_lo), np.maximum(s_hi, t_hi)
            has_t = True
        else:
            t_lo, t_hi, t_hole = s_lo.copy(), s_hi.copy(), -1
            b_lo, b_hi = s_lo, s_hi
            has_t = False
        gthr = threshold(ghost_probability(rules.ghost_h)) if rules.ghost_h > 0 else 0
        return (L, packing.bits, packing.bias, offs, order, pmul_neg, pmul_pos,
                s_lo, s_hi, s_hole, b_lo, b_hi, has_t, t_lo, t_hi, t_hole,
                np.uint64(threshold(p)), np.uint64(gthr), rules.cap,
                rules.stop_at_target, rules.stop_at_ghost)

    def run_block(self, p: float, seed: int, s0: int, s1: int, shell_m: int = -1,
                  strict: bool = True):
        """Per-sample statistics for samples ``s0 .. s1-1``.  With
        ``strict=False`` packing overflows are left in the ERROR column."""
        args = self.kernel_args(p)
        out, shells = _run_block(s0, s1, np.uint64(seed), *args, shell_m)
        if strict and out[:, ERROR].any():
            raise PackingOverflow("cluster left the packable coordinate range; "
                                  "set a volume cap or a bounded region")
        return out, shells


def _report(stats, rules: StopRules, cluster=None) -> ExplorationReport:
    return ExplorationReport(
        volume=int(stats[VOLUME]),
        truncated=bool(stats[TRUNCATED]),
        pioneers=int(stats[PIONEERS]) if rules.count_pioneers else 0,
        out_edges=int(stats[OUT_EDGES]) if rules.count_out_edges else 0,
        target_reached=bool(stats[TARGET]),
        ghost_hit=bool(stats[GHOST]),
        first_target_hits=int(stats[TARGET_HITS]),
        max_radius=int(stats[MAX_RADIUS]),
        cluster=cluster,
    )


def explore(spec: LatticeSpec, S: Region, p: float, seed: SeedSpec | int, sample: int,
            rules: StopRules = StopRules(), keep_cluster: bool = False) -> ExplorationReport:
    """Explore the open cluster of the origin inside ``S`` for one sample.

    Raises ``ValueError`` when the origin is outside ``S`` or ``p`` is not a
    probability, and :class:`PackingOverflow` when the cluster escapes the
    packable range (unbounded region without a volume cap).
    """
    seed = seed.master_seed if isinstance(seed, SeedSpec) else seed
    problem = Problem(spec, S, rules)
    stats, coords = _explore_single(np.uint64(seed), sample, *problem.kernel_args(p))
    if stats[ERROR]:
        raise PackingOverflow("cluster left the packable coordinate range")
    cluster = tuple(tuple(int(c) for c in row) for row in coords) if keep_cluster else None
    return _report(stats, rules, cluster)


def one_arm_problem(spec: LatticeSpec, n: int, ambient: Region, volume_cap=None) -> Problem:
    if n < 1:
        raise ValueError("n must be at least 1")
    if not isinstance(ambient, (Full, HalfSpace)) or (isinstance(ambient, HalfSpace) and ambient.n != 0):
        raise ValueError("ambient must be Full() or HalfSpace(0)")
    S = Intersect((ambient, Box(n)))
    target = Intersect((ambient, Complement(Box(n))))
    return Problem(spec, S, StopRules(volume_cap=volume_cap, target=target))


def one_arm_event(spec: LatticeSpec, n: int, ambient: Region, p: float,
                  seed: SeedSpec | int, sample: int) -> bool:
    """Indicator of {0 <-> complement of the n-box} with paths inside ``ambient``.

    Any witness path has a prefix inside ``ambient & Box(n)`` followed by
    one edge leaving the box, so exploring the box and sampling the exit
    edges decides the event exactly.
    """
    problem = one_arm_problem(spec, n, ambient)
    return explore(spec, problem.region, p, seed, sample, problem.rules).target_reached
