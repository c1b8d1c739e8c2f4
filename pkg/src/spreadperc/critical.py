"""Critical point brackets, correlation lengths and near-critical sweeps.

All of them rest on box evaluations of ``phi_p(Box(k))`` with sequential
sampling: the sample count doubles from ``n0`` until the 4-sigma interval
excludes the threshold or ``n_max`` is reached.  Every evaluation reuses
samples ``0 .. N-1`` of the same seed, so repeated evaluations of the same
``(p, k)`` agree exactly and evaluations at different ``p`` are coupled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from .estimators import Estimate, est_phi, est_phi_psi, est_susceptibility
from .lattice import Box, Full, HalfSpace, LatticeSpec

log = logging.getLogger(__name__)

LENGTH_THRESHOLD = math.exp(-2.0)
Z = 4.0


@dataclass(frozen=True)
class Budget:
    n0: int = 4096
    n_max: int = 1 << 20
    workers: int = 1
    volume_cap: Optional[int] = None

    def __post_init__(self):
        if self.n0 < 1 or self.n_max < self.n0:
            raise ValueError("need 1 <= n0 <= n_max")


@dataclass(frozen=True)
class BoxEval:
    """Outcome of one sequential evaluation against a threshold.

    ``side`` is -1 (confidently below), +1 (confidently above) or 0
    (budget exhausted with the threshold inside the interval).  A capped
    sample only gives a lower bound on its contribution, so a box with any
    capped sample is never declared below the threshold."""

    p: float
    k: int
    mean: float
    stderr: float
    n_samples: int
    side: int
    flagged: int = 0


def evaluate_box(spec: LatticeSpec, p: float, k: int, threshold: float, seed,
                 budget: Budget) -> BoxEval:
    est: Optional[Estimate] = None
    n = budget.n0
    while True:
        start = 0 if est is None else est.n_samples
        chunk = n - start
        part = est_phi_psi(spec, Box(k), p, chunk, seed, budget.volume_cap,
                           budget.workers, start=start)[0]
        est = part if est is None else est.merge(part)
        m, s = est.mean, est.stderr
        log.debug("p=%r k=%d n=%d phi=%.6f se=%.6f flagged=%d", p, k, est.n_samples, m, s,
                  est.flagged)
        if m + Z * s < threshold and est.flagged == 0:
            return BoxEval(p, k, m, s, est.n_samples, -1, 0)
        if m - Z * s > threshold:
            return BoxEval(p, k, m, s, est.n_samples, 1, est.flagged)
        if n >= budget.n_max:
            return BoxEval(p, k, m, s, est.n_samples, 0, est.flagged)
        n = min(2 * n, budget.n_max)


# --------------------------------------------------------------------------
# Critical point
# --------------------------------------------------------------------------


@dataclass
class PcEstimate:
    p_low: float
    p_high: float
    k_max: int
    n_per_eval: int
    seed: int
    converged: bool = False
    notes: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)

    def __post_init__(self):
        if not self.p_low < self.p_high:
            raise ValueError("bracket must satisfy p_low < p_high")

    @property
    def width(self) -> float:
        return self.p_high - self.p_low

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.p_low + self.p_high)

    @property
    def relative_width(self) -> float:
        return self.width / self.midpoint

    def to_json(self) -> dict:
        d = asdict(self)
        d["midpoint"] = self.midpoint
        d["width"] = self.width
        d["relative_width"] = self.relative_width
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PcEstimate":
        keys = ("p_low", "p_high", "k_max", "n_per_eval", "seed", "converged", "notes", "evaluations")
        return cls(**{k: d[k] for k in keys if k in d})


def subcritical_predicate(spec: LatticeSpec, p: float, k_max: int, seed, budget: Budget,
                          record: Optional[list] = None) -> Optional[bool]:
    """``True`` when some box ``k <= k_max`` has phi + 4 sigma < 1,
    ``False`` when every box is confidently above 1, ``None`` otherwise.

    Boxes are ranked by a first pass at ``n0`` samples and refined in that
    order; since each box is refined until it resolves, the answer does not
    depend on the order.
    """
    first = {}
    for k in range(1, k_max + 1):
        ev = evaluate_box(spec, p, k, 1.0, seed,
                          Budget(budget.n0, budget.n0, budget.workers, budget.volume_cap))
        first[k] = ev
        if ev.side < 0:
            if record is not None:
                record.append(asdict(ev))
            return True
    order = sorted(first, key=lambda k: first[k].mean - Z * first[k].stderr)
    unresolved = False
    for k in order:
        ev = first[k] if first[k].side > 0 else evaluate_box(spec, p, k, 1.0, seed, budget)
        if record is not None:
            record.append(asdict(ev))
        if ev.side < 0:
            return True
        if ev.side == 0:
            unresolved = True
    return None if unresolved else False


def estimate_pc(spec: LatticeSpec, p_bracket: tuple[float, float], k_max: int, budget: Budget,
                seed, max_steps: int = 40, target_width: float = 0.0) -> PcEstimate:
    """Bisection of the subcritical predicate.

    The returned bracket is always certified by resolved evaluations: the
    lower end satisfies the predicate, the upper end has every box
    confidently above 1.  Bisection stops at ``max_steps``, at
    ``target_width``, or at the first midpoint the budget cannot resolve.
    """
    lo, hi = map(float, p_bracket)
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("bracket must satisfy 0 <= p_low < p_high <= 1")
    seed_int = int(getattr(seed, "master_seed", seed))
    evals: list = []
    notes: list = []
    if subcritical_predicate(spec, lo, k_max, seed, budget, evals) is not True:
        raise ValueError(f"p_low={lo} does not satisfy the subcritical predicate")
    top = subcritical_predicate(spec, hi, k_max, seed, budget, evals)
    if top is not False:
        raise ValueError(f"p_high={hi} is not confidently supercritical for k <= {k_max}")
    converged = False
    for _ in range(max_steps):
        if hi - lo <= target_width:
            converged = True
            break
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            converged = True
            break
        verdict = subcritical_predicate(spec, mid, k_max, seed, budget, evals)
        log.info("bracket [%r, %r] midpoint %r -> %s", lo, hi, mid, verdict)
        if verdict is None:
            notes.append(f"stopped: p={mid!r} unresolved at n_max={budget.n_max}; "
                         "bracket kept at the last resolved ends")
            break
        if verdict:
            lo = mid
        else:
            hi = mid
    else:
        notes.append(f"stopped after max_steps={max_steps}")
    n_used = max((e["n_samples"] for e in evals), default=budget.n0)
    return PcEstimate(lo, hi, k_max, n_used, seed_int, converged, notes, evals)


# --------------------------------------------------------------------------
# Correlation lengths
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LengthResult:
    p: float
    L_hat: Optional[int]
    k_max: int
    threshold: float
    ambiguous: bool
    evaluations: tuple = ()

    @property
    def sentinel(self) -> bool:
        return self.L_hat is None

    def label(self) -> str:
        return f">={self.k_max}" if self.L_hat is None else str(self.L_hat)


class _Cache:
    def __init__(self, spec, p, threshold, seed, budget):
        self.args = (spec, p, threshold, seed, budget)
        self.store: dict[int, BoxEval] = {}

    def __call__(self, k: int) -> BoxEval:
        if k not in self.store:
            spec, p, thr, seed, budget = self.args
            self.store[k] = evaluate_box(spec, p, k, thr, seed, budget)
        return self.store[k]

    def evaluations(self):
        return tuple(asdict(self.store[k]) for k in sorted(self.store))


def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")


def length_of_p(spec: LatticeSpec, p: float, k_max: int, seed, budget: Budget = Budget(),
                threshold: float = LENGTH_THRESHOLD) -> LengthResult:
    """Smallest k with phi_p(Box(k)) below ``threshold``: doubling k until a
    box is confidently below, then binary search on the last gap."""
    _check_p(p)
    ev = _Cache(spec, p, threshold, seed, budget)
    ambiguous = False
    below = None
    above = 0  # largest k known not to be below
    k = 1
    while True:
        r = ev(k)
        if r.side < 0:
            below = k
            break
        ambiguous |= r.side == 0
        above = k
        if k >= k_max:
            break
        k = min(2 * k, k_max)
    if below is None:
        return LengthResult(p, None, k_max, threshold, ambiguous, ev.evaluations())
    while below - above > 1:
        mid = (above + below) // 2
        r = ev(mid)
        if r.side < 0:
            below = mid
        else:
            ambiguous |= r.side == 0
            above = mid
    if below > 1:
        ambiguous |= ev(below - 1).side == 0
    return LengthResult(p, below, k_max, threshold, ambiguous, ev.evaluations())


def sharp_length_box_family(spec: LatticeSpec, p: float, k_max: int, seed,
                            budget: Budget = Budget(),
                            threshold: float = LENGTH_THRESHOLD) -> LengthResult:
    """Same crossing found by a linear scan k = 1, 2, ... (never above the
    doubling search on identical evaluations)."""
    _check_p(p)
    ev = _Cache(spec, p, threshold, seed, budget)
    ambiguous = False
    for k in range(1, k_max + 1):
        r = ev(k)
        if r.side < 0:
            return LengthResult(p, k, k_max, threshold, ambiguous, ev.evaluations())
        ambiguous |= r.side == 0
    return LengthResult(p, None, k_max, threshold, ambiguous, ev.evaluations())


# --------------------------------------------------------------------------
# Near-critical sweep
# --------------------------------------------------------------------------

SWEEP_OBSERVABLES = ("chi", "chi_half", "length", "phi_half")


@dataclass(frozen=True)
class SweepRow:
    eps: float
    p: float
    observable: str
    n: Optional[int]
    mean: float
    stderr: float
    n_samples: int
    flagged_fraction: float
    extra: dict = field(default_factory=dict)


def near_critical_sweep(spec: LatticeSpec, eps_grid: Sequence[float], observables: Iterable[str],
                        seed, budget: Budget, p_c: float, n_list: Sequence[int] = (),
                        N: int = 1 << 16, k_max: int = 16, m_min: int = 4,
                        m_factor: int = 4) -> list[SweepRow]:
    """Observables at ``p = p_c - eps`` for each eps on the grid.

    Susceptibilities use the truncation radius ``max(m_min, m_factor * L)``
    with ``L`` the box-family length at that p (doubling search) (``m_factor * k_max`` when
    the length is a sentinel).
    """
    observables = tuple(observables)
    bad = set(observables) - set(SWEEP_OBSERVABLES)
    if bad:
        raise ValueError(f"unknown sweep observables {sorted(bad)}")
    if not eps_grid or any(e <= 0 or e >= p_c for e in eps_grid):
        raise ValueError("eps grid must be positive and below p_c")
    rows: list[SweepRow] = []
    for eps in sorted(eps_grid, reverse=True):
        p = p_c - eps
        need_len = any(o in observables for o in ("length", "chi", "chi_half"))
        lr = length_of_p(spec, p, k_max, seed, budget) if need_len else None
        if "length" in observables:
            val = float(lr.L_hat) if lr.L_hat is not None else float("nan")
            rows.append(SweepRow(eps, p, "length", None, val, 0.0,
                                 max(e["n_samples"] for e in lr.evaluations), 0.0,
                                 {"ambiguous": lr.ambiguous, "sentinel": lr.sentinel}))
        if lr is not None:
            m = max(m_min, m_factor * (lr.L_hat if lr.L_hat is not None else k_max))
        for name, ambient in (("chi", Full()), ("chi_half", HalfSpace(0))):
            if name in observables:
                e = est_susceptibility(spec, ambient, p, m, N, seed, budget.volume_cap,
                                       budget.workers)
                rows.append(SweepRow(eps, p, name, m, e.mean, e.stderr, e.n_samples,
                                     e.flagged_fraction,
                                     {"flagged": e.flagged_fraction >= 0.01}))
        if "phi_half" in observables:
            for n in n_list:
                e = est_phi(spec, HalfSpace(n), p, N, seed, budget.volume_cap, budget.workers)
                rows.append(SweepRow(eps, p, "phi_half", n, e.mean, e.stderr, e.n_samples,
                                     e.flagged_fraction))
    return rows
