"""Weighted log-log regression for power laws.

Each point ``(x, mean, stderr)`` contributes ``(log x, log mean)`` with
weight ``1 / sigma_log**2`` where ``sigma_log = stderr / mean`` (delta
method).  Points whose mean is not above three standard errors (zero
means included) are not admissible and are dropped; fewer than three
admissible points is an error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    points: tuple
    chi2_dof: float = float("nan")

    def to_json(self) -> dict:
        d = asdict(self)
        d["points"] = [list(p) for p in self.points]
        if not math.isfinite(d["chi2_dof"]):
            d["chi2_dof"] = None  # unweighted fit
        return d


def _wls(X: np.ndarray, Y: np.ndarray, w: np.ndarray, weighted: bool):
    A = np.column_stack([np.ones_like(X), X])
    W = np.diag(w)
    cov = np.linalg.inv(A.T @ W @ A)
    beta = cov @ (A.T @ W @ Y)
    resid = Y - A @ beta
    dof = len(X) - 2
    chi2 = float(resid @ W @ resid)
    if not weighted:
        # residual-based variance when no error bars are available
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    ybar = float(np.sum(w * Y) / np.sum(w))
    ss_tot = float(np.sum(w * (Y - ybar) ** 2))
    r2 = 1.0 - chi2 / ss_tot if ss_tot > 0 else 1.0
    return beta, cov, min(1.0, max(0.0, r2)), (chi2 / dof if dof > 0 and weighted else float("nan"))


def admissible(points: Sequence[tuple]) -> list[tuple]:
    return [(float(x), float(m), float(s)) for x, m, s in points if m > 3 * s]


def fit_exponent(points: Sequence[tuple]) -> ExponentFit:
    """Slope of log(mean) against log(x)."""
    pts = [tuple(map(float, p)) for p in points]
    if any(x <= 0 for x, _, _ in pts):
        raise FitError("all abscissae must be positive")
    pts = admissible(pts)
    if len(pts) < 3:
        raise FitError(f"need at least 3 admissible points (mean > 3 stderr), got {len(pts)}")
    X = np.log([p[0] for p in pts])
    Y = np.log([p[1] for p in pts])
    sig = np.array([p[2] / p[1] for p in pts])
    weighted = bool(np.all(sig > 0))
    w = 1.0 / sig**2 if weighted else np.ones_like(X)
    beta, cov, r2, chi2 = _wls(X, Y, w, weighted)
    return ExponentFit(float(beta[1]), float(beta[0]), math.sqrt(max(0.0, cov[1, 1])), r2,
                       tuple(pts), chi2)


def fit_decay_rate(points: Sequence[tuple]) -> ExponentFit:
    """Slope of log(mean) against x itself (exponential decay in x)."""
    pts = [tuple(map(float, p)) for p in points]
    pts = admissible(pts)
    if len(pts) < 3:
        raise FitError(f"need at least 3 admissible points (mean > 3 stderr), got {len(pts)}")
    X = np.array([p[0] for p in pts])
    Y = np.log([p[1] for p in pts])
    sig = np.array([p[2] / p[1] for p in pts])
    weighted = bool(np.all(sig > 0))
    w = 1.0 / sig**2 if weighted else np.ones_like(X)
    beta, cov, r2, chi2 = _wls(X, Y, w, weighted)
    return ExponentFit(float(beta[1]), float(beta[0]), math.sqrt(max(0.0, cov[1, 1])), r2,
                       tuple(pts), chi2)


# --------------------------------------------------------------------------
# Fixtures
# --------------------------------------------------------------------------


def exact_power_law_fixture() -> list[tuple]:
    """y = x^-2 at x = 4, 8, 16 with vanishing error bars."""
    return [(x, x**-2.0, 0.0) for x in (4.0, 8.0, 16.0)]


def synthetic_fixture(seed: int = 12345) -> list[tuple]:
    """y = 7 x^-1/2 at 8 dyadic x with 1% multiplicative Gaussian noise."""
    rng = np.random.default_rng(seed)
    xs = 2.0 ** np.arange(1, 9)
    ys = 7.0 * xs**-0.5
    noisy = ys * (1.0 + 0.01 * rng.standard_normal(xs.size))
    return [(float(x), float(y), float(0.01 * y)) for x, y in zip(xs, noisy)]
