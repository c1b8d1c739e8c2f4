"""Config-driven experiment runs and their artifacts.

A run writes into its output directory:

``results.csv``
    one row per estimate, header ``observable,d,L,p,n,h,mean,stderr,
    n_samples,flagged_fraction``; floats are written with ``repr`` so the
    body is byte-stable.
``fits.json``
    exponent fits ``{slope, slope_stderr, intercept, r_squared, points}``
    keyed by series, plus derived checks (slope shifts, ratios).
``summary.json``
    kind-specific extras (bracket, oracle reports, guardrail details).
``*.dat``
    gnuplot-ready series: ``x y stderr log10(x) log10(y)``.
``manifest.json``
    everything needed to redo the run: config echo, code and mixing
    versions, sampling schedule, p_c bracket, output hashes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from .. import __version__
from .. import estimators as E
from ..critical import Budget, PcEstimate, estimate_pc, length_of_p, near_critical_sweep
from ..lattice import Box, Full, HalfSpace, LatticeSpec
from ..sampling import MIX_VERSION
from . import suite
from .config import ConfigError, ExperimentConfig
from .fitting import FitError, fit_decay_rate, fit_exponent

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_GUARDRAIL = 3

CSV_HEADER = "observable,d,L,p,n,h,mean,stderr,n_samples,flagged_fraction"
DEFAULT_MAX_FLAGGED = {"susceptibility": 1e-2, "sweep": 1e-2}


class BracketMissing(ConfigError):
    pass


@dataclass(frozen=True)
class Row:
    observable: str
    p: Optional[float]
    n: Optional[int]
    h: Optional[float]
    mean: float
    stderr: float
    n_samples: int
    flagged_fraction: float

    @classmethod
    def of(cls, observable, est: E.Estimate, p=None, n=None, h=None) -> "Row":
        return cls(observable, p, n, h, est.mean, est.stderr, est.n_samples, est.flagged_fraction)

    def csv(self, d: int, L: int) -> str:
        f = lambda x: "" if x is None else repr(float(x))  # noqa: E731
        i = lambda x: "" if x is None else str(int(x))  # noqa: E731
        return ",".join([self.observable, str(d), str(L), f(self.p), i(self.n), f(self.h),
                         f(self.mean), f(self.stderr), str(self.n_samples),
                         f(self.flagged_fraction)])


@dataclass
class Outcome:
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    dat: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    failed: bool = False
    extra_files: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunResult:
    out_dir: Path
    exit_code: int
    warnings: tuple
    files: dict

    @property
    def status(self) -> str:
        return {EXIT_OK: "ok", EXIT_FAIL: "fail", EXIT_GUARDRAIL: "warning"}[self.exit_code]


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def source_digest() -> str:
    """Hash of every Python source file of the package, in path order."""
    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for f in sorted(root.rglob("*.py")):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def load_bracket(path) -> PcEstimate:
    path = Path(path)
    if not path.exists():
        raise BracketMissing(f"p_c bracket file {path} not found; run the pc experiment first")
    return PcEstimate.from_json(json.loads(path.read_text()))


def resolve_p(x, bracket: Optional[dict]) -> float:
    if isinstance(x, str):
        if bracket is None:
            raise BracketMissing(f"{x} needs a p_c bracket")
        return {"pc:low": bracket["p_low"], "pc:mid": bracket["midpoint"],
                "pc:high": bracket["p_high"]}[x]
    return float(x)


def _label(x) -> str:
    return x if isinstance(x, str) else repr(float(x))


def _fit(out: Outcome, key: str, points, decay: bool = False):
    """Fit and store; a failed fit is recorded, never papered over."""
    try:
        fit = (fit_decay_rate if decay else fit_exponent)(points)
    except FitError as e:
        out.fits[key] = {"error": str(e), "points": [list(map(float, p)) for p in points]}
        out.warnings.append(f"fit {key}: {e}")
        return None
    out.fits[key] = fit.to_json()
    out.dat[key] = points
    return fit


def _guard(cfg: ExperimentConfig, out: Outcome) -> None:
    limit = cfg.params.get("max_flagged_fraction", DEFAULT_MAX_FLAGGED.get(cfg.kind, 1e-3))
    bad = [r for r in out.rows if r.flagged_fraction > limit]
    for r in bad:
        out.warnings.append(f"guardrail: {r.observable} p={r.p!r} n={r.n} h={r.h} flagged "
                            f"fraction {r.flagged_fraction:.3g} > {limit:g}")
    out.summary["guardrail"] = {"max_flagged_fraction": limit, "breaches": len(bad)}


def _slope_shift(out: Outcome, prefix: str) -> None:
    lo, hi = out.fits.get(f"{prefix}@pc:low"), out.fits.get(f"{prefix}@pc:high")
    if lo and hi and "slope" in lo and "slope" in hi:
        out.fits[f"{prefix}:slope_shift"] = {"low": lo["slope"], "high": hi["slope"],
                                            "shift": hi["slope"] - lo["slope"]}


# --------------------------------------------------------------------------
# Kinds
# --------------------------------------------------------------------------


def _n_series(cfg, spec, seed, workers, bracket, observable, estimate) -> Outcome:
    out = Outcome()
    for x in cfg.p_values():
        p = resolve_p(x, bracket)
        pts = []
        for n in cfg.params["n_list"]:
            est = estimate(spec, n, p, cfg.samples_for(n), seed, workers)
            log.info("%s p=%s n=%d mean=%.6g se=%.3g", observable, _label(x), n, est.mean, est.stderr)
            out.rows.append(Row.of(observable, est, p=p, n=n))
            pts.append((n, est.mean, est.stderr))
        _fit(out, f"{observable}@{_label(x)}", pts)
    _slope_shift(out, observable)
    return out


def _one_arm(cfg, spec, seed, workers, bracket):
    half = cfg.kind == "half_space" or cfg.params.get("ambient") == "half"
    ambient = HalfSpace(0) if half else Full()
    cap = cfg.params.get("volume_cap")
    return _n_series(cfg, spec, seed, workers, bracket, "one_arm_half" if half else "one_arm",
                     lambda s, n, p, N, sd, w: E.est_one_arm(s, ambient, n, p, N, sd, cap, w))


def _pt_to_halfspace(cfg, spec, seed, workers, bracket):
    cap = cfg.params.get("volume_cap")
    return _n_series(cfg, spec, seed, workers, bracket, "pt_to_halfspace",
                     lambda s, n, p, N, sd, w: E.est_point_to_halfspace(s, n, p, N, sd, cap, w))


def _phi_psi(cfg, spec, seed, workers, bracket):
    out = Outcome()
    box = cfg.params.get("region") == "box"
    tag = "box" if box else "H"
    cap = cfg.params.get("volume_cap")
    for x in cfg.p_values():
        p = resolve_p(x, bracket)
        psi_pts, phi_pts = [], []
        for n in cfg.params["n_list"]:
            S = Box(n) if box else HalfSpace(n)
            phi, psi = E.est_phi_psi(spec, S, p, cfg.samples_for(n), seed, cap, workers)
            log.info("phi/psi p=%s n=%d phi=%.6g psi=%.6g", _label(x), n, phi.mean, psi.mean)
            out.rows += [Row.of(f"phi_{tag}", phi, p=p, n=n), Row.of(f"psi_{tag}", psi, p=p, n=n)]
            phi_pts.append((n, phi.mean, phi.stderr))
            psi_pts.append((n, psi.mean, psi.stderr))
        means = [m for _, m, _ in psi_pts]
        rel = [s / m if m > 0 else math.inf for _, m, s in psi_pts]
        out.summary[f"psi_{tag}@{_label(x)}"] = {
            "max_over_min": max(means) / min(means) if min(means) > 0 else math.inf,
            "max_relative_stderr": max(rel)}
        out.dat[f"psi_{tag}@{_label(x)}"] = psi_pts
        out.dat[f"phi_{tag}@{_label(x)}"] = phi_pts
    return out


def _susceptibility(cfg, spec, seed, workers, bracket):
    out = Outcome()
    half = cfg.params.get("ambient") == "half"
    name = "chi_half" if half else "chi"
    m = cfg.params["m"]
    for x in cfg.p_values():
        p = resolve_p(x, bracket)
        est = E.est_susceptibility(spec, HalfSpace(0) if half else Full(), p, m,
                                   cfg.samples_for(), seed, cfg.params.get("volume_cap"), workers)
        out.rows.append(Row.of(name, est, p=p, n=m))
    return out


def _volume_tail(cfg, spec, seed, workers, bracket):
    out = Outcome()
    caps, m = cfg.params["caps"], cfg.params["m"]
    for x in cfg.p_values():
        p = resolve_p(x, bracket)
        tail = E.est_volume_tail(spec, p, caps, m, cfg.samples_for(), seed, workers)
        pts = []
        for c in caps:
            out.rows.append(Row.of("volume_tail", tail[c], p=p, n=c))
            pts.append((c, tail[c].mean, tail[c].stderr))
        _fit(out, f"volume_tail@{_label(x)}", pts)
    return out


def _magnetization(cfg, spec, seed, workers, bracket):
    out = Outcome()
    tol = cfg.params.get("tol", 1e-9)
    for x in cfg.p_values():
        p = resolve_p(x, bracket)
        g_pts, v_pts, agree = [], [], {}
        for h in cfg.params["h_list"]:
            V = cfg.params.get("V") or max(1, math.ceil(math.log(1 / tol) / h))
            mag = E.est_magnetization(spec, p, h, cfg.samples_for(), seed, V, tol,
                                      workers=workers)
            log.info("magnetization p=%s h=%g ghost=%.6g volume=%.6g", _label(x), h,
                     mag.ghost.mean, mag.volume.mean)
            out.rows += [Row.of("magnetization_ghost", mag.ghost, p=p, h=h),
                         Row.of("magnetization_volume", mag.volume, p=p, h=h)]
            g_pts.append((h, mag.ghost.mean, mag.ghost.stderr))
            v_pts.append((h, mag.volume.mean, mag.volume.stderr))
            agree[repr(float(h))] = mag.agree
        _fit(out, f"magnetization_ghost@{_label(x)}", g_pts)
        _fit(out, f"magnetization_volume@{_label(x)}", v_pts)
        out.summary[f"estimators_agree@{_label(x)}"] = agree
        if not all(agree.values()):
            out.warnings.append(f"magnetization estimators disagree at p={_label(x)}")
    return out


def _slab(cfg, spec, seed, workers, bracket):
    out = Outcome()
    cap = cfg.params.get("volume_cap")
    for x in cfg.p_values():
        p = resolve_p(x, bracket)
        p1, p2 = [], []
        for n in cfg.params["n_list"]:
            m1, m2 = E.est_slab_moments(spec, n, p, cfg.samples_for(n), seed, cap, workers)
            log.info("slab p=%s n=%d E[N]=%.6g E[N^2]=%.6g", _label(x), n, m1.mean, m2.mean)
            out.rows += [Row.of("slab_N1", m1, p=p, n=n), Row.of("slab_N2", m2, p=p, n=n)]
            p1.append((n, m1.mean, m1.stderr))
            p2.append((n, m2.mean, m2.stderr))
        _fit(out, f"slab_N1@{_label(x)}", p1)
        _fit(out, f"slab_N2@{_label(x)}", p2)
        scaled = [n * m for n, m, _ in p1]
        out.summary[f"n_times_EN@{_label(x)}"] = {
            "values": scaled,
            "min_over_max": min(scaled) / max(scaled) if max(scaled) > 0 else 0.0}
    return out


def _budget(cfg, workers) -> Budget:
    return Budget(cfg.params.get("n0", 4096), cfg.params.get("n_max", 1 << 20), workers,
                  cfg.params.get("volume_cap"))


def _pc(cfg, spec, seed, workers, bracket):
    pr = cfg.params
    est = estimate_pc(spec, tuple(pr["p_bracket"]), pr["k_max"], _budget(cfg, workers), seed,
                      pr.get("max_steps", 40), pr.get("target_width", 0.0))
    return pc_outcome(est)


def pc_outcome(est: PcEstimate) -> Outcome:
    """Outputs of a pc run, also used to write a bracket computed elsewhere."""
    out = Outcome()
    for e in est.evaluations:
        out.rows.append(Row("phi_box", e["p"], e["k"], None, e["mean"], e["stderr"],
                            e["n_samples"], e["flagged"] / e["n_samples"]))
    out.summary["pc"] = est.to_json()
    out.summary["pc"].pop("evaluations")
    out.extra_files = {"pc.json": json.dumps(est.to_json(), indent=1, sort_keys=True)}
    return out


def _lengths(cfg, spec, seed, workers, bracket):
    out = Outcome()
    thr = cfg.params.get("threshold")
    res = {}
    for x in cfg.p_values():
        p = resolve_p(x, bracket)
        kw = {} if thr is None else {"threshold": thr}
        lr = length_of_p(spec, p, cfg.params["k_max"], seed, _budget(cfg, workers), **kw)
        n_used = max(e["n_samples"] for e in lr.evaluations)
        val = float("nan") if lr.L_hat is None else float(lr.L_hat)
        out.rows.append(Row("length", p, None, None, val, 0.0, n_used, 0.0))
        res[_label(x)] = {"L_hat": lr.label(), "ambiguous": lr.ambiguous}
        if lr.ambiguous:
            out.warnings.append(f"length at p={_label(x)} rests on an unresolved box evaluation")
    out.summary["lengths"] = res
    return out


def _sweep(cfg, spec, seed, workers, bracket):
    out = Outcome()
    if bracket is None:
        raise BracketMissing("sweep needs a p_c bracket")
    pr = cfg.params
    ends = ("pc:mid", "pc:low", "pc:high") if pr.get("pc_ends") else ("pc:mid",)
    n_list = pr.get("n_list", [])
    for ref in ends:
        pc = resolve_p(ref, bracket)
        eps = [f * pc for f in pr["eps_fractions"]]
        rows = near_critical_sweep(spec, eps, pr["observables"], seed, _budget(cfg, workers), pc,
                                   n_list, pr["samples"], pr.get("k_max", 16), pr.get("m_min", 4),
                                   pr.get("m_factor", 4))
        series: dict[str, list] = {}
        decay: dict[float, list] = {}
        for r in rows:
            out.rows.append(Row(r.observable, r.p, r.n, None, r.mean, r.stderr, r.n_samples,
                                r.flagged_fraction))
            if r.observable == "phi_half":
                decay.setdefault(r.eps, []).append((r.n, r.mean, r.stderr))
            elif r.observable == "length" and r.extra.get("sentinel"):
                out.warnings.append(f"length at eps={r.eps!r} hit k_max; left out of the fit")
            else:
                series.setdefault(r.observable, []).append((r.eps, r.mean, r.stderr))
        for name, pts in series.items():
            _fit(out, f"{name}@{ref}", sorted(pts))
        rates = {}
        for e, pts in sorted(decay.items()):
            f = _fit(out, f"phi_half_decay@{ref}@eps={e!r}", pts, decay=True)
            if f is not None:
                rates[e] = -f.slope
        ratios = {}
        for e in rates:
            partner = [e2 for e2 in rates if math.isclose(e2, 4 * e, rel_tol=1e-9)]
            if partner:
                ratios[repr(e)] = rates[partner[0]] / rates[e]
        out.summary[f"phi_half_rate_ratio@{ref}"] = ratios
    _slope_shift(out, "chi")
    _slope_shift(out, "chi_half")
    _slope_shift(out, "length")
    return out


def _oracle(cfg, spec, seed, workers, bracket):
    out = Outcome()
    reports = suite.run_exact_suite()
    out.summary["inequalities"] = [
        {"name": r.name, "passed": r.passed, **({"extra": r.extra} if r.extra else {})}
        for r in reports]
    N = cfg.params.get("estimator_samples", 10**6)
    gate = suite.run_gate(N, seed, workers)
    for g in gate:
        out.rows.append(Row(f"gate:{g.name}", None, None, None, g.mean, g.stderr,
                            g.n_samples, 0.0))
    out.summary["gate"] = [{"name": g.name, "exact": g.exact, "mean": g.mean,
                            "stderr": g.stderr, "z": g.z, "passed": g.passed} for g in gate]
    out.failed = not (all(r.passed for r in reports) and all(g.passed for g in gate))
    out.summary["passed"] = not out.failed
    return out


KIND_RUNNERS = {
    "one_arm": _one_arm, "half_space": _one_arm, "pt_to_halfspace": _pt_to_halfspace,
    "phi_psi": _phi_psi, "susceptibility": _susceptibility, "volume_tail": _volume_tail,
    "magnetization": _magnetization, "slab_moments": _slab, "pc": _pc, "lengths": _lengths,
    "sweep": _sweep, "oracle_suite": _oracle,
}


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------


def _write_dat(path: Path, pts) -> None:
    lines = ["# x y stderr log10(x) log10(y)"]
    for x, y, s in pts:
        lx = math.log10(x) if x > 0 else float("nan")
        ly = math.log10(y) if y > 0 else float("nan")
        lines.append(f"{x!r} {y!r} {s!r} {lx!r} {ly!r}")
    path.write_text("\n".join(lines) + "\n")


def _dat_name(key: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in key) + ".dat"


def write_csv(path: Path, rows, d: int, L: int) -> None:
    path.write_text("\n".join([CSV_HEADER] + [r.csv(d, L) for r in rows]) + "\n")


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def default_out(cfg: ExperimentConfig) -> Path:
    if cfg.out is not None:
        p = Path(cfg.out)
        return p if p.is_absolute() else Path(cfg.base_dir) / p
    return Path(cfg.base_dir) / "results" / cfg.kind


def run(cfg: ExperimentConfig, out_dir=None, workers: Optional[int] = None,
        seed: Optional[int] = None, bracket: Optional[dict] = None) -> RunResult:
    """Run one experiment.  ``bracket`` overrides the p_c bracket file (used
    when replaying a manifest)."""
    if seed is not None:
        cfg = replace(cfg, master_seed=int(seed))
    workers = int(workers or cfg.workers)
    if workers < 1:
        raise ConfigError("workers must be a positive integer")
    out_dir = Path(out_dir) if out_dir is not None else default_out(cfg)
    spec = LatticeSpec(cfg.d, cfg.L)
    pc_source = None
    if bracket is None and cfg.needs_pc():
        path = cfg.pc_path()
        est = load_bracket(path)
        bracket = {"p_low": est.p_low, "p_high": est.p_high, "midpoint": est.midpoint}
        pc_source = {"path": str(path), "sha256": sha256_file(path)}
    t0 = time.time()
    outcome = KIND_RUNNERS[cfg.kind](cfg, spec, cfg.master_seed, workers, bracket)
    return write_outputs(cfg, out_dir, outcome, workers, bracket, pc_source, time.time() - t0)


def write_outputs(cfg: ExperimentConfig, out_dir, outcome: Outcome, workers: int,
                  bracket: Optional[dict], pc_source: Optional[dict], wall: float) -> RunResult:
    out_dir = Path(out_dir)
    _guard(cfg, outcome)

    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    write_csv(out_dir / "results.csv", outcome.rows, cfg.d, cfg.L)
    files["results.csv"] = out_dir / "results.csv"
    (out_dir / "fits.json").write_text(_json(outcome.fits))
    files["fits.json"] = out_dir / "fits.json"
    (out_dir / "summary.json").write_text(_json(outcome.summary))
    files["summary.json"] = out_dir / "summary.json"
    for key, pts in sorted(outcome.dat.items()):
        name = _dat_name(key)
        _write_dat(out_dir / name, pts)
        files[name] = out_dir / name
    for name, text in sorted(outcome.extra_files.items()):
        (out_dir / name).write_text(text + "\n")
        files[name] = out_dir / name

    if outcome.failed:
        code = EXIT_FAIL
    elif outcome.warnings:
        code = EXIT_GUARDRAIL
    else:
        code = EXIT_OK
    manifest = {
        "config": cfg.echo(),
        "code_version": {"package": __version__, "source_sha256": source_digest()},
        "mix_version": MIX_VERSION,
        "sampling": {
            "block_size": E.BLOCK,
            "workers": workers,
            "policy": "samples 0..N-1 of every estimate are cut into blocks "
                      f"[{E.BLOCK}b, {E.BLOCK}(b+1)); block b runs on worker b mod workers; "
                      "block results merge in ascending b",
            "worker_ranges_example": {
                str(w): r for w, r in E.worker_ranges(max(r.n_samples for r in outcome.rows)
                                                      if outcome.rows else 1, workers).items()},
        },
        "pc_bracket": bracket,
        "pc_source": pc_source,
        "wall_clock_s": wall,
        "status": {EXIT_OK: "ok", EXIT_FAIL: "fail", EXIT_GUARDRAIL: "warning"}[code],
        "warnings": outcome.warnings,
        "outputs": {name: sha256_file(p) for name, p in sorted(files.items())},
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "numba": numba.__version__},
    }
    (out_dir / "manifest.json").write_text(_json(manifest))
    files["manifest.json"] = out_dir / "manifest.json"
    for w in outcome.warnings:
        log.warning(w)
    return RunResult(out_dir, code, tuple(outcome.warnings), files)


def replay(manifest_path, out_dir) -> tuple[RunResult, dict]:
    """Rerun from a manifest alone and compare every output hash."""
    from .config import parse_config

    m = json.loads(Path(manifest_path).read_text())
    cfg = parse_config(m["config"], str(Path(manifest_path).parent))
    if cfg.needs_pc() and m.get("pc_bracket") is None:
        raise BracketMissing("manifest lacks the p_c bracket")
    res = run(cfg, out_dir, workers=m["sampling"]["workers"], bracket=m.get("pc_bracket"))
    fresh = json.loads((Path(out_dir) / "manifest.json").read_text())["outputs"]
    diff = {name: (h, fresh.get(name)) for name, h in m["outputs"].items() if fresh.get(name) != h}
    return res, diff
