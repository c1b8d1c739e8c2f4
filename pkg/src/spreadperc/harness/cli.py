"""Command-line entry point: ``spreadperc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

from .config import ConfigError, load_config, parse_config
from .fitting import FitError, exact_power_law_fixture, fit_decay_rate, fit_exponent, synthetic_fixture
from .runner import EXIT_FAIL, EXIT_GUARDRAIL, EXIT_OK, EXIT_USAGE, replay, run

EPILOG = f"""\
exit status:
  {EXIT_OK}  success
  {EXIT_FAIL}  failed check (oracle mismatch, manifest hash mismatch, runtime error)
  {EXIT_USAGE}  usage or configuration error
  {EXIT_GUARDRAIL}  run completed with numeric guardrail warnings (flagged-sample
     fraction above the limit, failed fit, estimator disagreement)
"""

KIND_FOR = {"pc": ("pc",), "lengths": ("lengths",), "sweep": ("sweep",)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="override the master seed (unsigned 64-bit)")
    p.add_argument("--workers", type=int, help="worker processes; never changes any number")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="spreadperc", description="Spread-out percolation experiments.",
                 epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    kw = dict(parents=[common], epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_parser("estimate", help="run an estimator experiment from --config", **kw)
    sub.add_parser("pc", help="bracket the critical point (kind=pc config)", **kw)
    sub.add_parser("lengths", help="correlation lengths (kind=lengths config)", **kw)
    sub.add_parser("sweep", help="near-critical sweep (kind=sweep config)", **kw)
    f = sub.add_parser("fit", help="fit a power law to (x, mean, stderr) points", **kw)
    f.add_argument("input", nargs="?", type=Path,
                   help="whitespace-separated file with columns x mean stderr; "
                        "default: the built-in fixture")
    f.add_argument("--fixture", choices=("exact", "synthetic"), default="exact",
                   help="built-in fixture: y = x^-2 (exact) or 7 x^-1/2 with 1%% noise")
    f.add_argument("--decay", action="store_true", help="fit log(mean) against x instead")
    o = sub.add_parser("oracle-check", help="exact inequality suite and estimator gate", **kw)
    o.add_argument("--samples", type=int, default=10**6, help="samples per gate case")
    m = sub.add_parser("manifest", help="rerun from a manifest and verify output hashes", **kw)
    m.add_argument("manifest", type=Path)
    return ap


def _fit_cmd(args) -> int:
    if args.input is not None:
        pts = []
        for line in args.input.read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                pts.append(tuple(float(t) for t in line.split()[:3]))
    else:
        pts = exact_power_law_fixture() if args.fixture == "exact" else synthetic_fixture()
    try:
        fit = (fit_decay_rate if args.decay else fit_exponent)(pts)
    except FitError as e:
        print(f"fit failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps({k: v for k, v in fit.to_json().items()}, indent=1))
    return EXIT_OK


def _load(args, allowed=None):
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if allowed and cfg.kind not in allowed:
        raise ConfigError(f"{args.command} expects kind {allowed[0]!r}, config has {cfg.kind!r}")
    return cfg


def _report(res) -> int:
    print(f"{res.status}: wrote {res.out_dir}")
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return res.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(asctime)s %(name)s %(message)s")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and not 0 <= args.seed < 1 << 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "fit":
            return _fit_cmd(args)
        if args.command == "oracle-check":
            if args.config is not None:
                cfg = _load(args, ("oracle_suite",))
                out = args.out
            else:
                cfg = parse_config({"kind": "oracle_suite", "lattice": {"d": 1, "L": 1},
                                    "master_seed": 1,
                                    "params": {"estimator_samples": args.samples}})
                out = args.out or Path(tempfile.mkdtemp(prefix="oracle-check-"))
            res = run(cfg, out, args.workers, args.seed)
            print(json.dumps(json.loads((res.out_dir / "summary.json").read_text()), indent=1))
            return _report(res)
        if args.command == "manifest":
            out = args.out or Path(tempfile.mkdtemp(prefix="replay-"))
            res, diff = replay(args.manifest, out)
            if diff:
                for name, (old, new) in sorted(diff.items()):
                    print(f"mismatch {name}: recorded {old} replayed {new}")
                return EXIT_FAIL
            print(f"all outputs reproduced bit-exactly in {out}")
            return EXIT_OK
        cfg = _load(args, KIND_FOR.get(args.command))
        return _report(run(cfg, args.out, args.workers, args.seed))
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
