"""Command-line entry point: ``plapwave run | suite | check-params``."""

from __future__ import annotations

import argparse
import json
import sys

from . import lab
from . import sources as srcs
from .errors import ConfigError


def _print_summary(report, out_dir, manifest):
    for res in report.results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.experiment.value}")
        if res.error:
            print(f"    error: {res.error}")
        for a in res.audits:
            print(f"    {'ok ' if a.passed else 'BAD'} {a.name}: value={a.value} tol={a.tolerance}")
    if not report.results:
        print("no experiments requested; wrote config echo only")
    print(f"wrote {len(manifest)} file(s) to {out_dir}")


def _run(cfg, out_dir):
    report = lab.run_experiment(cfg)
    try:
        manifest = lab.emit_report(report, out_dir)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    _print_summary(report, out_dir, manifest)
    return 0 if report.passed else 1


def cmd_run(args):
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.validation is not None:
            overrides["validation"] = args.validation.upper()
        cfg = lab.parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return _run(cfg, lab.resolve_output_dir(cfg, args.out))


def cmd_suite(args):
    cfg = lab.default_suite_config(seed=args.seed or 0, output_dir=args.out, N=args.N)
    return _run(cfg, args.out)


def cmd_check_params(args):
    mode = srcs.ValidationMode(args.validation.upper())
    check = srcs.validate_parameters(args.p, args.r, mode, require_global=args.require_global)
    print(json.dumps(check.to_dict(), indent=2))
    return 0 if check.accepted else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="plapwave",
                                 description="Galerkin experiments for the damped p-Laplacian wave equation")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiments described by a JSON config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (overrides the config)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--validation", choices=["strict", "permissive"], default=None)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run the property suite with default settings")
    s.add_argument("--out", default="plapwave_suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--N", type=int, default=16, help="dimension of the FEM test space")
    s.set_defaults(func=cmd_suite)

    c = sub.add_parser("check-params", help="report whether (p, r) lies in the admissible regime")
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--r", type=float, required=True)
    c.add_argument("--validation", choices=["strict", "permissive"], default="strict")
    c.add_argument("--require-global", action="store_true")
    c.set_defaults(func=cmd_check_params)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
