"""Command-line entry points.

``pbsim simulate`` runs a config file's replicas and writes the run
directory; flags override file keys.  ``pbsim diagnose <report> --in DIR``
evaluates one diagnostic over an existing run (exit code 0 iff it passes).
``pbsim scenarios list`` prints the preset registry.
"""

from __future__ import annotations

import argparse
import sys

from .config import ParseError, ValidationError, parse_config, with_overrides
from .reports import REPORTS, ReportError
from .runner import run_replicas
from .scenarios import scenario_names, scenario_param_spec


def _build_parser():
    parser = argparse.ArgumentParser(prog="pbsim")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run replicas from a config file")
    sim.add_argument("--config", required=True, help="path to the config file")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--particles", type=int, default=None,
                     help="override the scale N")
    sim.add_argument("--t-end", type=float, default=None, dest="t_end")
    sim.add_argument("--replicas", type=int, default=None)
    sim.add_argument("--out", default=None, help="output directory")
    sim.add_argument("--format", choices=("csv", "ndjson"), default=None)
    sim.add_argument("--mode", choices=("deterministic", "exponential"),
                     default=None, help="holding-time mode")
    sim.add_argument("--debug-trace", action="store_true", default=None)
    sim.add_argument("--exact-rates", action="store_true", default=None)
    sim.add_argument("--jobs", type=int, default=None,
                     help="worker processes (default 1)")

    diag = sub.add_parser("diagnose", help="evaluate a diagnostic report")
    diag.add_argument("report", choices=sorted(REPORTS))
    diag.add_argument("--in", dest="run_dir", required=True,
                      help="run directory to analyse")
    diag.add_argument("--bins", type=int, default=20)
    diag.add_argument("--tol", type=float, default=0.03)
    diag.add_argument("--alpha", type=float, default=0.01)

    scn = sub.add_parser("scenarios", help="inspect the scenario registry")
    scn.add_argument("action", choices=("list",))
    return parser


def _cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"config parse error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    try:
        cfg = with_overrides(
            cfg, seed=args.seed, N=args.particles, t_end=args.t_end,
            replicas=args.replicas, out_dir=args.out, fmt=args.format,
            holding_mode=args.mode, debug_trace=args.debug_trace,
            exact_rates=args.exact_rates, jobs=args.jobs)
    except ValidationError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    report = run_replicas(cfg)
    for index, error in sorted(report["failures"].items()):
        print(f"replica {index} failed: {error}", file=sys.stderr)
    print(f"wrote {report['paths']['dir']} "
          f"({report['manifest']['completed']}/{cfg.replicas} replicas)")
    return 1 if report["failures"] else 0


def _cmd_diagnose(args) -> int:
    fn = REPORTS[args.report]
    kwargs = {}
    if args.report == "equilibrium":
        kwargs = {"bins": args.bins, "alpha": args.alpha}
    elif args.report == "coagulation":
        kwargs = {"tol": args.tol}
    try:
        passed, detail = fn(args.run_dir, **kwargs)
    except ReportError as exc:
        print(f"diagnose {args.report}: {exc}", file=sys.stderr)
        return 2
    summary = ", ".join(f"{k}={v}" for k, v in detail.items())
    print(f"{args.report}: {'PASS' if passed else 'FAIL'} ({summary})")
    return 0 if passed else 1


def _cmd_scenarios(args) -> int:
    for name in scenario_names():
        spec = scenario_param_spec(name)
        params = ", ".join(f"{k}={d!r}" for k, (_, d) in sorted(spec.items()))
        print(f"{name}: {params}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "simulate":
        return _cmd_simulate(args)
    if args.command == "diagnose":
        return _cmd_diagnose(args)
    return _cmd_scenarios(args)


if __name__ == "__main__":
    raise SystemExit(main())
