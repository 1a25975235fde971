"""Command line entry point: ``hopflab run``, ``oracle``, ``summary`` and shortcut experiments."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .oracles import ORACLES
from .runner import (CONFIG_ERROR, ENV_OUT, ConfigError, describe, emit_summary, execute,
                     parse_config, run)


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _model_block(args) -> dict:
    if args.model == "gbm":
        return {"kind": "gbm", "sigma": args.sigma}
    return {"kind": "cev", "sigma": args.sigma, "beta": args.beta}


def _shortcut_config(args) -> dict:
    """Translate a shortcut subcommand into the mapping ``run`` would read from YAML."""
    grid = {"xmax": args.xmax, "m": args.m, "p": args.p} if hasattr(args, "xmax") else None
    if args.command == "delta":
        return {"kind": "delta", "name": args.name or "delta", "model": _model_block(args),
                "payoff": {"kind": "call", "strike": args.strike}, "grid": grid,
                "time": {"T": max(args.t), "steps": args.steps, "policy": "graded"},
                "times": args.t, "levels": args.levels}
    if args.command == "sweep":
        return {"kind": "sweep", "name": args.name or "sweep", "betas": args.betas,
                "sigma": args.sigma, "payoff": {"kind": "call", "strike": args.strike},
                "grid": grid, "time": {"T": args.t, "steps": args.steps}}
    if args.command == "counterexample":
        return {"kind": "counterexample", "name": args.name or "counterexample", "t0": args.t0,
                "y0": args.y0, "grid": grid, "time": {"steps": args.steps},
                "coefficient": args.coefficient, "seed": args.seed}
    if args.command == "barrier":
        cfg = {"kind": "barrier", "name": args.name or "barrier", "betas": [args.beta],
               "sigma": args.sigma, "density": args.density, "eta": args.eta,
               "max_halvings": args.max_halvings}
        if args.epsilon is not None:
            cfg["epsilon"] = args.epsilon
        if args.N is not None:
            cfg["N"] = args.N
        return cfg
    if args.command == "mc":
        payoff = {"kind": "call", "strike": args.strike}
        case = {"name": "mc", "model": _model_block(args), "payoff": payoff, "x0": args.x0,
                "T": args.T, "paths": args.paths, "steps": args.steps,
                "scheme": "exact-gbm" if args.model == "gbm" else "euler-absorbed"}
        return {"kind": "mc-crosscheck", "name": args.name or "mc", "cases": [case],
                "seed": args.seed}
    raise AssertionError(args.command)


def _add_grid(p, xmax=20.0, m=801, steps=400):
    p.add_argument("--xmax", type=float, default=xmax)
    p.add_argument("--m", type=int, default=m, help="number of space nodes")
    p.add_argument("--p", type=float, default=2.0, help="grading exponent")
    p.add_argument("--steps", type=int, default=steps)


def _add_common(p):
    p.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./results)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--name", help="report file stem")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hopflab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hopflab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run experiment config files")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("summary", help="index the check files in a directory")
    p.add_argument("directory")
    p.add_argument("--output", help="write the index here instead of stdout")

    p = sub.add_parser("oracle", help="evaluate a closed-form formula")
    p.add_argument("oracle", choices=sorted(ORACLES))
    p.add_argument("params", nargs="*", metavar="key=value")

    p = sub.add_parser("delta", help="boundary delta of a call")
    p.add_argument("--model", choices=("cev", "gbm"), default="cev")
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--strike", type=float, default=1.0)
    p.add_argument("--t", type=_floats, default=[1.0], help="comma-separated times")
    p.add_argument("--levels", type=int, default=1)
    _add_grid(p)
    _add_common(p)

    p = sub.add_parser("sweep", help="boundary delta across CEV exponents")
    p.add_argument("--betas", type=_floats, default=[0.0, 0.5, 1.0, 1.5, 2.0])
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--strike", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1.0)
    _add_grid(p)
    _add_common(p)

    p = sub.add_parser("counterexample", help="patched example with a jumping delta")
    p.add_argument("--t0", type=float, default=1.0)
    p.add_argument("--y0", type=float, default=1.0)
    p.add_argument("--coefficient", choices=("consistent", "displayed"), default="consistent")
    p.add_argument("--seed", type=int, default=0)
    _add_grid(p, xmax=4.0)
    _add_common(p)

    p = sub.add_parser("barrier", help="sampled barrier certificate")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--density", type=int, default=200)
    p.add_argument("--max-halvings", type=int, default=8)
    _add_common(p)

    p = sub.add_parser("mc", help="Monte Carlo call price against the PDE")
    p.add_argument("--model", choices=("cev", "gbm"), default="cev")
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--strike", type=float, default=1.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--steps", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    return parser


def _oracle_command(args) -> int:
    fn, names = ORACLES[args.oracle]
    values = {}
    for item in args.params:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"error: expected key=value, got {item!r}", file=sys.stderr)
            return CONFIG_ERROR
        try:
            values[key] = float(value)
        except ValueError:
            print(f"error: {key} must be a number", file=sys.stderr)
            return CONFIG_ERROR
    missing = [n for n in names if n not in values]
    extra = [k for k in values if k not in names]
    if missing or extra:
        print(f"error: {args.oracle} takes {', '.join(names)}", file=sys.stderr)
        return CONFIG_ERROR
    try:
        result = fn(**values)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    print(result if isinstance(result, str) else repr(float(result)))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "oracle":
        return _oracle_command(args)
    if args.command == "summary":
        if not os.path.isdir(args.directory):
            print(f"error: {args.directory} is not a directory", file=sys.stderr)
            return CONFIG_ERROR
        text = emit_summary(args.directory, args.output)
        if args.output is None:
            sys.stdout.write(text)
        return 0
    if args.command == "run":
        status = 0
        for path in args.configs:
            result = run(path, args.out, args.jobs)
            print(describe(result), file=sys.stdout if result.report else sys.stderr)
            status = max(status, result.status)
        return status
    try:
        cfg = parse_config(_shortcut_config(args), args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    result = execute(cfg, args.out, args.jobs)
    print(describe(result), file=sys.stdout if result.report else sys.stderr)
    if result.paths:
        print(f"wrote {result.paths[0]}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
