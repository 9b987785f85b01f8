"""Command-line front end.

    biasreduce risk      --config exp.yaml [--seed N] [--out r.csv] [--format csv|json] [--workers N]
    biasreduce bias      --config exp.yaml ...
    biasreduce normality --config exp.yaml ...
    biasreduce sweep     --config grid.yaml ...
    biasreduce oracle-check

Exit codes: 0 success, 1 failed oracle identity or unexpected error,
2 config parse, 3 config validation, 4 I/O, 5 numerical.
"""

from __future__ import annotations

import argparse
import logging
import os
import secrets
import sys
from dataclasses import replace
from pathlib import Path

from . import persist
from .checks import run_oracle_suite
from .config import ExperimentConfig
from .errors import BiasReduceError, PersistError
from .harness import normality_report, rate_sweep, risk_eval

log = logging.getLogger("biasreduce")

SUBCOMMANDS = ("risk", "bias", "normality", "sweep", "oracle-check")


def _setup_logging() -> None:
    level = os.environ.get("BIASREDUCE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biasreduce", description="Bootstrap-chain bias reduction experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name != "oracle-check", help="experiment YAML file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--workers", type=int, default=1)
        if name == "oracle-check":
            p.add_argument("--replicates", type=int, default=100_000,
                           help="Monte Carlo draws for the stochastic identities")
    return parser


def _resolve_seed(cfg: ExperimentConfig, override: int | None) -> int:
    if override is not None:
        return override
    if cfg.seed is not None:
        return cfg.seed
    seed = secrets.randbits(63)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise PersistError(f"cannot write {out}: {exc.strerror or exc}") from exc


def _oracle_check(args) -> int:
    seed = 20240601 if args.seed is None else args.seed
    results = run_oracle_suite(seed, args.replicates)
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.detail})" for r in results]
    _emit("\n".join(lines) + "\n", args.out)
    if args.out is not None:
        print("\n".join(lines))
    return 0 if all(r.passed for r in results) else 1


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("biasreduce: error: config-validate: --workers must be >= 1", file=sys.stderr)
        return 3
    try:
        if args.command == "oracle-check":
            return _oracle_check(args)
        cfg = ExperimentConfig.load(args.config)
        seed = _resolve_seed(cfg, args.seed)
        cfg = cfg.with_seed(seed)
        if args.command == "sweep":
            result = rate_sweep(cfg, seed, args.workers)
            reports = result.reports
            _emit(persist.dumps(reports, args.format), args.out)
            slopes_text = persist.dumps_slopes(result.slopes, args.format)
            if args.out is not None:
                _emit(slopes_text, args.out.with_name(args.out.stem + ".slopes" + args.out.suffix))
            for s in result.slopes:
                print(f"slope {s.response} vs {s.regressor} ({s.fixed}): {s.slope:.4f} +- {s.stderr:.4f}",
                      file=sys.stderr)
        else:
            if args.command == "risk":
                report = risk_eval(cfg, seed, args.workers)
            elif args.command == "bias":
                report = risk_eval(replace(cfg, losses=[]), seed, args.workers)
            else:
                report = normality_report(cfg, seed, args.workers)
            reports = [report]
            _emit(persist.dumps(report if args.format == "json" else reports, args.format), args.out)
        if args.out is not None:
            persist.write_sidecar(args.out, reports, {"command": args.command})
        return 0
    except BiasReduceError as exc:
        print(f"biasreduce: error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"biasreduce: error: config-validate: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    _setup_logging()
    sys.exit(run())


if __name__ == "__main__":
    main()
