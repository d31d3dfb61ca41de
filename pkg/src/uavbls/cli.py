"""Command-line entry point: ``uavbls {train,eval,sweep,plot}``.

Exit codes: 0 success, 2 config error, 3 IO error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import sys

from . import config as cfgmod
from . import runner
from .checkpoint import CheckpointError
from .models import ConfigError
from .training import ALGORITHMS, NumericFailure

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _csv_list(text: str, conv=str) -> list:
    return [conv(x) for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required, help="YAML run config")
    p.add_argument("--seed", type=int, help="train a single seed instead of run.seeds")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--ablate", help="comma list out of pfam,per,vrc to switch off")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="uavbls", description="UAV batteryless-sensor data collection experiments")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train and write a self-describing run directory")
    _common(p)
    p.add_argument("--sensors", type=int, help="override env.n_sensors")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    p = sub.add_parser("eval", help="deterministic evaluation of a run directory or checkpoint")
    p.add_argument("target", help="run directory or .lwpt checkpoint")
    _common(p, config_required=False)
    p.add_argument("--eval-seeds", help="comma list of evaluation seeds")

    p = sub.add_parser("sweep", help="sensor-count sweep")
    _common(p)
    p.add_argument("--sensors", required=True, help="comma list of sensor counts, e.g. 3,6,9")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("plot", help="SVG figures from run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    return ap


def _overrides(args) -> dict:
    ov = {"episodes": args.episodes, "out": args.out, "algorithm": args.algo}
    if args.seed is not None:
        ov["seeds"] = [args.seed]
    if args.ablate is not None:
        ov["ablate"] = _csv_list(args.ablate)
    return ov


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.verb == "train":
            ov = _overrides(args)
            ov["n_sensors"] = args.sensors
            cfg = cfgmod.load(args.config, ov)
            runner.cmd_train(cfg, force=args.force)
        elif args.verb == "eval":
            cfg = cfgmod.load(args.config, _overrides(args)) if args.config else None
            seeds = _csv_list(args.eval_seeds, int) if args.eval_seeds else None
            runner.cmd_eval(args.target, cfg, args.episodes, seeds, out=args.out)
        elif args.verb == "sweep":
            try:
                counts = _csv_list(args.sensors, int)
            except ValueError as exc:
                raise ConfigError(f"--sensors: {exc}") from exc
            cfg = cfgmod.load(args.config, _overrides(args))
            runner.cmd_sweep(cfg, counts, force=args.force, workers=args.workers)
        elif args.verb == "plot":
            for path in runner.cmd_plot(args.runs, args.out):
                print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
