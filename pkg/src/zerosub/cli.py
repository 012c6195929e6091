"""Command-line entry point: ``zerosub <verb> [--config PATH] [--seed N] [--work-dir DIR]``.

Verbs: synth, cluster, filter, align, train, extract, abx, run-all.
Exit status is 0 on success, 2 on configuration errors and 1 otherwise.
"""
import argparse
import dataclasses
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, PipelineConfig
from .label_filter import parse_p_grid

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

_P_COMMANDS = ("filter", "align", "train", "extract", "abx", "run-all")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="zerosub", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "cluster", "filter", "align", "train", "extract", "abx", "run-all"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON pipeline config")
        p.add_argument("--seed", type=_u64, help="global seed (overrides the config)")
        p.add_argument("--work-dir", help="work directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in _P_COMMANDS:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--P", type=float, dest="P", help="retained label fraction")
            g.add_argument("--P-grid", dest="P_grid", help="sweep a:b:step, e.g. 0.6:0.95:0.05")
        if name == "abx":
            p.add_argument("--condition", choices=["within", "across", "both"], default=None)
    return parser


def load_config(args):
    base = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    cfg = PipelineConfig.from_dict(base)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.work_dir:
        cfg.paths.work_dir = args.work_dir
    if getattr(args, "P", None) is not None:
        cfg.filter = dataclasses.replace(cfg.filter, P=args.P, P_grid=None)
    if getattr(args, "P_grid", None):
        try:
            parse_p_grid(args.P_grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg.filter = dataclasses.replace(cfg.filter, P_grid=args.P_grid)
    return cfg.validate()


def _dispatch(args, cfg):
    Ps = cfg.filter.values()
    cmd = args.command
    if cmd == "synth":
        return lambda ws: pipeline.run_synth(ws)
    if cmd == "cluster":
        return lambda ws: pipeline.run_cluster(ws)
    if cmd == "filter":
        return lambda ws: pipeline.run_filter(ws, Ps)
    if cmd == "align":
        return lambda ws: pipeline.run_align(ws, Ps)
    if cmd == "train":
        return lambda ws: pipeline.run_train(ws, Ps)
    if cmd == "extract":
        return lambda ws: pipeline.run_extract(ws, Ps)
    if cmd == "abx":
        conds = None
        if args.condition:
            conds = ["within", "across"] if args.condition == "both" else [args.condition]
        return lambda ws: pipeline.run_abx(ws, Ps, conds)
    return lambda ws: pipeline.run_all(ws, Ps)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        pipeline.write_failure_report(args.command, args.work_dir or "work", args.seed,
                                      f"ConfigError: {exc}")
        return EXIT_CONFIG
    try:
        report = pipeline.execute(args.command, cfg, _dispatch(args, cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # reported in the run report as well
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(report["metrics"], indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
