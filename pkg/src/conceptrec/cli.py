"""Command line: one subcommand per pipeline stage over a run directory.

Exit codes: 0 success, 1 usage or config error, 2 missing upstream
artifact, 3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .dataset import IngestError
from .experiment import run_experiment
from .joint import JointConfigError
from .pipeline import BackendFailure, MissingArtifact, Pipeline

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--run-dir", default="run", help="artifact directory (default: ./run)")
    common.add_argument("--config", help="TOML config file; defaults to the run directory's saved config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="config override")
    common.add_argument("--force", action="store_true", help="rerun stages even when up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="conceptrec", description="Concept recommendation pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("ingest", "read the interaction log or build the synthetic fixture"),
        ("encode", "embed learners and concepts"),
        ("distill", "collect teacher soft labels"),
        ("train-dkt", "train the knowledge-tracing model"),
        ("train-reranker", "train the fine ranker"),
        ("joint-finetune", "optional joint fine-tuning on the weighted loss sum"),
        ("run", "run every stage through evaluation"),
    ):
        sub.add_parser(name, parents=[common], help=help_text)
    p = sub.add_parser("train-student", parents=[common], help="train the coarse ranker")
    p.add_argument("--stage", choices=("kd", "pref"), required=True)
    p = sub.add_parser("evaluate", parents=[common], help="write reports/metrics.csv")
    p.add_argument("--out", help="alternative report path")
    p = sub.add_parser("recommend", parents=[common], help="top concepts for one learner, as JSON")
    p.add_argument("--learner", required=True, help="learner key as it appears in the corpus")
    p.add_argument("--top", type=int, default=5)
    p = sub.add_parser("experiment", parents=[common], help="full pipeline over every configured seed")
    p.add_argument("--seeds", type=int, nargs="+")
    return parser


def load_config(args) -> RunConfig | None:
    if args.config:
        cfg = RunConfig.load(args.config)
    elif (Path(args.run_dir) / "config.toml").exists():
        cfg = RunConfig.load(Path(args.run_dir) / "config.toml")
    elif args.seed is None and not args.set:
        return None
    else:
        cfg = RunConfig()
    if args.set:
        cfg = cfg.with_overrides(args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def dispatch(args, out) -> int:
    config = load_config(args)
    if args.command == "experiment":
        report = run_experiment(config or RunConfig(), args.run_dir, seeds=args.seeds, force=args.force)
        print(report.summary(), file=out)
        return EXIT_OK
    pipe = Pipeline(args.run_dir, config, force=args.force)
    if args.command == "ingest":
        pipe.ingest()
    elif args.command == "encode":
        pipe.encode()
    elif args.command == "distill":
        pipe.distill()
    elif args.command == "train-student":
        pipe.train_student(args.stage)
    elif args.command == "train-dkt":
        pipe.train_dkt()
    elif args.command == "train-reranker":
        pipe.train_reranker()
    elif args.command == "joint-finetune":
        pipe.joint_finetune()
    elif args.command == "evaluate":
        print(pipe.evaluate(args.out).summary(), file=out)
    elif args.command == "recommend":
        print(json.dumps(pipe.recommend(args.learner, args.top)), file=out)
    elif args.command == "run":
        print(pipe.run_all().summary(), file=out)
    return EXIT_OK


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return dispatch(args, out)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except BackendFailure as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, JointConfigError, UsageError, IngestError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
