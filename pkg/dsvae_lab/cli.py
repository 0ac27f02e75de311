"""Command-line interface: ``python main.py <command> ...``."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Sequence

from .config import config_for_checkpoint, load_config
from .errors import DsvaeLabError
from .logging_utils import configure_logging
from .runtime import SUITES, DsvaeRuntime
from .utils import GENERATORS

EXIT_OK, EXIT_UNEXPECTED, EXIT_STRUCTURED = 0, 1, 2
GENERATE_MODES = ("unconditional", "fix_f", "fix_z")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults to $DSVAE_LAB_CONFIG)")
    common.add_argument("--log-level", help="console log level, e.g. DEBUG or INFO")
    common.add_argument("--threads", type=int, help="worker threads for evaluation")

    parser = argparse.ArgumentParser(prog="dsvae-lab", description="Disentangled sequential autoencoder lab")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    gen.add_argument("kind", choices=sorted(GENERATORS))
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    fit = commands.add_parser("train", parents=[common], help="train a model")
    fit.add_argument("--out", help="output directory (overrides run.output_dir)")
    fit.add_argument("--resume", action="store_true", help="continue from the configured checkpoint")

    gen_seq = commands.add_parser("generate", parents=[common], help="sample sequences from a checkpoint")
    gen_seq.add_argument("--ckpt", required=True)
    gen_seq.add_argument("--mode", choices=GENERATE_MODES, default="unconditional")
    gen_seq.add_argument("--k", type=int, default=1)
    gen_seq.add_argument("--t", type=int, required=True)
    gen_seq.add_argument("--seed", type=int, default=0)
    gen_seq.add_argument("--out", required=True)

    swap = commands.add_parser("swap", parents=[common], help="decode f of one sequence with z of another")
    swap.add_argument("--ckpt", required=True)
    swap.add_argument("--a", type=int, required=True)
    swap.add_argument("--b", type=int, required=True)
    swap.add_argument("--out", required=True)

    fill = commands.add_parser("impute", parents=[common], help="predict the frames after t_obs")
    fill.add_argument("--ckpt", required=True)
    fill.add_argument("--tobs", type=int, required=True)
    fill.add_argument("--idx", type=int, nargs="*", help="dataset indices (default: the test split)")
    fill.add_argument("--out", required=True)

    score = commands.add_parser("evaluate", parents=[common], help="run an evaluation suite")
    score.add_argument("--ckpt", action="append", required=True, help="repeat to compare models in pixel-curve")
    score.add_argument("--classifier")
    score.add_argument("--suite", choices=SUITES, required=True)
    score.add_argument("--m", type=int, nargs="*", help="missing-frame counts for pixel-curve")
    score.add_argument("--runs", type=int, default=50, help="generated runs for the trajectory suite")
    score.add_argument("--out", required=True)

    export = commands.add_parser("export-frames", parents=[common], help="write one dataset sequence as PGM files")
    export.add_argument("--dataset", required=True)
    export.add_argument("--idx", type=int, required=True)
    export.add_argument("--out", required=True)

    clf = commands.add_parser("train-classifier", parents=[common], help="train the per-frame attribute classifier")
    clf.add_argument("--dataset", required=True)
    clf.add_argument("--out", required=True)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "run.threads": args.threads,
        "logging.console_level": args.log_level,
    }
    if args.command == "train":
        overrides["run.output_dir"] = args.out
        overrides["training.resume"] = True if args.resume else None
    return overrides


def _load(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = _overrides(args)
    checkpoint = getattr(args, "ckpt", None)
    if checkpoint and not args.config:
        first = checkpoint[0] if isinstance(checkpoint, list) else checkpoint
        return config_for_checkpoint(first, overrides=overrides)
    return load_config(args.config, overrides=overrides)  # type: ignore[return-value]


def _log_dir(args: argparse.Namespace, config: Dict[str, Any]) -> Path:
    if args.command == "train":
        return Path(config["run"]["output_dir"])
    if args.command == "gen-data":
        return Path(args.out).parent
    return Path(args.out)


def _dispatch(runtime: DsvaeRuntime, args: argparse.Namespace) -> None:
    if args.command == "gen-data":
        dataset = runtime.gen_data(args.kind, args.n, args.seed, args.out)
        print(f"{args.kind}: B={dataset.num_sequences} T={dataset.length} frame={dataset.frame_shape} -> {args.out}")
    elif args.command == "train":
        runtime.train()
    elif args.command == "generate":
        runtime.generate(args.ckpt, args.mode, args.k, args.t, args.seed, args.out)
    elif args.command == "swap":
        runtime.swap(args.ckpt, args.a, args.b, args.out)
    elif args.command == "impute":
        runtime.impute(args.ckpt, args.tobs, args.out, indices=args.idx or None)
    elif args.command == "evaluate":
        runtime.evaluate(args.ckpt, args.suite, args.out, classifier_path=args.classifier, m_values=args.m, runs=args.runs)
    elif args.command == "export-frames":
        runtime.export_frames(args.dataset, args.idx, args.out)
    else:
        runtime.train_classifier(args.dataset, args.out)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger = configure_logging({"console_level": args.log_level or "INFO"}, command=args.command)
    try:
        config = _load(args)
        logging_config = dict(config["logging"])
        logging_config["log_dir"] = str(_log_dir(args, config))
        logger = configure_logging(logging_config, command=args.command)
        _dispatch(DsvaeRuntime(config, logger), args)
    except DsvaeLabError as exc:
        logger.error("%s", exc)
        return EXIT_STRUCTURED
    except KeyboardInterrupt:  # pragma: no cover - manual interruption
        logger.warning("Interrupted by user.")
        return EXIT_UNEXPECTED
    except Exception as exc:
        logger.exception("Command %s failed with an unexpected error: %s", args.command, exc)
        return EXIT_UNEXPECTED
    finally:
        for handler in logging.getLogger("dsvae_lab").handlers:
            handler.flush()
    return EXIT_OK


__all__ = ["build_parser", "main"]
