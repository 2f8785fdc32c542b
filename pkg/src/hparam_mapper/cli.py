"""Command-line interface for hparam_mapper."""

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig
from .datasets import load_tabular, split
from .environments import HyperparamVector
from .errors import HparamMapperError, PipelineStageError
from .logging import configure_logging, logger
from .lopt import lopt, write_trace_csv
from .pipeline import (
    RunReport,
    predict_for_dataset,
    report_render,
    run_all,
    run_evaluate,
    run_prepare,
    run_train,
)
from .serialization import load_model

EXIT_USAGE = 1
EXIT_ERROR = 2


def parse_args(args: list[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog="hparam-mapper",
        description="Predict classifier hyperparameters from an encoded dataset",
    )

    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        choices=["debug", "info", "warning", "error", "critical"],
        help="Set logging level",
    )
    parser.add_argument("--log-file", type=str, help="Path to log file")
    parser.add_argument("--config", type=str, help="Pipeline configuration (JSON)")
    parser.add_argument("--seed", type=int, help="Override the run seed")
    parser.add_argument("--out", type=str, help="Override the output directory")
    parser.add_argument("--budget", type=int, help="Override the labeling budget")
    parser.add_argument("--workers", type=int, help="Override the number of worker threads")

    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    # Pipeline stages
    subparsers.add_parser("prepare", help="Sample, encode and label datasets")
    subparsers.add_parser("train", help="Train the core network")
    subparsers.add_parser("evaluate", help="Compare CN, CN+LOPT, BASELINE and BCG")
    report_parser = subparsers.add_parser("report", help="Render the evaluation report")
    report_parser.add_argument("--dest", type=str, help="Directory for the rendered files")
    subparsers.add_parser("run", help="Run every stage")

    # Single-dataset commands
    predict_parser = subparsers.add_parser("predict", help="Predict hyperparameters for a CSV")
    predict_parser.add_argument("data", help="Dataset CSV (label in the last column)")
    predict_parser.add_argument("--model", required=True, help="Core network model file")

    lopt_parser = subparsers.add_parser("lopt", help="Refine hyperparameters on a CSV")
    lopt_parser.add_argument("data", help="Dataset CSV (label in the last column)")
    lopt_parser.add_argument("--model", help="Start from this model's prediction")
    lopt_parser.add_argument(
        "--start", type=str, help='Start vector as JSON, e.g. \'{"l2": 0.01, ...}\''
    )
    lopt_parser.add_argument("--trace", type=str, help="Write every evaluation to this CSV")

    # Config commands
    config_parser = subparsers.add_parser("config", help="Manage configuration")
    config_subparsers = config_parser.add_subparsers(
        dest="config_command", help="Configuration command"
    )
    config_subparsers.add_parser("show", help="Show the merged configuration")
    save_parser = config_subparsers.add_parser("save", help="Save configuration to file")
    save_parser.add_argument("path", type=str, help="Path to save configuration")

    return parser.parse_args(args)


def _load_config(parsed_args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(parsed_args.config).with_overrides(
        seed=parsed_args.seed,
        output_dir=parsed_args.out,
        budget=parsed_args.budget,
        workers=parsed_args.workers,
    )


def _print_report(report: RunReport) -> None:
    print(f"{'group':<10} {'n':>4} {'median':>8} {'mean':>8} {'sd':>8} {'log10 t':>8}")
    for group, stats in report.summaries.items():
        acc = stats["accuracy"]
        log_time = stats["log10_wall_time"]["median"]
        print(
            f"{group:<10} {int(acc['n']):>4} {acc['median']:>8.4f} {acc['mean']:>8.4f} "
            f"{acc['sd']:>8.4f} {log_time:>8.3f}"
        )
    for name, rho in report.correlations.items():
        print(f"spearman[{name}] = {rho:.4f}")


def _run(parsed_args: argparse.Namespace) -> int:
    command = parsed_args.command

    if command == "config":
        if not parsed_args.config_command:
            print("Error: Please specify a config command.")
            return EXIT_USAGE
        cfg = _load_config(parsed_args)
        if parsed_args.config_command == "show":
            logger.debug("Running config show command")
            print(json.dumps(cfg.as_dict(), indent=2))
        elif parsed_args.config_command == "save":
            logger.debug(f"Saving config to: {parsed_args.path}")
            cfg.save_config(Path(parsed_args.path))
            print(f"Configuration saved to: {parsed_args.path}")
        return 0

    cfg = _load_config(parsed_args)

    if command == "prepare":
        logger.debug("Running prepare command")
        prepared = run_prepare(cfg)
        print(f"Prepared {len(prepared.examples)} datasets in {prepared.root}")

    elif command == "train":
        logger.debug("Running train command")
        trained = run_train(cfg)
        print(f"Model written to {trained.path} ({len(trained.train_ids)} training datasets)")

    elif command == "evaluate":
        logger.debug("Running evaluate command")
        _print_report(run_evaluate(cfg))

    elif command == "report":
        logger.debug("Running report command")
        source = cfg.output_dir / "evaluate" / "report.json"
        if not source.is_file():
            raise PipelineStageError("report", f"{source} not found; run evaluate first")
        dest = Path(parsed_args.dest) if parsed_args.dest else cfg.output_dir / "report"
        try:
            paths = report_render(RunReport.load(source), dest)
        except (OSError, ValueError) as e:
            raise PipelineStageError("report", str(e)) from e
        for path in paths.values():
            print(path)

    elif command == "run":
        logger.debug("Running all stages")
        _print_report(run_all(cfg))

    elif command == "predict":
        logger.debug(f"Predicting for: {parsed_args.data}")
        model = load_model(parsed_args.model)
        split_ratio = float(cfg.evaluation["split_ratio"])
        dataset = load_tabular(parsed_args.data)
        vector, _ = predict_for_dataset(model, dataset, cfg.seed, split_ratio)
        print(json.dumps(vector.as_dict(), indent=2))

    elif command == "lopt":
        logger.debug(f"Refining on: {parsed_args.data}")
        if bool(parsed_args.model) == bool(parsed_args.start):
            print("Error: Give exactly one of --model or --start.")
            return EXIT_USAGE
        env = cfg.environment()
        split_ratio = float(cfg.evaluation["split_ratio"])
        dataset = load_tabular(parsed_args.data)
        if parsed_args.model:
            model = load_model(parsed_args.model)
            start, pair = predict_for_dataset(model, dataset, cfg.seed, split_ratio)
        else:
            start = HyperparamVector.from_mapping(env.specs, json.loads(parsed_args.start))
            pair = split(dataset, split_ratio, cfg.seed)
        result = lopt(start, env, pair, cfg.lopt_config(), trace=bool(parsed_args.trace))
        if parsed_args.trace:
            write_trace_csv(result.trace, parsed_args.trace)
        print(
            json.dumps(
                {
                    "start": start.as_dict(),
                    "vector": result.vector.as_dict(),
                    "initial_accuracy": result.initial_accuracy,
                    "accuracy": result.accuracy,
                    "evaluations": result.evaluations,
                },
                indent=2,
            )
        )

    return 0


def main(args: list[str] | None = None) -> int:
    """
    Run the CLI application.

    Args:
        args: Command line arguments

    Returns:
        Exit code: 0 on success, 1 on usage errors, 2 when a command fails.
    """
    parsed_args = parse_args(args)

    # Configure logging if requested
    if parsed_args.log_level or parsed_args.log_file:
        configure_logging(
            level=parsed_args.log_level or "info",
            log_file=parsed_args.log_file,
        )

    # If no command, show help
    if not parsed_args.command:
        print("Error: Please specify a command.")
        return EXIT_USAGE

    try:
        return _run(parsed_args)
    except HparamMapperError as e:
        stage = e.stage if isinstance(e, PipelineStageError) else parsed_args.command
        print(f"error[{stage}]: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, KeyError, json.JSONDecodeError) as e:
        print(f"error[{parsed_args.command}]: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
