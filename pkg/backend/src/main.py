"""Command-line entry point: simulate | preprocess | train | evaluate | predict | report.

Exit codes: 0 success, 1 runtime or training failure, 2 configuration or
validation error. Path flags have `[run]` equivalents in the config file;
--log-level and --log-dir are process settings (KNEEOA_LOG_LEVEL, KNEEOA_LOG_DIR).
"""
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional
import argparse
import logging
import sys

from src.config import Settings, load_run_config, setup_logging
from src.errors import KneeOAError, exit_code_for
from src.handlers.command_handler import (
    cmd_evaluate,
    cmd_predict,
    cmd_preprocess,
    cmd_report,
    cmd_simulate,
    cmd_train,
)
from src.models.base import RunConfig

# Get logger for this module
logger = logging.getLogger("src.main")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration or a run manifest.json")
    common.add_argument("--output-dir", type=Path, help="directory for all artifacts")
    common.add_argument("--seed", type=int, help="root seed for every random stream")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--log-dir", type=Path, help="also log to a timestamped file here")
    return common


def _data_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", type=Path, help="dataset CSV")
    parser.add_argument("--paper-faithful", action="store_true", default=None,
                        help="fit the scaler on all rows before splitting")
    parser.add_argument("--test-frac", type=float)
    parser.add_argument("--no-participant-feature", action="store_true", default=None,
                        help="leave the participant id out of the feature vector")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kneeoa", description="Bioimpedance knee osteoarthritis grading pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_options()

    simulate = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    simulate.add_argument("--participants-per-grade", help="comma-separated counts, one per grade")
    simulate.add_argument("--repetitions", type=int)
    simulate.add_argument("--severity-scale", type=float)
    simulate.add_argument("--noise-counts", type=float)
    simulate.add_argument("--include-phase", action="store_true", default=None)

    preprocess = sub.add_parser("preprocess", parents=[common], help="encode, split and scale")
    _data_options(preprocess)

    train = sub.add_parser("train", parents=[common], help="train and report on the test split")
    _data_options(train)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--patience", type=int)
    train.add_argument("--monitor", choices=["train_loss", "val_loss"])

    evaluate = sub.add_parser("evaluate", parents=[common], help="score a dataset with a checkpoint")
    evaluate.add_argument("--checkpoint", type=Path)
    evaluate.add_argument("--dataset", type=Path)

    predict = sub.add_parser("predict", parents=[common], help="classify rows of a CSV")
    predict.add_argument("--checkpoint", type=Path)
    predict.add_argument("--row", type=Path, help="CSV with one or more rows")

    report = sub.add_parser("report", parents=[common], help="re-render the report table")
    report.add_argument("--report-dir", type=Path)
    return parser


def _drop_none(values: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in values.items() if v is not None}


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Map CLI flags onto RunConfig keys; unset flags are omitted."""
    get = lambda name: getattr(args, name, None)
    overrides = _drop_none({
        "output_dir": get("output_dir"),
        "seed": get("seed"),
        "dataset": get("dataset"),
        "checkpoint": get("checkpoint"),
        "row": get("row"),
        "report_dir": get("report_dir"),
    })
    preprocess = _drop_none({"paper_faithful": get("paper_faithful"), "test_frac": get("test_frac")})
    if get("no_participant_feature"):
        overrides["columns"] = {"include_participant_as_feature": False}
    train = _drop_none({
        "epochs": get("epochs"),
        "batch_size": get("batch_size"),
        "learning_rate": get("learning_rate"),
        "patience": get("patience"),
        "monitor": get("monitor"),
    })
    simulate = _drop_none({
        "participants_per_grade": get("participants_per_grade"),
        "repetitions": get("repetitions"),
        "severity_scale": get("severity_scale"),
        "include_phase": get("include_phase"),
    })
    sweep = _drop_none({"noise_counts": get("noise_counts")})
    for section, values in (("preprocess", preprocess), ("train", train),
                            ("simulate", simulate), ("sweep", sweep)):
        if values:
            overrides[section] = values
    return overrides


def _print_result(result: Dict[str, Any]) -> None:
    data = result["data"]
    kind = result["type"]
    if kind == "predict":
        for prediction in data["predictions"]:
            probs = " ".join(f"{name}={p:.6f}" for name, p in prediction["probabilities"].items())
            print(f"{prediction['label']} {probs}")
    elif kind in ("train", "evaluate", "report"):
        print(data["report"], end="")
    elif kind == "simulate":
        print(f"{data['rows']} rows written to {data['dataset']}")
    elif kind == "preprocess":
        print(f"{data['train_rows']} train / {data['test_rows']} test rows written to "
              f"{Path(data['paths']['manifest']).parent}")


def _dispatch(config: RunConfig, args: argparse.Namespace) -> Dict[str, Any]:
    commands: Dict[str, Callable[[], Dict[str, Any]]] = {
        "simulate": lambda: cmd_simulate(config),
        "preprocess": lambda: cmd_preprocess(config),
        "train": lambda: cmd_train(config),
        "evaluate": lambda: cmd_evaluate(config, config.checkpoint, config.dataset),
        "predict": lambda: cmd_predict(config, config.checkpoint, config.row),
        "report": lambda: cmd_report(config, config.report_dir),
    }
    return commands[args.command]()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    setup_logging(args.log_level or settings.log_level, args.log_dir or settings.log_dir)
    logger.info(f"Running '{args.command}'")

    try:
        config = load_run_config(args.config, overrides_from_args(args), settings)
        result = _dispatch(config, args)
    except KneeOAError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {str(e)}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)

    _print_result(result)
    logger.info(f"'{args.command}' completed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
