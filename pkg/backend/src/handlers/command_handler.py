"""Subcommand implementations.

Each ``cmd_*`` returns a result dict in the ``{"success", "type", "data"}``
shape and raises a ``KneeOAError`` on failure.
"""
from pathlib import Path
from typing import Any, Dict, Optional
import logging

import numpy as np

from src.acqsim import generate_dataset, instrument_log
from src.checkpoint import save_checkpoint
from src.dataio import (
    apply_preprocessing,
    decode_labels,
    load_csv,
    save_encoded,
    to_model_input,
    transform_features,
    write_csv,
)
from src.errors import ConfigError
from src.handlers.base_handler import PipelineHandler
from src.metrics import read_report_artifacts, render_report, write_report_artifacts, REPORT_TXT
from src.models.base import RunConfig
from src.nncore import predict_proba
from src.trainer import history_to_csv

# Get logger with the full module path
logger = logging.getLogger("src.handlers.command_handler")


def _result(kind: str, data: Dict[str, Any]) -> Dict[str, Any]:
    return {"success": True, "type": kind, "data": data}


def cmd_simulate(config: RunConfig) -> Dict[str, Any]:
    """Generate a synthetic cohort CSV and the instrument log."""
    handler = PipelineHandler(config)
    result = generate_dataset(config.simulate, config.sweep, config.seed, config.columns)
    out = handler.output_dir

    dataset_path = handler.record("dataset", write_csv(result.table, out / "dataset.csv"))
    log_path = out / "instrument.log"
    log_path.write_text(instrument_log(result.readings), encoding="utf-8")
    handler.record("instrument_log", log_path)
    handler.write_manifest("simulate", {"rows": len(result.table)})

    logger.info(f"Simulated dataset written to {dataset_path}")
    return _result("simulate", {
        "dataset": str(dataset_path),
        "instrument_log": str(log_path),
        "rows": len(result.table),
        "readings": len(result.readings),
    })


def cmd_preprocess(config: RunConfig) -> Dict[str, Any]:
    """Encode, split and scale the dataset without training."""
    handler = PipelineHandler(config)
    prepared = handler.prepare(handler.load_table())
    paths = save_encoded(prepared, handler.output_dir)
    for name, path in paths.items():
        handler.record(f"encoded_{name}", path)
    handler.write_manifest("preprocess", {
        "paper_faithful": prepared.paper_faithful,
        "dropped_rows": prepared.dropped_rows,
    })
    return _result("preprocess", {
        "train_rows": len(prepared.train),
        "test_rows": len(prepared.test),
        "dropped_rows": prepared.dropped_rows,
        "paths": {k: str(v) for k, v in paths.items()},
    })


def cmd_train(config: RunConfig) -> Dict[str, Any]:
    """Preprocess, train with early stopping and report on the held-out split."""
    handler = PipelineHandler(config)
    prepared = handler.prepare(handler.load_table())
    out = handler.output_dir

    # raw held-out rows, so `evaluate` can reproduce the report
    handler.record("test_split", write_csv(prepared.table.select(prepared.split.test_idx),
                                           out / "test_split.csv"))

    checkpoint, history = handler.train(prepared)
    handler.record("checkpoint", save_checkpoint(checkpoint, out / "model.ckpt"))
    handler.record("history", history_to_csv(history, out / "history.csv"))

    evaluation = handler.evaluate(checkpoint, prepared.test)
    for name, path in write_report_artifacts(evaluation, out).items():
        handler.record(name, path)

    summary = {
        "test_accuracy": evaluation.report.accuracy,
        "best_epoch": history.best_epoch,
        "epochs_run": len(history.records),
        "stopped_early": history.stopped_early,
        "train_rows": len(prepared.train),
        "test_rows": len(prepared.test),
        "dropped_rows": prepared.dropped_rows,
    }
    handler.write_manifest("train", {
        "paper_faithful": prepared.paper_faithful,
        "split": {"train": prepared.split.train_idx.tolist(), "test": prepared.split.test_idx.tolist()},
        "summary": summary,
    })
    logger.info(f"Test accuracy {evaluation.report.accuracy:.4f} (best epoch {history.best_epoch})")
    return _result("train", {**summary, "report": render_report(
        evaluation.report, evaluation.confusion, evaluation.roc)})


def cmd_evaluate(config: RunConfig, checkpoint_path: Optional[Path] = None,
                 dataset_path: Optional[Path] = None) -> Dict[str, Any]:
    """Score a dataset with a checkpoint's stored preprocessing."""
    handler = PipelineHandler(config)
    checkpoint_path = checkpoint_path or config.checkpoint
    checkpoint = handler.load_checkpoint(checkpoint_path)
    path = dataset_path or config.dataset
    if path is None:
        path = Path(config.output_dir) / "test_split.csv"
    table = load_csv(path, checkpoint.mapping)
    data = apply_preprocessing(table, checkpoint.label_maps, checkpoint.scaler, checkpoint.mapping,
                               checkpoint.model_config.num_classes)

    evaluation = handler.evaluate(checkpoint, data)
    for name, artifact in write_report_artifacts(evaluation, handler.output_dir).items():
        handler.record(name, artifact)
    handler.write_manifest("evaluate", {
        "checkpoint": str(checkpoint_path) if checkpoint_path else None,
        "evaluated_dataset": str(path),
        "summary": {"accuracy": evaluation.report.accuracy, "rows": len(data)},
    })
    return _result("evaluate", {
        "accuracy": evaluation.report.accuracy,
        "rows": len(data),
        "report": render_report(evaluation.report, evaluation.confusion, evaluation.roc),
    })


def cmd_predict(config: RunConfig, checkpoint_path: Optional[Path] = None,
                rows_path: Optional[Path] = None) -> Dict[str, Any]:
    """Predicted grade and class probabilities for each input row."""
    rows_path = rows_path or config.row
    if rows_path is None:
        raise ConfigError("No rows to predict; set [run] row or pass --row")
    handler = PipelineHandler(config)
    checkpoint = handler.load_checkpoint(checkpoint_path)
    table = load_csv(rows_path, checkpoint.mapping, require_label=False)
    features = transform_features(table, checkpoint.label_maps, checkpoint.scaler, checkpoint.mapping)

    cfg = checkpoint.model_config
    probs = predict_proba(cfg, checkpoint.params, to_model_input(features, cfg.input_channels))
    names = checkpoint.label_maps.class_names(cfg.num_classes)
    codes = np.argmax(probs, axis=1)
    if len(checkpoint.label_maps.class_map) == cfg.num_classes:
        labels = decode_labels(codes, checkpoint.label_maps)
    else:
        # placeholder names for output units never seen in training
        labels = [names[c] for c in codes]

    predictions = [
        {"label": label, "probabilities": {name: float(p) for name, p in zip(names, row)}}
        for label, row in zip(labels, probs)
    ]
    return _result("predict", {"class_names": names, "predictions": predictions})


def cmd_report(config: RunConfig, report_dir: Optional[Path] = None) -> Dict[str, Any]:
    """Re-render the text report from saved CSV artifacts."""
    handler = PipelineHandler(config)
    report_dir = report_dir or config.report_dir
    source = Path(report_dir) if report_dir is not None else handler.output_dir
    evaluation = read_report_artifacts(source)
    text = render_report(evaluation.report, evaluation.confusion, evaluation.roc)
    path = handler.output_dir / REPORT_TXT
    path.write_text(text, encoding="utf-8")
    return _result("report", {"report": text, "path": str(path)})
