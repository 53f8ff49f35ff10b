"""Pipeline steps shared by every subcommand."""
from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import json
import logging

from pydantic import ValidationError

from src.checkpoint import load_checkpoint
from src.dataio import (
    EncodedDataset,
    PreparedDataset,
    RawTable,
    load_csv,
    prepare_dataset,
)
from src.errors import DatasetNotFoundError, ShapeError
from src.metrics import EvaluationReport, evaluate_predictions
from src.models.base import ModelConfig, RunConfig
from src.trainer import Checkpoint, TrainHistory, evaluate, fit
from src.utils.logging import truncate_data
from src.utils.seeding import STREAMS

# Get logger with the full module path
logger = logging.getLogger("src.handlers.base_handler")

MANIFEST_NAME = "manifest.json"


class PipelineHandler:
    """Runs pipeline stages for one validated RunConfig."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.artifacts: Dict[str, str] = {}

    @property
    def output_dir(self) -> Path:
        path = Path(self.config.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def record(self, name: str, path: Path) -> Path:
        """Remember an artifact for the manifest."""
        self.artifacts[name] = Path(path).name
        return path

    def load_table(self, path: Optional[Path] = None) -> RawTable:
        path = path or self.config.dataset
        if path is None:
            raise DatasetNotFoundError("No dataset configured; set [run] dataset or pass --dataset")
        return load_csv(path, self.config.columns)

    def prepare(self, table: RawTable) -> PreparedDataset:
        """Clean, encode, split and scale with the run's seed."""
        prepared = prepare_dataset(
            table,
            self.config.columns,
            seed=self.config.seed,
            paper_faithful=self.config.preprocess.paper_faithful,
            test_frac=self.config.preprocess.test_frac,
            num_classes=self.config.model.num_classes,
        )
        logger.info(
            f"Prepared {len(prepared.train)} train / {len(prepared.test)} test rows "
            f"of width {prepared.train.L}"
        )
        return prepared

    def model_config_for(self, width: int) -> ModelConfig:
        """Bind the model config to the encoded feature width."""
        channels = self.config.model.input_channels
        if width % channels:
            raise ShapeError(f"{width} encoded features do not split into {channels} channels")
        try:
            return self.config.model.with_input(width // channels, channels)
        except ValidationError as e:
            raise ShapeError(f"Encoded input too short for the layer stack: {e.errors()[0]['msg']}") from e

    def train(self, prepared: PreparedDataset) -> Tuple[Checkpoint, TrainHistory]:
        model_cfg = self.model_config_for(prepared.train.L)
        # the run seed is the root of every stream
        train_cfg = self.config.train.model_copy(update={"seed": self.config.seed})
        return fit(
            model_cfg,
            train_cfg,
            prepared.train,
            label_maps=prepared.label_maps,
            scaler=prepared.scaler,
            mapping=self.config.columns,
        )

    def evaluate(self, checkpoint: Checkpoint, data: EncodedDataset) -> EvaluationReport:
        loss, accuracy, probs = evaluate(checkpoint.model_config, checkpoint.params, data)
        logger.info(f"Evaluated {len(data)} rows: loss {loss:.4f}, accuracy {accuracy:.4f}")
        names = checkpoint.label_maps.class_names(checkpoint.model_config.num_classes)
        return evaluate_predictions(data.labels, probs, names)

    def load_checkpoint(self, path: Optional[Path]) -> Checkpoint:
        path = path or self.config.checkpoint
        if path is None:
            path = Path(self.config.output_dir) / "model.ckpt"
        return load_checkpoint(path)

    def write_manifest(self, command: str, extra: Optional[Dict[str, Any]] = None) -> Path:
        """Write the run manifest: full config, hash, seed and artifacts."""
        manifest = {
            "command": command,
            "config": self.config.model_dump(mode="json"),
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "streams": list(STREAMS),
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        if extra:
            manifest.update(extra)
        path = self.output_dir / MANIFEST_NAME
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Manifest: {truncate_data(manifest)}")
        return path
