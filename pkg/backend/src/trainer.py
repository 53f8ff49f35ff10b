"""Adam optimization, epoch loop and early stopping with best-weight restore."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union
import logging

import numpy as np
import pandas as pd

from src.dataio import EncodedDataset, LabelMaps, ScalerParams, stratified_split, to_model_input
from src.errors import EmptyDatasetError, InvalidParameterError, NonFiniteError, ShapeError
from src.models.base import ColumnMapping, Mode, ModelConfig, TrainConfig
from src.nncore import (
    ParamStore,
    copy_params,
    cross_entropy,
    init_params,
    model_backward,
    model_forward,
    predict_proba,
)
from src.utils.seeding import stream, stream_seed

logger = logging.getLogger("src.trainer")


@dataclass
class AdamState:
    """First/second moment estimates per parameter and the step counter."""
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: ParamStore, grads: ParamStore, state: AdamState, cfg: TrainConfig
) -> Tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"Gradient for unknown parameter '{name}'")
        if g.shape != params[name].shape:
            raise ShapeError(f"Gradient shape {g.shape} for '{name}', expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient of layer '{name.split('.')[0]}'", name)

    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        params[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params, state


@dataclass
class Model:
    """Configuration, weights and optimizer state trained together."""
    cfg: ModelConfig
    params: ParamStore
    optimizer: AdamState

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int) -> "Model":
        params = init_params(cfg, seed)
        return cls(cfg=cfg, params=params, optimizer=AdamState.zeros_like(params))


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def add(self, record: EpochRecord) -> None:
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise InvalidParameterError(
                f"Epoch {record.epoch} does not follow {self.records[-1].epoch}"
            )
        self.records.append(record)

    @property
    def has_validation(self) -> bool:
        return any(r.val_loss is not None for r in self.records)


@dataclass
class EarlyStopState:
    best_loss: float = float("inf")
    best_epoch: int = 0
    best_params: Optional[ParamStore] = None
    epochs_since_improvement: int = 0


class EarlyStopping:
    """Stop after ``patience`` epochs without a strictly lower monitored loss."""

    def __init__(self, patience: int):
        if patience < 1:
            raise InvalidParameterError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.state = EarlyStopState()

    def update(self, epoch: int, loss: float, params: ParamStore) -> bool:
        """Record an epoch; returns True when training should stop."""
        if loss < self.state.best_loss:
            self.state.best_loss = loss
            self.state.best_epoch = epoch
            self.state.best_params = copy_params(params)
            self.state.epochs_since_improvement = 0
            logger.debug(f"Epoch {epoch}: monitored loss improved to {loss:.6f}")
        else:
            self.state.epochs_since_improvement += 1
        return self.state.epochs_since_improvement >= self.patience


@dataclass
class Checkpoint:
    """Trained model plus the preprocessing needed to use it."""
    model_config: ModelConfig
    params: ParamStore
    label_maps: LabelMaps
    scaler: ScalerParams
    train_config: TrainConfig
    mapping: ColumnMapping
    version: int = 1


def batch_slices(n: int, batch_size: int) -> List[slice]:
    """Consecutive batches; the final partial batch is kept."""
    return [slice(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]


def run_epoch(
    model: Model,
    data: EncodedDataset,
    cfg: TrainConfig,
    rng: Optional[np.random.Generator],
    mode: Union[Mode, str] = Mode.TRAIN,
    dropout_rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """One pass over ``data``; returns sample-weighted mean loss and accuracy.

    Train mode shuffles with ``rng`` and updates the model per batch. Any
    other mode ("eval"/"infer") leaves rows in order and the weights untouched.
    """
    n = len(data)
    if n == 0:
        raise EmptyDatasetError("Cannot run an epoch on an empty dataset")
    training = str(getattr(mode, "value", mode)) == Mode.TRAIN.value
    x_all = to_model_input(data.features, model.cfg.input_channels)
    order = rng.permutation(n) if training and rng is not None else np.arange(n)
    dropout_rng = dropout_rng if dropout_rng is not None else rng

    total_loss = 0.0
    correct = 0
    for batch in batch_slices(n, cfg.batch_size):
        idx = order[batch]
        x, y = x_all[idx], data.one_hot[idx]
        if training:
            probs, cache = model_forward(model.cfg, model.params, x, Mode.TRAIN, dropout_rng)
            loss, grads = model_backward(cache, y)
            if not np.isfinite(loss):
                raise NonFiniteError("training loss")
            adam_step(model.params, grads, model.optimizer, cfg)
        else:
            probs, _ = model_forward(model.cfg, model.params, x, Mode.INFER)
            loss, _ = cross_entropy(probs, y)
        total_loss += loss * len(idx)
        correct += int(np.sum(np.argmax(probs, axis=1) == data.labels[idx]))
    return total_loss / n, correct / n


def evaluate(
    cfg: ModelConfig, params: ParamStore, data: EncodedDataset, batch_size: int = 256
) -> Tuple[float, float, np.ndarray]:
    """Inference-mode loss, accuracy and probabilities."""
    if len(data) == 0:
        raise EmptyDatasetError("Cannot evaluate an empty dataset")
    probs = predict_proba(cfg, params, to_model_input(data.features, cfg.input_channels), batch_size)
    loss, _ = cross_entropy(probs, data.one_hot)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == data.labels))
    return loss, accuracy, probs


EpochRunner = Callable[..., Tuple[float, float]]


def fit(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: EncodedDataset,
    label_maps: Optional[LabelMaps] = None,
    scaler: Optional[ScalerParams] = None,
    mapping: Optional[ColumnMapping] = None,
    epoch_runner: EpochRunner = run_epoch,
) -> Tuple[Checkpoint, TrainHistory]:
    """Train with early stopping and return the best-epoch weights.

    The epoch-``k`` shuffle and dropout streams are derived from
    (seed, name, k), so any epoch is reproducible on its own.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("Training set is empty")
    seed = train_cfg.seed
    model = Model.create(model_cfg, stream_seed(seed, "init"))

    train_data, val_data = dataset, None
    if train_cfg.monitor == "val_loss":
        holdout = stratified_split(dataset.labels, train_cfg.val_frac, stream_seed(seed, "validation"))
        train_data = dataset.subset(holdout.train_idx)
        val_data = dataset.subset(holdout.test_idx)
        logger.info(f"Monitoring held-out loss on {len(val_data)} of {len(dataset)} training rows")

    stopper = EarlyStopping(train_cfg.patience)
    history = TrainHistory()
    for epoch in range(1, train_cfg.epochs + 1):
        loss, accuracy = epoch_runner(
            model, train_data, train_cfg,
            stream(seed, "shuffle", epoch), Mode.TRAIN,
            dropout_rng=stream(seed, "dropout", epoch),
        )
        record = EpochRecord(epoch=epoch, loss=loss, accuracy=accuracy)
        monitored = loss
        if val_data is not None:
            record.val_loss, record.val_accuracy, _ = evaluate(
                model.cfg, model.params, val_data, train_cfg.batch_size)
            monitored = record.val_loss
        history.add(record)
        logger.info(
            f"Epoch {epoch:02d} | loss {loss:.4f} | acc {accuracy:.3f}"
            + (f" | val_loss {record.val_loss:.4f} | val_acc {record.val_accuracy:.3f}"
               if val_data is not None else "")
        )
        if not np.isfinite(monitored):
            raise NonFiniteError(f"monitored loss at epoch {epoch}")
        if stopper.update(epoch, monitored, model.params):
            history.stopped_early = epoch < train_cfg.epochs
            logger.info(
                f"Early stopping at epoch {epoch}; restoring epoch {stopper.state.best_epoch} "
                f"(loss {stopper.state.best_loss:.6f})"
            )
            break

    history.best_epoch = stopper.state.best_epoch
    checkpoint = Checkpoint(
        model_config=model_cfg,
        params=copy_params(stopper.state.best_params),
        label_maps=label_maps if label_maps is not None else LabelMaps(columns={}, class_map={}),
        scaler=scaler if scaler is not None else ScalerParams(
            mean=np.zeros(dataset.L), std=np.ones(dataset.L)),
        train_config=train_cfg,
        mapping=mapping if mapping is not None else ColumnMapping(
            feature_cols=[f"f{i}" for i in range(dataset.L)]),
    )
    return checkpoint, history


def history_to_csv(history: TrainHistory, path: Path) -> Path:
    """Per-epoch curve data: epoch, loss, accuracy (+ held-out columns)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["epoch", "loss", "accuracy"]
    if history.has_validation:
        columns += ["val_loss", "val_accuracy"]
    frame = pd.DataFrame(
        [{c: getattr(r, c) for c in columns} for r in history.records], columns=columns)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path
