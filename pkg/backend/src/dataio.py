"""Dataset ingestion, encoding, scaling and splitting."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import csv
import json
import logging
import math
import re

import numpy as np
import pandas as pd
from sklearn.preprocessing import LabelEncoder, StandardScaler

from src.errors import (
    ColumnMissingError,
    ConfigError,
    DatasetNotFoundError,
    EmptyDatasetError,
    EncodingError,
    InvalidParameterError,
    ParseError,
    RaggedRowError,
    SchemaMismatchError,
    ShapeError,
    UnseenCategoryError,
)
from src.models.base import ColumnMapping
from src.utils.seeding import stream

logger = logging.getLogger("src.dataio")

MISSING_SENTINELS = frozenset({"", "NaN", "nan", "NA"})

# plain decimal or scientific notation; no underscores, hex or inf/nan literals
NUMBER_PATTERN = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


@dataclass(frozen=True)
class RawTable:
    """Header plus string cells, exactly as read from CSV."""
    header: Tuple[str, ...]
    rows: List[Tuple[str, ...]]
    dropped_rows: int = 0

    def column_index(self, name: str) -> int:
        try:
            return self.header.index(name)
        except ValueError:
            raise ColumnMissingError(name) from None

    def column(self, name: str) -> List[str]:
        idx = self.column_index(name)
        return [row[idx] for row in self.rows]

    def select(self, indices: Sequence[int]) -> "RawTable":
        return RawTable(self.header, [self.rows[i] for i in indices])

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class LabelMaps:
    """String-to-code maps for the categorical columns and the class label."""
    columns: Dict[str, Dict[str, int]]
    class_map: Dict[str, int]

    def code(self, column: str, value: str) -> int:
        mapping = self.class_map if column == "__class__" else self.columns.get(column)
        if mapping is None:
            raise SchemaMismatchError(column, "not present in label maps")
        try:
            return mapping[value]
        except KeyError:
            raise UnseenCategoryError(column, value) from None

    def class_names(self, num_classes: Optional[int] = None) -> List[str]:
        """Class names ordered by code, padded with placeholders up to num_classes."""
        inverse = {code: name for name, code in self.class_map.items()}
        count = max(len(inverse), num_classes or 0)
        return [inverse.get(i, f"class{i}") for i in range(count)]

    def to_dict(self) -> Dict:
        return {"columns": self.columns, "class_map": self.class_map}

    @classmethod
    def from_dict(cls, data: Dict) -> "LabelMaps":
        return cls(
            columns={k: {s: int(c) for s, c in v.items()} for k, v in data["columns"].items()},
            class_map={s: int(c) for s, c in data["class_map"].items()},
        )


@dataclass
class ScalerParams:
    """Per-feature mean and (population) standard deviation."""
    mean: np.ndarray
    std: np.ndarray


@dataclass
class EncodedDataset:
    """Scaled feature matrix with integer and one-hot labels."""
    features: np.ndarray
    labels: np.ndarray
    one_hot: np.ndarray

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape[0] != n or self.one_hot.shape[0] != n:
            raise ShapeError(
                f"Row counts differ: features {n}, labels {self.labels.shape[0]}, "
                f"one_hot {self.one_hot.shape[0]}"
            )

    @property
    def L(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def subset(self, indices: np.ndarray) -> "EncodedDataset":
        return EncodedDataset(self.features[indices], self.labels[indices], self.one_hot[indices])


@dataclass
class SplitIndices:
    """Disjoint train/test row indices."""
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int


@dataclass
class PreparedDataset:
    """Everything preprocessing produces for one run."""
    train: EncodedDataset
    test: EncodedDataset
    label_maps: LabelMaps
    scaler: ScalerParams
    split: SplitIndices
    table: RawTable
    paper_faithful: bool
    dropped_rows: int = 0
    feature_names: List[str] = field(default_factory=list)


def load_csv(path: Path, mapping: ColumnMapping, require_label: bool = True) -> RawTable:
    """Read a header-first UTF-8 CSV and validate its shape.

    Prediction inputs may omit the label column (``require_label=False``).
    """
    path = Path(path)
    if not path.exists():
        raise DatasetNotFoundError(f"Dataset not found: {path}")

    # utf-8-sig tolerates a leading byte-order mark
    try:
        with open(path, "r", encoding="utf-8-sig", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if not header:
                raise ConfigError(f"{path} has no header row")
            header = tuple(cell.strip() for cell in header)
            for column in mapping.required_cols:
                if column == mapping.label_col and not require_label:
                    continue
                if column not in header:
                    raise ColumnMissingError(column, str(path))

            rows = []
            for row_number, row in enumerate(reader, start=1):
                if not row:
                    continue
                if len(row) != len(header):
                    raise RaggedRowError(row_number, len(header), len(row))
                rows.append(tuple(row))
    except UnicodeDecodeError as e:
        raise EncodingError(str(path), f"byte {e.start}") from e

    logger.info(f"Loaded {len(rows)} rows from {path}")
    return RawTable(header, rows)


def write_csv(table: RawTable, path: Path) -> Path:
    """Write a RawTable as RFC-4180 CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(table.header)
        writer.writerows(table.rows)
    return path


def drop_missing(t: RawTable) -> RawTable:
    """Remove rows containing an empty cell or a missing-value sentinel."""
    kept = [row for row in t.rows if not any(cell.strip() in MISSING_SENTINELS for cell in row)]
    dropped = len(t.rows) - len(kept)
    if not kept:
        raise EmptyDatasetError(f"No rows left after dropping {dropped} rows with missing values")
    if dropped:
        logger.info(f"Dropped {dropped} rows with missing values")
    return RawTable(t.header, kept, dropped_rows=dropped)


def _fit_codes(values: Sequence[str], column: str) -> Dict[str, int]:
    if len(values) == 0:
        raise EmptyDatasetError(f"Column '{column}' has no values to encode")
    encoder = LabelEncoder().fit(list(values))
    return {str(name): code for code, name in enumerate(encoder.classes_)}


def fit_label_maps(t: RawTable, mapping: ColumnMapping) -> LabelMaps:
    """Assign lexicographic codes to each categorical column and the label."""
    columns = {col: _fit_codes(t.column(col), col) for col in mapping.categorical_cols}
    class_map = _fit_codes(t.column(mapping.label_col), mapping.label_col)
    logger.info(
        "Fitted label maps: "
        + ", ".join(f"{col}={len(codes)}" for col, codes in columns.items())
        + f", classes={sorted(class_map, key=class_map.get)}"
    )
    return LabelMaps(columns=columns, class_map=class_map)


def decode_labels(codes: Sequence[int], maps: LabelMaps, column: Optional[str] = None) -> List[str]:
    """Reverse a code mapping; ``column=None`` decodes class labels."""
    mapping = maps.class_map if column is None else maps.columns[column]
    inverse = {code: name for name, code in mapping.items()}
    try:
        return [inverse[int(c)] for c in codes]
    except KeyError as e:
        raise UnseenCategoryError(column or "class", str(e.args[0])) from None


def _check_schema(t: RawTable, columns: Sequence[str]) -> None:
    for column in columns:
        if column not in t.header:
            raise SchemaMismatchError(column)


def encode_features(t: RawTable, maps: LabelMaps, mapping: ColumnMapping) -> np.ndarray:
    """Feature matrix: encoded categoricals first, then impedance channels."""
    _check_schema(t, [*mapping.feature_prefix_cols, *mapping.feature_cols])
    prefix = [(col, t.column_index(col)) for col in mapping.feature_prefix_cols]
    numeric = [(col, t.column_index(col)) for col in mapping.feature_cols]

    features = np.empty((len(t.rows), len(prefix) + len(numeric)), dtype=np.float64)
    for r, row in enumerate(t.rows):
        for c, (col, idx) in enumerate(prefix):
            features[r, c] = maps.code(col, row[idx])
        for c, (col, idx) in enumerate(numeric, start=len(prefix)):
            cell = row[idx].strip()
            if not NUMBER_PATTERN.fullmatch(cell):
                raise ParseError(col, r + 1, cell)
            value = float(cell)
            if not math.isfinite(value):
                raise ParseError(col, r + 1, cell)
            features[r, c] = value
    return features


def encode_labels(t: RawTable, maps: LabelMaps, mapping: ColumnMapping) -> np.ndarray:
    _check_schema(t, [mapping.label_col])
    idx = t.column_index(mapping.label_col)
    return np.array([maps.code("__class__", row[idx]) for row in t.rows], dtype=np.int64)


def encode(t: RawTable, maps: LabelMaps, mapping: ColumnMapping) -> Tuple[np.ndarray, np.ndarray]:
    """Encode a table into (features, labels)."""
    return encode_features(t, maps, mapping), encode_labels(t, maps, mapping)


def fit_scaler(features: np.ndarray, fit_rows: Sequence[int]) -> ScalerParams:
    """Per-column mean and population std over ``fit_rows``; zero std becomes 1."""
    fit_rows = np.asarray(fit_rows, dtype=np.int64)
    if fit_rows.size == 0:
        raise EmptyDatasetError("Cannot fit scaler on zero rows")
    scaler = StandardScaler().fit(features[fit_rows])
    # StandardScaler already stores 1.0 for zero-variance columns
    constant = np.flatnonzero(scaler.var_ == 0.0)
    if constant.size:
        logger.warning(f"Constant feature columns {constant.tolist()} scaled with std 1")
    return ScalerParams(
        mean=np.asarray(scaler.mean_, dtype=np.float64),
        std=np.asarray(scaler.scale_, dtype=np.float64),
    )


def apply_scaler(features: np.ndarray, p: ScalerParams) -> np.ndarray:
    """Elementwise (x - mean) / std."""
    if features.ndim != 2 or features.shape[1] != p.mean.shape[0]:
        raise ShapeError(
            f"Scaler fitted on {p.mean.shape[0]} columns, got shape {features.shape}"
        )
    return (features - p.mean) / p.std


def one_hot(labels: Sequence[int], num_classes: int = 4) -> np.ndarray:
    """Row i has a single 1 at column labels[i]."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise InvalidParameterError(f"Label {bad} out of range for {num_classes} classes")
    return np.eye(num_classes, dtype=np.float64)[labels]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(labels: Sequence[int], test_frac: float = 0.10, seed: int = 0) -> SplitIndices:
    """Class-preserving train/test split, deterministic for a seed.

    Per-class test counts start from floor(test_frac * n_c); the remaining
    slots go to the largest fractional remainders (ties in seeded order).
    """
    if not 0.0 < test_frac < 1.0:
        raise InvalidParameterError(f"test_frac must be in (0, 1), got {test_frac}")
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        raise EmptyDatasetError("Cannot split an empty dataset")

    rng = stream(seed, "split")
    classes = np.unique(labels)
    members = {c: np.flatnonzero(labels == c) for c in classes}

    n_test = _round_half_up(test_frac * n)
    if n >= 2:
        n_test = min(n_test, n - 1)

    quotas = {c: test_frac * members[c].size for c in classes}
    alloc = {c: int(math.floor(quotas[c])) for c in classes}
    tie_order = {c: i for i, c in enumerate(rng.permutation(classes))}
    remaining = n_test - sum(alloc.values())
    ranked = sorted(classes, key=lambda c: (-(quotas[c] - alloc[c]), tie_order[c]))
    # first pass keeps one training row per class where possible
    for keep_one in (True, False):
        for c in ranked:
            if remaining <= 0:
                break
            cap = members[c].size - 1 if keep_one and members[c].size > 1 else members[c].size
            if alloc[c] < cap and alloc[c] < math.ceil(quotas[c]):
                alloc[c] += 1
                remaining -= 1

    train_parts, test_parts = [], []
    for c in classes:
        shuffled = rng.permutation(members[c])
        test_parts.append(shuffled[:alloc[c]])
        train_parts.append(shuffled[alloc[c]:])

    split = SplitIndices(
        train_idx=np.sort(np.concatenate(train_parts)).astype(np.int64),
        test_idx=np.sort(np.concatenate(test_parts)).astype(np.int64),
        seed=seed,
    )
    logger.info(f"Split {n} rows into {split.train_idx.size} train / {split.test_idx.size} test")
    return split


def prepare_dataset(
    table: RawTable,
    mapping: ColumnMapping,
    seed: int,
    paper_faithful: bool = False,
    test_frac: float = 0.10,
    num_classes: int = 4,
) -> PreparedDataset:
    """Full preprocessing: clean, encode, split, scale, one-hot."""
    if mapping.include_participant_as_feature:
        logger.warning(
            "Participant ID is used as a feature; rows of one participant in both splits leak identity"
        )
    clean = drop_missing(table)
    maps = fit_label_maps(clean, mapping)
    if len(maps.class_map) > num_classes:
        raise InvalidParameterError(
            f"Dataset has {len(maps.class_map)} classes but the model outputs {num_classes}"
        )
    features, labels = encode(clean, maps, mapping)
    split = stratified_split(labels, test_frac=test_frac, seed=seed)

    fit_rows = np.arange(len(labels)) if paper_faithful else split.train_idx
    scaler = fit_scaler(features, fit_rows)
    scaled = apply_scaler(features, scaler)
    encoded = EncodedDataset(scaled, labels, one_hot(labels, num_classes))
    logger.info(
        f"Scaler fitted on {'all rows (paper-faithful)' if paper_faithful else 'train rows'}"
    )

    return PreparedDataset(
        train=encoded.subset(split.train_idx),
        test=encoded.subset(split.test_idx),
        label_maps=maps,
        scaler=scaler,
        split=split,
        table=clean,
        paper_faithful=paper_faithful,
        dropped_rows=clean.dropped_rows,
        feature_names=[*mapping.feature_prefix_cols, *mapping.feature_cols],
    )


def apply_preprocessing(
    table: RawTable,
    maps: LabelMaps,
    scaler: ScalerParams,
    mapping: ColumnMapping,
    num_classes: int = 4,
) -> EncodedDataset:
    """Stored-parameter preprocessing for evaluation; never refits."""
    _check_schema(table, mapping.required_cols)
    if not table.rows:
        raise EmptyDatasetError("Dataset has no rows")
    clean = drop_missing(table)
    features, labels = encode(clean, maps, mapping)
    return EncodedDataset(apply_scaler(features, scaler), labels, one_hot(labels, num_classes))


def transform_features(
    table: RawTable, maps: LabelMaps, scaler: ScalerParams, mapping: ColumnMapping
) -> np.ndarray:
    """Stored-parameter preprocessing of feature columns only (prediction path)."""
    if not table.rows:
        raise EmptyDatasetError("No rows to predict")
    return apply_scaler(encode_features(table, maps, mapping), scaler)


def to_model_input(features: np.ndarray, channels: int = 1) -> np.ndarray:
    """Reshape (rows, L) into (rows, L / channels, channels), row-major."""
    rows, width = features.shape
    if width % channels:
        raise ShapeError(f"{width} features cannot form {channels} channels")
    return features.reshape(rows, width // channels, channels)


def _encoded_frame(data: EncodedDataset, names: List[str]) -> pd.DataFrame:
    frame = pd.DataFrame(data.features, columns=names)
    frame["label"] = data.labels
    return frame


def save_encoded(prepared: PreparedDataset, out_dir: Path) -> Dict[str, Path]:
    """Write encoded train/test CSVs and the sidecar preprocessing manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out_dir / "encoded_train.csv",
        "test": out_dir / "encoded_test.csv",
        "manifest": out_dir / "preprocess_manifest.json",
    }
    names = prepared.feature_names or [f"f{i}" for i in range(prepared.train.L)]
    _encoded_frame(prepared.train, names).to_csv(
        paths["train"], index=False, lineterminator="\n", float_format="%.17g")
    _encoded_frame(prepared.test, names).to_csv(
        paths["test"], index=False, lineterminator="\n", float_format="%.17g")

    manifest = preprocess_manifest(prepared)
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Encoded dataset written to {out_dir}")
    return paths


def preprocess_manifest(prepared: PreparedDataset) -> Dict:
    """Everything needed to reproduce the preprocessing of a run."""
    return {
        "label_maps": prepared.label_maps.to_dict(),
        "scaler": {
            "mean": prepared.scaler.mean.tolist(),
            "std": prepared.scaler.std.tolist(),
        },
        "seed": prepared.split.seed,
        "split": {
            "train_idx": prepared.split.train_idx.tolist(),
            "test_idx": prepared.split.test_idx.tolist(),
        },
        "paper_faithful": prepared.paper_faithful,
        "dropped_rows": prepared.dropped_rows,
        "feature_names": prepared.feature_names,
    }
