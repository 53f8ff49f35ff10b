"""Binary checkpoint format.

Layout (little-endian)::

    magic         8 bytes   b"KOACKPT\\0"
    version       uint32
    header_len    uint64
    payload_len   uint64
    header        JSON (utf-8): configs, mapping, label maps, tensor directory
    payload       float64 tensors, concatenated in directory order
    checksum      SHA-256 over everything above
"""
from pathlib import Path
from typing import Dict, List, Tuple
import hashlib
import json
import logging
import os
import struct

import numpy as np
from pydantic import ValidationError

from src.dataio import LabelMaps, ScalerParams
from src.errors import (
    CheckpointError,
    ChecksumError,
    DatasetNotFoundError,
    TruncatedCheckpointError,
    VersionError,
)
from src.models.base import ColumnMapping, ModelConfig, TrainConfig
from src.nncore import LAYER_NAMES, param_shapes
from src.trainer import Checkpoint

logger = logging.getLogger("src.checkpoint")

MAGIC = b"KOACKPT\x00"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQQ")
_DIGEST_SIZE = hashlib.sha256().digest_size
_DTYPE = np.dtype("<f8")


def _tensors(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    tensors = [
        (f"{layer}.{kind}", ckpt.params[f"{layer}.{kind}"])
        for layer in LAYER_NAMES for kind in ("weight", "bias")
    ]
    tensors.append(("scaler.mean", ckpt.scaler.mean))
    tensors.append(("scaler.std", ckpt.scaler.std))
    return tensors


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    """Serialize a checkpoint; the file is replaced atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    directory = []
    chunks = []
    offset = 0
    for name, tensor in _tensors(ckpt):
        data = np.ascontiguousarray(tensor, dtype=_DTYPE).tobytes()
        directory.append({"name": name, "shape": list(np.shape(tensor)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)

    header = json.dumps({
        "model_config": ckpt.model_config.model_dump(mode="json"),
        "train_config": ckpt.train_config.model_dump(mode="json"),
        "mapping": ckpt.mapping.model_dump(mode="json"),
        "label_maps": ckpt.label_maps.to_dict(),
        "tensors": directory,
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")

    body = _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header), len(payload)) + header + payload
    blob = body + hashlib.sha256(body).digest()

    tmp_path = path.with_name(path.name + ".tmp")
    try:
        tmp_path.write_bytes(blob)
        os.replace(tmp_path, path)
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint saved to {path} ({len(blob)} bytes)")
    return path


def _read_tensor(payload: bytes, entry: Dict) -> np.ndarray:
    shape = tuple(int(d) for d in entry["shape"])
    count = int(np.prod(shape)) if shape else 1
    start = int(entry["offset"])
    end = start + count * _DTYPE.itemsize
    if start < 0 or end > len(payload):
        raise TruncatedCheckpointError(f"Tensor '{entry['name']}' extends past the payload")
    return np.frombuffer(payload[start:end], dtype=_DTYPE).astype(np.float64).reshape(shape)


def load_checkpoint(path: Path) -> Checkpoint:
    """Read and verify a checkpoint written by ``save_checkpoint``."""
    path = Path(path)
    if not path.is_file():
        raise DatasetNotFoundError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()

    if len(blob) < _PREAMBLE.size + _DIGEST_SIZE:
        raise TruncatedCheckpointError(f"{path} is too short to be a checkpoint ({len(blob)} bytes)")
    magic, version, header_len, payload_len = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"Checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    expected = _PREAMBLE.size + header_len + payload_len + _DIGEST_SIZE
    if len(blob) < expected:
        raise TruncatedCheckpointError(f"{path} has {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise CheckpointError(f"{path} has {len(blob) - expected} unexpected trailing bytes")

    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"Checksum mismatch in {path}")

    header_start = _PREAMBLE.size
    payload_start = header_start + header_len
    try:
        header = json.loads(body[header_start:payload_start].decode("utf-8"))
        model_config = ModelConfig.model_validate(header["model_config"])
        train_config = TrainConfig.model_validate(header["train_config"])
        mapping = ColumnMapping.model_validate(header["mapping"])
        label_maps = LabelMaps.from_dict(header["label_maps"])
        directory = header["tensors"]
    except (ValueError, KeyError, ValidationError) as e:
        raise CheckpointError(f"Malformed checkpoint header in {path}: {e}") from e

    payload = body[payload_start:]
    tensors = {entry["name"]: _read_tensor(payload, entry) for entry in directory}

    params = {}
    for name, shape in param_shapes(model_config).items():
        if name not in tensors:
            raise CheckpointError(f"Checkpoint is missing tensor '{name}'")
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"Tensor '{name}' has shape {tensors[name].shape}, model expects {shape}"
            )
        params[name] = tensors[name]
    try:
        scaler = ScalerParams(mean=tensors["scaler.mean"], std=tensors["scaler.std"])
    except KeyError as e:
        raise CheckpointError(f"Checkpoint is missing tensor {e}") from e

    logger.info(f"Checkpoint loaded from {path}")
    return Checkpoint(
        model_config=model_config,
        params=params,
        label_maps=label_maps,
        scaler=scaler,
        train_config=train_config,
        mapping=mapping,
        version=version,
    )
