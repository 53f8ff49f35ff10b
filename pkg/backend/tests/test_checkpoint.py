import struct

import numpy as np
import pytest

from src.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from src.dataio import LabelMaps, ScalerParams
from src.errors import ChecksumError, DatasetNotFoundError, TruncatedCheckpointError, VersionError
from src.models.base import ColumnMapping, TrainConfig
from src.nncore import init_params, predict_proba
from src.trainer import Checkpoint


@pytest.fixture
def checkpoint(tiny_model_cfg, rng):
    return Checkpoint(
        model_config=tiny_model_cfg,
        params=init_params(tiny_model_cfg, 17),
        label_maps=LabelMaps(
            columns={"exercise": {"Gait": 0}, "participant": {"S01": 0}, "pattern": {"P12": 0}},
            class_map={"g0": 0, "g1": 1, "g2": 2, "g3": 3},
        ),
        scaler=ScalerParams(mean=rng.normal(size=12), std=rng.uniform(0.5, 2.0, size=12)),
        train_config=TrainConfig(seed=3),
        mapping=ColumnMapping(feature_cols=[f"z{i}" for i in range(9)]),
    )


def test_roundtrip_predictions_bit_identical(tmp_path, checkpoint, rng):
    path = save_checkpoint(checkpoint, tmp_path / "model.ckpt")
    loaded = load_checkpoint(path)

    x = rng.normal(size=(100, 12, 1))
    np.testing.assert_array_equal(
        predict_proba(loaded.model_config, loaded.params, x),
        predict_proba(checkpoint.model_config, checkpoint.params, x),
    )
    np.testing.assert_array_equal(loaded.scaler.mean, checkpoint.scaler.mean)
    np.testing.assert_array_equal(loaded.scaler.std, checkpoint.scaler.std)
    assert loaded.label_maps == checkpoint.label_maps
    assert loaded.mapping == checkpoint.mapping
    assert loaded.train_config == checkpoint.train_config
    assert loaded.model_config == checkpoint.model_config


def test_save_is_deterministic(tmp_path, checkpoint):
    a = save_checkpoint(checkpoint, tmp_path / "a.ckpt").read_bytes()
    b = save_checkpoint(checkpoint, tmp_path / "b.ckpt").read_bytes()
    assert a == b


def test_corrupted_byte_fails_checksum(tmp_path, checkpoint):
    path = save_checkpoint(checkpoint, tmp_path / "model.ckpt")
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_future_version_rejected(tmp_path, checkpoint):
    path = save_checkpoint(checkpoint, tmp_path / "model.ckpt")
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, 8, FORMAT_VERSION + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_truncated_file(tmp_path, checkpoint):
    path = save_checkpoint(checkpoint, tmp_path / "model.ckpt")
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(path)

    path.write_bytes(b"KOA")
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DatasetNotFoundError):
        load_checkpoint(tmp_path / "absent.ckpt")
