import os
import sys

import numpy as np
import pytest

# Add the backend directory to Python path
backend_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, backend_dir)

from src.dataio import RawTable  # noqa: E402
from src.models.base import ColumnMapping, ModelConfig  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size simulate and train run (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mapping():
    return ColumnMapping(feature_cols=["z1", "z2", "z3"])


@pytest.fixture
def small_table():
    """40 rows, 4 grades, grade shifts every impedance column."""
    header = ("exercise", "participant", "pattern", "affectation", "z1", "z2", "z3")
    rows = []
    exercises = ["Gait", "Cyclic"]
    for grade in range(4):
        for i in range(10):
            base = 100.0 * (grade + 1)
            rows.append((
                exercises[i % 2], f"S{grade * 2 + i % 2 + 1:02d}", f"P1{i % 3 + 2}", f"g{grade}",
                f"{base + i:.3f}", f"{base * 1.5 + i:.3f}", f"{base * 2 + 0.5 * i:.3f}",
            ))
    return RawTable(header, rows)


@pytest.fixture
def tiny_model_cfg():
    """Miniature stack: input 12, conv filters 2 and 3, dense 5, 4 classes."""
    return ModelConfig(
        conv1_filters=2, conv2_filters=3, dense_units=5, num_classes=4,
        input_len=12, input_channels=1,
    )
