"""Configuration and record models shared across the pipeline."""
from enum import Enum
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Tuple
import hashlib
import json
import logging
import math

from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    TypeAdapter,
    ValidationError,
    field_validator,
    model_validator,
)

logger = logging.getLogger("src.models.base")

DEFAULT_EXERCISES = ["Cyclic", "Extension", "Flexion", "Gait", "Standing"]


def _split_list(value):
    """Accept comma-separated strings for list fields (INI configs)."""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


CsvList = Annotated[List[str], BeforeValidator(_split_list)]
IntCsvList = Annotated[List[int], BeforeValidator(_split_list)]


class StrictModel(BaseModel):
    """Base model rejecting unknown keys."""
    model_config = ConfigDict(extra="forbid")


class Mode(str, Enum):
    """Forward-pass mode."""
    TRAIN = "train"
    INFER = "infer"


class ColumnMapping(StrictModel):
    """Names of the dataset columns used by the pipeline."""
    exercise_col: str = "exercise"
    participant_col: str = "participant"
    pattern_col: str = "pattern"
    label_col: str = "affectation"
    feature_cols: CsvList = Field(default_factory=list)
    include_participant_as_feature: bool = True

    @model_validator(mode="after")
    def _check_columns(self) -> "ColumnMapping":
        if not self.feature_cols:
            raise ValueError("feature_cols must name at least one impedance column")
        names = [self.exercise_col, self.participant_col, self.pattern_col,
                 self.label_col, *self.feature_cols]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"Mapped column names must be distinct, repeated: {duplicates}")
        return self

    @property
    def categorical_cols(self) -> List[str]:
        """Categorical columns in fixed encoding order."""
        return [self.exercise_col, self.participant_col, self.pattern_col]

    @property
    def feature_prefix_cols(self) -> List[str]:
        """Encoded categoricals placed ahead of the impedance channels."""
        cols = [self.exercise_col]
        if self.include_participant_as_feature:
            cols.append(self.participant_col)
        cols.append(self.pattern_col)
        return cols

    @property
    def required_cols(self) -> List[str]:
        return [*self.categorical_cols, self.label_col, *self.feature_cols]


class ModelConfig(StrictModel):
    """Layer stack of the convolutional classifier."""
    conv1_filters: int = Field(default=64, ge=1)
    conv1_kernel: int = Field(default=3, ge=1)
    conv2_filters: int = Field(default=128, ge=1)
    conv2_kernel: int = Field(default=3, ge=1)
    pool_size: int = Field(default=2, ge=1)
    drop1: float = Field(default=0.5, ge=0.0, lt=1.0)
    drop2: float = Field(default=0.6, ge=0.0, lt=1.0)
    drop3: float = Field(default=0.6, ge=0.0, lt=1.0)
    dense_units: int = Field(default=256, ge=1)
    num_classes: int = Field(default=4, ge=2)
    input_len: Optional[int] = Field(default=None, ge=1)
    input_channels: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.input_len is not None:
            lengths = self.stage_lengths()
            if min(lengths) < 1:
                raise ValueError(
                    f"input_len={self.input_len} too small: stage lengths {lengths}"
                )
        return self

    def stage_lengths(self) -> Tuple[int, int, int, int]:
        """Sequence lengths after conv1, pool1, conv2 and pool2."""
        if self.input_len is None:
            raise ValueError("input_len is not set")
        c1 = self.input_len - self.conv1_kernel + 1
        p1 = c1 // self.pool_size if c1 > 0 else 0
        c2 = p1 - self.conv2_kernel + 1
        p2 = c2 // self.pool_size if c2 > 0 else 0
        return c1, p1, c2, p2

    @property
    def flat_features(self) -> int:
        return self.stage_lengths()[3] * self.conv2_filters

    def with_input(self, input_len: int, input_channels: Optional[int] = None) -> "ModelConfig":
        """Validated copy bound to a concrete input shape."""
        data = self.model_dump()
        data["input_len"] = input_len
        if input_channels is not None:
            data["input_channels"] = input_channels
        return ModelConfig.model_validate(data)


class TrainConfig(StrictModel):
    """Optimizer and epoch-loop settings."""
    learning_rate: float = Field(default=6.5e-5, gt=0.0)
    epochs: int = Field(default=40, ge=1)
    batch_size: int = Field(default=32, ge=1)
    patience: int = Field(default=10, ge=1)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    seed: int = 0
    monitor: Literal["train_loss", "val_loss"] = "train_loss"
    val_frac: float = Field(default=0.1, gt=0.0, lt=1.0)


class PreprocessConfig(StrictModel):
    """Scaling and split options."""
    paper_faithful: bool = False
    test_frac: float = Field(default=0.10, gt=0.0, lt=1.0)


class TissueModel(StrictModel):
    """Electrical tissue model with a severity-dependent magnitude scale."""
    kind: Literal["cole", "series_rc"] = "cole"
    r0: float = Field(default=400.0, gt=0.0)
    rinf: float = Field(default=150.0, ge=0.0)
    tau: float = Field(default=2e-6, gt=0.0)
    alpha: float = Field(default=0.8, gt=0.0, le=1.0)
    capacitance: Optional[float] = Field(default=None, gt=0.0)
    severity_grade: int = Field(default=0, ge=0, le=3)
    severity_scale: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_kind(self) -> "TissueModel":
        if self.kind == "cole" and not (self.r0 > self.rinf > 0):
            raise ValueError("Cole model requires r0 > rinf > 0")
        if self.kind == "series_rc" and self.capacitance is None:
            raise ValueError("series_rc model requires capacitance")
        return self


class SweepConfig(StrictModel):
    """Frequency sweep and converter settings."""
    start_hz: float = Field(default=5000.0, gt=0.0)
    step_hz: float = Field(default=5000.0, ge=0.0)
    points: int = Field(default=16, ge=1)
    excitation_amplitude: float = Field(default=1.98, ge=0.0)
    samples_per_dft: int = Field(default=1024, ge=8)
    adc_bits: int = Field(default=12, ge=2, le=24)
    adc_ref_volts: float = Field(default=2.0, gt=0.0)
    feedback_ohms: float = Field(default=100.0, gt=0.0)
    clock_hz: float = Field(default=16.0e6, gt=0.0)
    system_gain: float = Field(default=0.97, gt=0.0)
    system_delay_s: float = Field(default=1.0e-6, ge=0.0)
    system_phase_rad: float = 0.1
    noise_counts: float = Field(default=0.0, ge=0.0)

    @property
    def sample_rate_hz(self) -> float:
        # converter samples at MCLK / 16
        return self.clock_hz / 16.0

    @model_validator(mode="after")
    def _check_band(self) -> "SweepConfig":
        top = self.start_hz + self.step_hz * (self.points - 1)
        if top >= self.sample_rate_hz / 2.0:
            raise ValueError(
                f"Sweep top {top} Hz is not below Nyquist ({self.sample_rate_hz / 2.0} Hz)"
            )
        return self


class SimulationConfig(StrictModel):
    """Synthetic cohort generation settings."""
    participants_per_grade: IntCsvList = Field(default_factory=lambda: [2, 2, 2, 2])
    exercises: CsvList = Field(default_factory=lambda: list(DEFAULT_EXERCISES))
    exercise_factors: Dict[str, float] = Field(default_factory=lambda: {
        "Cyclic": 1.00, "Extension": 1.04, "Flexion": 0.96, "Gait": 1.08, "Standing": 0.92,
    })
    repetitions: int = Field(default=20, ge=1)
    electrodes: int = Field(default=8, ge=2)
    patterns: Optional[int] = Field(default=4, ge=1)
    scan_policy: Literal["lexicographic", "adjacent"] = "lexicographic"
    severity_scale: float = Field(default=0.5, ge=0.0)
    participant_spread: float = Field(default=0.05, ge=0.0, lt=1.0)
    repetition_jitter: float = Field(default=0.01, ge=0.0, lt=1.0)
    pattern_spread: float = Field(default=0.10, ge=0.0)
    calibration_ohms: float = Field(default=200.0, gt=0.0)
    include_phase: bool = False
    tissue: TissueModel = Field(default_factory=TissueModel)

    @field_validator("exercise_factors", mode="before")
    @classmethod
    def _parse_factors(cls, value):
        # "Gait:1.08, Standing:0.92"
        if isinstance(value, str):
            pairs = {}
            for item in _split_list(value):
                name, _, factor = item.partition(":")
                pairs[name.strip()] = float(factor)
            return pairs
        return value

    @model_validator(mode="after")
    def _check_cohort(self) -> "SimulationConfig":
        if not 2 <= len(self.participants_per_grade) <= 4:
            raise ValueError(
                f"participants_per_grade needs 2 to 4 grades, got {len(self.participants_per_grade)}"
            )
        if any(n < 1 for n in self.participants_per_grade):
            raise ValueError("every grade needs at least one participant")
        if not self.exercises:
            raise ValueError("at least one exercise is required")
        missing = [e for e in self.exercises if e not in self.exercise_factors]
        if missing:
            raise ValueError(f"no exercise factor for {missing}")
        return self


class RunConfig(StrictModel):
    """Declarative configuration of one CLI run."""
    dataset: Optional[Path] = None
    checkpoint: Optional[Path] = None
    row: Optional[Path] = None
    report_dir: Optional[Path] = None
    output_dir: Path = Path("runs/default")
    seed: int = 42
    columns: ColumnMapping
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    simulate: SimulationConfig = Field(default_factory=SimulationConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    @model_validator(mode="before")
    @classmethod
    def _derive_feature_cols(cls, data):
        """Unset feature columns follow the run's sweep and phase setting."""
        if not isinstance(data, dict) or isinstance(data.get("columns"), ColumnMapping):
            return data
        columns = dict(data.get("columns") or {})
        if columns.get("feature_cols"):
            return {**data, "columns": columns}
        try:
            sweep = data.get("sweep") or SweepConfig()
            if not isinstance(sweep, SweepConfig):
                sweep = SweepConfig.model_validate(sweep)
            simulate = data.get("simulate") or {}
            if isinstance(simulate, SimulationConfig):
                include_phase = simulate.include_phase
            else:
                include_phase = TypeAdapter(bool).validate_python(simulate.get("include_phase", False))
        except ValidationError:
            # the field validators report the bad section
            sweep, include_phase = SweepConfig(), False
        columns["feature_cols"] = default_feature_cols(sweep, include_phase)
        return {**data, "columns": columns}

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON form of the configuration."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def sweep_frequencies(sweep: SweepConfig) -> List[float]:
    """Frequencies visited by a sweep, start + i * step."""
    return [sweep.start_hz + i * sweep.step_hz for i in range(sweep.points)]


def freq_label(freq: float) -> str:
    """Integer frequencies print without a decimal point."""
    return str(int(freq)) if math.isclose(freq, round(freq)) else f"{freq:g}"


def default_feature_cols(sweep: SweepConfig, include_phase: bool = False) -> List[str]:
    """Feature column names emitted by the simulator for a sweep."""
    cols = [f"z_{freq_label(f)}" for f in sweep_frequencies(sweep)]
    if include_phase:
        cols += [f"phase_{freq_label(f)}" for f in sweep_frequencies(sweep)]
    return cols
