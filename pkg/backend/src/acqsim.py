"""Simulated impedance acquisition and synthetic cohort generation.

Models a DFT impedance converter: the load is excited at each sweep
frequency, the sensed current is sampled by the ADC and correlated against
the excitation bin to give integer real/imaginary words. A reference
resistor fixes the per-frequency gain factor and system phase, and a relay
matrix steps through electrode pairs.
"""
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from src.dataio import RawTable
from src.errors import CalibrationError, ClippingError, InvalidParameterError
from src.models.base import (
    ColumnMapping,
    SimulationConfig,
    SweepConfig,
    TissueModel,
    default_feature_cols,
    freq_label,
    sweep_frequencies,
)
from src.utils.seeding import stream

logger = logging.getLogger("src.acqsim")


@dataclass(frozen=True)
class ElectrodePair:
    source: int
    sense: int

    def __post_init__(self):
        if self.source == self.sense:
            raise InvalidParameterError(f"Electrode pair uses electrode {self.source} twice")
        if self.source < 1 or self.sense < 1:
            raise InvalidParameterError(f"Electrode ids start at 1, got ({self.source}, {self.sense})")

    def pattern_id(self, electrodes: int = 8) -> str:
        if electrodes < 10:
            return f"P{self.source}{self.sense}"
        return f"P{self.source}-{self.sense}"


@dataclass(frozen=True)
class DftReading:
    freq_hz: float
    real: int
    imag: int

    @property
    def magnitude(self) -> float:
        return math.hypot(self.real, self.imag)


@dataclass
class CalibrationRecord:
    reference_ohms: float
    frequencies: np.ndarray
    gain_factors: np.ndarray
    system_phases: np.ndarray

    def at(self, freq_hz: float) -> Tuple[float, float]:
        """Gain factor and system phase for a calibrated frequency."""
        hits = np.flatnonzero(np.isclose(self.frequencies, freq_hz, rtol=0.0, atol=1e-6))
        if hits.size == 0:
            raise CalibrationError(f"No calibration at {freq_hz} Hz")
        i = hits[0]
        return float(self.gain_factors[i]), float(self.system_phases[i])


@dataclass
class SimulationResult:
    table: RawTable
    readings: List[DftReading] = field(default_factory=list)
    calibration: Optional[CalibrationRecord] = None


def impedance_of(model: TissueModel, f: float) -> complex:
    """Complex impedance at ``f`` Hz, scaled by (1 + severity_scale * grade)."""
    omega = 2.0 * math.pi * f
    if model.kind == "series_rc":
        z = complex(model.r0, 0.0) + 1.0 / (1j * omega * model.capacitance)
    else:
        z = model.rinf + (model.r0 - model.rinf) / (1.0 + (1j * omega * model.tau) ** model.alpha)
    return z * (1.0 + model.severity_scale * model.severity_grade)


def _full_scale(sweep: SweepConfig) -> int:
    return 2 ** (sweep.adc_bits - 1) - 1


def _bins(freqs: np.ndarray, sweep: SweepConfig) -> np.ndarray:
    # coherent sampling: whole number of cycles per DFT window
    n = sweep.samples_per_dft
    return np.maximum(1, np.rint(freqs * n / sweep.sample_rate_hz)).astype(np.int64)


def sample_response(
    z: Sequence[complex], freqs: Sequence[float], sweep: SweepConfig,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Quantized ADC samples, one row of ``samples_per_dft`` per (z, f)."""
    z = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    if np.any(np.abs(z) == 0):
        raise InvalidParameterError("Cannot measure a zero impedance")

    full = _full_scale(sweep)
    amplitude = (sweep.excitation_amplitude * sweep.system_gain * sweep.feedback_ohms
                 / np.abs(z) * full / sweep.adc_ref_volts)
    system_phase = sweep.system_phase_rad + 2.0 * math.pi * freqs * sweep.system_delay_s
    theta = system_phase - np.angle(z)

    n = np.arange(sweep.samples_per_dft)
    angle = 2.0 * math.pi * np.outer(_bins(freqs, sweep), n) / sweep.samples_per_dft
    signal = amplitude[:, None] * np.cos(angle + theta[:, None])
    if rng is not None and sweep.noise_counts > 0:
        signal = signal + rng.normal(0.0, sweep.noise_counts, size=signal.shape)

    peak = np.max(np.abs(signal), axis=1)
    if np.any(peak > full):
        worst = int(np.argmax(peak))
        raise ClippingError(
            f"Signal of {peak[worst]:.1f} counts exceeds the {sweep.adc_bits}-bit range "
            f"(|Z|={abs(z[worst]):.2f} ohm at {freqs[worst]:.0f} Hz)"
        )
    return np.rint(signal)


def measure_sweep(
    z: Sequence[complex], freqs: Sequence[float], sweep: SweepConfig,
    rng: Optional[np.random.Generator] = None,
) -> List[DftReading]:
    """DFT words at the excitation bin for each (z, f)."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    samples = sample_response(z, freqs, sweep, rng)
    n = np.arange(sweep.samples_per_dft)
    angle = 2.0 * math.pi * np.outer(_bins(freqs, sweep), n) / sweep.samples_per_dft
    real = np.rint(np.sum(samples * np.cos(angle), axis=1)).astype(np.int64)
    imag = np.rint(np.sum(samples * np.sin(angle), axis=1)).astype(np.int64)

    limit = (2 ** (sweep.adc_bits - 1)) * sweep.samples_per_dft
    if np.any(np.abs(real) > limit) or np.any(np.abs(imag) > limit):
        raise ClippingError(f"DFT word outside +/-{limit}")
    return [DftReading(float(f), int(r), int(i)) for f, r, i in zip(freqs, real, imag)]


def dft_measure(
    z: complex, freq_hz: float, sweep: SweepConfig, rng: Optional[np.random.Generator] = None
) -> DftReading:
    """Single converter reading of impedance ``z`` at ``freq_hz``."""
    return measure_sweep([z], [freq_hz], sweep, rng)[0]


def calibrate(
    reference_ohms: float, sweep: SweepConfig, rng: Optional[np.random.Generator] = None
) -> CalibrationRecord:
    """Gain factor and system phase per sweep point from a known resistor."""
    if reference_ohms <= 0:
        raise InvalidParameterError(f"Calibration resistor must be positive, got {reference_ohms}")
    freqs = np.asarray(sweep_frequencies(sweep), dtype=np.float64)
    readings = measure_sweep(np.full(freqs.shape, complex(reference_ohms, 0.0)), freqs, sweep, rng)
    magnitudes = np.array([r.magnitude for r in readings])
    if np.any(magnitudes == 0):
        bad = freqs[magnitudes == 0]
        raise CalibrationError(f"Zero calibration magnitude at {bad.tolist()} Hz")
    record = CalibrationRecord(
        reference_ohms=float(reference_ohms),
        frequencies=freqs,
        gain_factors=1.0 / (reference_ohms * magnitudes),
        system_phases=np.array([math.atan2(r.imag, r.real) for r in readings]),
    )
    logger.debug(f"Calibrated {freqs.size} points against {reference_ohms} ohm")
    return record


def _wrap(angle: float) -> float:
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


def impedance_from_reading(reading: DftReading, cal: CalibrationRecord) -> Tuple[float, float]:
    """(|Z| in ohms, phase in radians) from a reading and its calibration."""
    gain, system_phase = cal.at(reading.freq_hz)
    magnitude = reading.magnitude
    if magnitude == 0:
        raise CalibrationError(f"Zero magnitude reading at {reading.freq_hz} Hz")
    return 1.0 / (gain * magnitude), _wrap(math.atan2(reading.imag, reading.real) - system_phase)


def relay_scan(electrodes: int = 8, policy: str = "lexicographic") -> List[ElectrodePair]:
    """Ordered electrode pairs, one closed relay pair per step."""
    if electrodes < 2:
        raise InvalidParameterError(f"Need at least 2 electrodes, got {electrodes}")
    ids = range(1, electrodes + 1)
    if policy == "lexicographic":
        return [ElectrodePair(a, b) for a, b in combinations(ids, 2)]
    if policy == "adjacent":
        pairs = [ElectrodePair(i, i + 1) for i in range(1, electrodes)]
        if electrodes > 2:
            pairs.append(ElectrodePair(electrodes, 1))
        return pairs
    raise InvalidParameterError(f"Unknown scan policy '{policy}'")


def relay_schedule(pairs: Sequence[ElectrodePair], electrodes: int = 8) -> np.ndarray:
    """Relay drive matrix per step: +1 source, -1 sense, 0 open."""
    schedule = np.zeros((len(pairs), electrodes), dtype=np.int8)
    for step, pair in enumerate(pairs):
        if max(pair.source, pair.sense) > electrodes:
            raise InvalidParameterError(f"Pair {pair} exceeds {electrodes} electrodes")
        schedule[step, pair.source - 1] = 1
        schedule[step, pair.sense - 1] = -1
    return schedule


def instrument_log(readings: Sequence[DftReading]) -> str:
    """Serial-monitor style stream, one ``freq_hz,real,imag`` line per reading."""
    lines = ["freq_hz,real,imag"]
    lines += [f"{freq_label(r.freq_hz)},{r.real},{r.imag}" for r in readings]
    return "\n".join(lines) + "\n"


def _pattern_factor(pair: ElectrodePair, electrodes: int, spread: float) -> float:
    # longer current paths read higher
    separation = abs(pair.sense - pair.source) - 1
    return 1.0 + spread * separation / max(1, electrodes - 2)


def _perturbed(base: TissueModel, grade: int, severity_scale: float,
               magnitude: float, exercise: float) -> TissueModel:
    update: Dict[str, float] = {
        "r0": base.r0 * magnitude * exercise,
        "rinf": base.rinf * magnitude,
        "tau": base.tau * exercise,
        "severity_grade": grade,
        "severity_scale": severity_scale,
    }
    if base.kind == "series_rc":
        update["rinf"] = base.rinf
        update["capacitance"] = base.capacitance / exercise
    return base.model_copy(update=update)


def generate_dataset(
    cfg: SimulationConfig,
    sweep: SweepConfig,
    seed: int,
    mapping: Optional[ColumnMapping] = None,
) -> SimulationResult:
    """Labeled synthetic cohort in the dataset CSV schema.

    One row per participant, exercise, repetition and scanned electrode
    pattern. Participant ids run S01, S02, ... grade by grade.
    """
    rng = stream(seed, "simulate")
    freqs = np.asarray(sweep_frequencies(sweep), dtype=np.float64)
    calibration = calibrate(cfg.calibration_ohms, sweep)
    pairs = relay_scan(cfg.electrodes, cfg.scan_policy)
    if cfg.patterns is not None:
        if cfg.patterns > len(pairs):
            raise InvalidParameterError(
                f"patterns={cfg.patterns} but the scan only has {len(pairs)} pairs"
            )
        pairs = pairs[:cfg.patterns]

    feature_names = default_feature_cols(sweep, cfg.include_phase)
    names = mapping or ColumnMapping(feature_cols=feature_names)
    omitted = [c for c in feature_names if c not in names.feature_cols]
    if omitted:
        raise InvalidParameterError(
            f"Column mapping leaves out {len(omitted)} simulated feature columns "
            f"(first: {omitted[0]}); list them in [columns] feature_cols or leave it unset"
        )
    header = (names.exercise_col, names.participant_col, names.pattern_col, names.label_col,
              *feature_names)

    rows: List[Tuple[str, ...]] = []
    readings: List[DftReading] = []
    participant = 0
    for grade, count in enumerate(cfg.participants_per_grade):
        for _ in range(count):
            participant += 1
            pid = f"S{participant:02d}"
            spread = 1.0 + cfg.participant_spread * rng.uniform(-1.0, 1.0)
            for exercise in cfg.exercises:
                factor = cfg.exercise_factors[exercise]
                for _rep in range(cfg.repetitions):
                    jitter = 1.0 + cfg.repetition_jitter * rng.uniform(-1.0, 1.0)
                    for pair in pairs:
                        geometry = _pattern_factor(pair, cfg.electrodes, cfg.pattern_spread)
                        tissue = _perturbed(cfg.tissue, grade, cfg.severity_scale,
                                            spread * jitter * geometry, factor)
                        z = np.array([impedance_of(tissue, f) for f in freqs])
                        step = measure_sweep(z, freqs, sweep, rng)
                        readings.extend(step)
                        values = [impedance_from_reading(r, calibration) for r in step]
                        cells = [f"{mag:.6f}" for mag, _ in values]
                        if cfg.include_phase:
                            cells += [f"{phase:.6f}" for _, phase in values]
                        rows.append((exercise, pid, pair.pattern_id(cfg.electrodes), f"g{grade}", *cells))

    logger.info(
        f"Simulated {len(rows)} rows: {participant} participants, {len(cfg.exercises)} exercises, "
        f"{cfg.repetitions} repetitions, {len(pairs)} patterns, {freqs.size} frequencies"
    )
    return SimulationResult(table=RawTable(header, rows), readings=readings, calibration=calibration)
