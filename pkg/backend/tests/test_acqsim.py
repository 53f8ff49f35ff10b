import math

import numpy as np
import pytest

from src.acqsim import (
    DftReading,
    ElectrodePair,
    calibrate,
    dft_measure,
    generate_dataset,
    impedance_from_reading,
    impedance_of,
    instrument_log,
    measure_sweep,
    relay_scan,
    relay_schedule,
    sample_response,
)
from src.errors import ClippingError, InvalidParameterError
from src.models.base import (
    ColumnMapping,
    SimulationConfig,
    SweepConfig,
    TissueModel,
    default_feature_cols,
    sweep_frequencies,
)


@pytest.fixture
def sweep():
    return SweepConfig(points=30)


def small_cohort(**updates):
    values = {"participants_per_grade": [1, 1, 1, 1], "repetitions": 3, "patterns": 1,
              "exercises": ["Gait", "Standing"]}
    values.update(updates)
    return SimulationConfig(**values)


def test_cole_limits():
    model = TissueModel(r0=400.0, rinf=150.0, tau=2e-6, alpha=0.8)
    assert impedance_of(model, 1e-6) == pytest.approx(400.0, rel=1e-6)
    assert impedance_of(model, 1e15).real == pytest.approx(150.0, rel=1e-3)


def test_series_rc_hand_value():
    model = TissueModel(kind="series_rc", r0=100.0, capacitance=1e-6)
    z = impedance_of(model, 1e4 / (2 * math.pi))
    assert z.real == pytest.approx(100.0)
    assert z.imag == pytest.approx(-100.0)


def test_severity_scales_magnitude():
    base = TissueModel()
    graded = base.model_copy(update={"severity_grade": 2, "severity_scale": 0.5})
    assert abs(impedance_of(graded, 5e4)) == pytest.approx(2.0 * abs(impedance_of(base, 5e4)))


def test_tissue_model_validation():
    with pytest.raises(ValueError):
        TissueModel(r0=100.0, rinf=150.0)
    with pytest.raises(ValueError):
        TissueModel(kind="series_rc")


def test_zero_excitation_reads_zero():
    reading = dft_measure(150 + 0j, 30_000.0, SweepConfig(excitation_amplitude=0.0))
    assert (reading.real, reading.imag) == (0, 0)


def test_magnitude_matches_time_domain_oracle(sweep):
    f = 45_000.0
    z = 180 - 60j
    samples = sample_response([z], [f], sweep)[0]
    n = sweep.samples_per_dft
    k = max(1, round(f * n / sweep.sample_rate_hz))
    real = sum(samples[i] * math.cos(2 * math.pi * k * i / n) for i in range(n))
    imag = sum(samples[i] * math.sin(2 * math.pi * k * i / n) for i in range(n))
    reading = dft_measure(z, f, sweep)
    assert abs(reading.real - real) <= 0.5 + 1e-6
    assert abs(reading.imag - imag) <= 0.5 + 1e-6
    assert reading.magnitude == pytest.approx(math.hypot(real, imag), abs=1.0)


def test_doubling_impedance_halves_magnitude(sweep):
    a = dft_measure(120 + 0j, 20_000.0, sweep)
    b = dft_measure(240 + 0j, 20_000.0, sweep)
    assert b.magnitude / a.magnitude == pytest.approx(0.5, rel=2e-3)


def test_clipping_is_reported(sweep):
    with pytest.raises(ClippingError):
        dft_measure(20 + 0j, 20_000.0, sweep)


def test_calibration_self_consistency(sweep):
    cal = calibrate(200.0, sweep)
    assert np.all(cal.gain_factors > 0)
    for f in sweep_frequencies(sweep):
        magnitude, phase = impedance_from_reading(dft_measure(200 + 0j, f, sweep), cal)
        assert magnitude == pytest.approx(200.0, rel=1e-3)
        assert abs(phase) < math.radians(0.1)


def test_reading_equal_to_calibration_gives_reference(sweep):
    cal = calibrate(200.0, sweep)
    reading = dft_measure(200 + 0j, sweep.start_hz, sweep)
    magnitude, _ = impedance_from_reading(reading, cal)
    assert magnitude == pytest.approx(200.0, rel=1e-12)


def test_three_four_five_magnitude():
    assert DftReading(1000.0, 3, 4).magnitude == 5.0


def test_resistor_recovered_after_calibration(sweep):
    cal = calibrate(200.0, sweep)
    for f in sweep_frequencies(sweep):
        magnitude, phase = impedance_from_reading(dft_measure(100 + 0j, f, sweep), cal)
        assert magnitude == pytest.approx(100.0, rel=5e-3)
        assert abs(math.tan(phase)) < 0.01


def test_series_rc_roundtrip_over_sweep(sweep):
    cal = calibrate(200.0, sweep)
    load = TissueModel(kind="series_rc", r0=150.0, capacitance=1e-7)
    freqs = sweep_frequencies(sweep)
    z = [impedance_of(load, f) for f in freqs]
    for true_z, reading in zip(z, measure_sweep(z, freqs, sweep)):
        magnitude, phase = impedance_from_reading(reading, cal)
        assert magnitude == pytest.approx(abs(true_z), rel=5e-3)
        assert abs(math.degrees(phase - np.angle(true_z))) < 1.0


def test_series_rc_phase_at_unit_omega_rc():
    # f where omega * R * C = 1 with R = 100 ohm, C = 100 nF
    f = 1.0 / (2 * math.pi * 100.0 * 1e-7)
    sweep = SweepConfig(start_hz=f, step_hz=0.0, points=1)
    cal = calibrate(200.0, sweep)
    z = impedance_of(TissueModel(kind="series_rc", r0=100.0, capacitance=1e-7), f)
    _, phase = impedance_from_reading(dft_measure(z, f, sweep), cal)
    assert math.degrees(phase) == pytest.approx(-45.0, abs=1.0)


def test_relay_scan_lexicographic():
    pairs = relay_scan(8)
    assert len(pairs) == 28
    assert len(set(pairs)) == 28
    assert pairs[0] == ElectrodePair(1, 2)
    assert pairs[-1] == ElectrodePair(7, 8)
    assert relay_scan(2) == [ElectrodePair(1, 2)]


def test_relay_schedule_one_pair_per_step():
    schedule = relay_schedule(relay_scan(8), 8)
    assert schedule.shape == (28, 8)
    assert np.all((schedule == 1).sum(axis=1) == 1)
    assert np.all((schedule == -1).sum(axis=1) == 1)


def test_relay_scan_adjacent_and_errors():
    assert relay_scan(4, "adjacent") == [ElectrodePair(1, 2), ElectrodePair(2, 3),
                                         ElectrodePair(3, 4), ElectrodePair(4, 1)]
    with pytest.raises(InvalidParameterError):
        relay_scan(1)
    with pytest.raises(InvalidParameterError):
        ElectrodePair(3, 3)


def test_instrument_log_format():
    text = instrument_log([DftReading(5000.0, 1200, -34), DftReading(10000.0, 9, 0)])
    assert text == "freq_hz,real,imag\n5000,1200,-34\n10000,9,0\n"


def test_generate_dataset_row_count_and_schema():
    cfg = SimulationConfig(participants_per_grade=[1, 1, 1, 1], patterns=1)
    sweep = SweepConfig()
    result = generate_dataset(cfg, sweep, seed=0)
    assert len(result.table) == 4 * 5 * 20
    assert result.table.header == ("exercise", "participant", "pattern", "affectation",
                                   *default_feature_cols(sweep))
    assert {row[3] for row in result.table.rows} == {"g0", "g1", "g2", "g3"}
    assert len(result.readings) == len(result.table) * sweep.points


def test_generate_dataset_deterministic():
    cfg = small_cohort(participant_spread=0.05)
    sweep = SweepConfig(points=4, noise_counts=2.0)
    a = generate_dataset(cfg, sweep, seed=9).table
    b = generate_dataset(cfg, sweep, seed=9).table
    c = generate_dataset(cfg, sweep, seed=10).table
    assert a.rows == b.rows
    assert a.rows != c.rows


def _mean_z_by_grade(table):
    by_grade = {}
    for row in table.rows:
        by_grade.setdefault(row[3], []).append(np.mean([float(v) for v in row[4:]]))
    return by_grade


def test_zero_severity_removes_grade_effect():
    cfg = small_cohort(severity_scale=0.0, participant_spread=0.0, repetition_jitter=0.0)
    by_grade = _mean_z_by_grade(generate_dataset(cfg, SweepConfig(points=4), seed=1).table)
    reference = sorted(by_grade["g0"])
    for grade in ("g1", "g2", "g3"):
        assert sorted(by_grade[grade]) == reference


def test_mean_impedance_increases_with_grade():
    cfg = small_cohort(severity_scale=0.5)
    by_grade = _mean_z_by_grade(generate_dataset(cfg, SweepConfig(points=4), seed=2).table)
    means = [np.mean(by_grade[f"g{g}"]) for g in range(4)]
    assert all(a < b for a, b in zip(means, means[1:]))
    # a threshold on mean |Z| separates g0 from g3
    assert max(by_grade["g0"]) < min(by_grade["g3"])


def test_phase_columns():
    sweep = SweepConfig(points=3)
    result = generate_dataset(small_cohort(include_phase=True), sweep, seed=0)
    assert result.table.header[-3:] == ("phase_5000", "phase_10000", "phase_15000")
    assert len(result.table.header) == 4 + 6


def test_too_many_patterns():
    with pytest.raises(InvalidParameterError):
        generate_dataset(small_cohort(patterns=29), SweepConfig(points=2), seed=0)


def test_mapping_must_cover_simulated_columns():
    sweep = SweepConfig(points=3)
    partial = ColumnMapping(feature_cols=default_feature_cols(sweep))
    with pytest.raises(InvalidParameterError) as exc:
        generate_dataset(small_cohort(include_phase=True), sweep, seed=0, mapping=partial)
    assert "phase_5000" in str(exc.value)

    full = ColumnMapping(feature_cols=default_feature_cols(sweep, include_phase=True))
    result = generate_dataset(small_cohort(include_phase=True), sweep, seed=0, mapping=full)
    assert result.table.header[4:] == tuple(full.feature_cols)
