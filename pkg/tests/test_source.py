import math

import numpy as np
import pytest
from scipy import stats

from qss4.quantum import NoiseModel, OutcomeDistribution, make_psi4_minus, outcome_distribution
from qss4.source import (
    PartySchedule,
    RoundRecord,
    SessionStreams,
    SourceConfig,
    read_records,
    run_session,
    sample_window,
    write_records,
)

SCHEDULES = tuple(PartySchedule(phases=(0.0, math.pi / 2)) for _ in range(4))


def _session(n, seed=0, config=None, visibility=1.0, schedules=SCHEDULES):
    return run_session(
        n,
        schedules,
        make_psi4_minus(),
        NoiseModel(visibility=visibility),
        config or SourceConfig(),
        SessionStreams.from_seed(seed),
    )


def test_config_validation():
    with pytest.raises(ValueError):
        SourceConfig(four_photon_rate=-1)
    with pytest.raises(ValueError):
        SourceConfig(window_seconds=0)
    with pytest.raises(ValueError):
        SourceConfig(detector_efficiency=1.5)
    assert SourceConfig.lab_preset().detector_efficiency == 0.4


def test_round_record_consistency():
    with pytest.raises(ValueError):
        RoundRecord(0, (0, 0, 0, 0), (0.0,) * 4, detected=True, outcome_bits=None)
    with pytest.raises(ValueError):
        RoundRecord(0, (0, 0, 0, 0), (0.0,) * 4, detected=False, outcome_bits=(0, 0, 1, 1))


def test_schedule_override():
    sched = PartySchedule(
        phases=(1.0, 2.0), override_phases=(3.0, 4.0), override_every=5
    )
    assert sched.round_phases(0) == (3.0, 4.0)
    assert sched.round_phases(1) == (1.0, 2.0)
    assert sched.round_phases(10) == (3.0, 4.0)
    with pytest.raises(ValueError):
        PartySchedule(phases=(1.0, 2.0), override_every=5)


def test_sample_window_zero_rate():
    rng = np.random.default_rng(0)
    dist = outcome_distribution(make_psi4_minus(), (0.0,) * 4)
    config = SourceConfig(four_photon_rate=0.0)
    assert all(sample_window(config, dist, rng) is None for _ in range(20))


def test_sample_window_point_mass():
    rng = np.random.default_rng(1)
    probs = np.zeros(16)
    probs[0b0011] = 1.0
    dist = OutcomeDistribution(probs)
    config = SourceConfig(four_photon_rate=50.0)
    outcomes = [sample_window(config, dist, rng) for _ in range(50)]
    assert all(o == (0, 0, 1, 1) for o in outcomes)


def test_sample_window_detection_rate():
    rng = np.random.default_rng(2)
    dist = outcome_distribution(make_psi4_minus(), (0.0,) * 4)
    config = SourceConfig(four_photon_rate=0.4)
    n = 120_000
    hits = sum(sample_window(config, dist, rng) is not None for _ in range(n))
    p = 1 - math.exp(-0.4)
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) < 3 * sigma


def test_session_deterministic():
    a = _session(512, seed=42)
    b = _session(512, seed=42)
    assert a == b
    c = _session(512, seed=43)
    assert a != c


def test_party_stream_reproducible_in_isolation():
    records = _session(200, seed=9)
    solo = SessionStreams.party_stream(9, 2).integers(0, 2, 200)
    assert [r.labels[2] for r in records] == solo.tolist()


def test_detection_statistics_with_efficiency():
    config = SourceConfig(four_photon_rate=0.7, detector_efficiency=0.8)
    records = _session(60_000, seed=5, config=config)
    detected = sum(r.detected for r in records)
    p = (1 - math.exp(-0.7)) * 0.8**4
    sigma = math.sqrt(p * (1 - p) * len(records))
    assert abs(detected - p * len(records)) < 3 * sigma


def test_outcome_marginal_chisquare():
    config = SourceConfig(four_photon_rate=4.0)
    schedules = tuple(PartySchedule(phases=(0.0, 0.0)) for _ in range(4))
    records = [r for r in _session(40_000, seed=6, config=config, schedules=schedules) if r.detected]
    dist = outcome_distribution(make_psi4_minus(), (0.0,) * 4)
    counts = np.zeros(16)
    for r in records:
        idx = (r.outcome_bits[0] << 3) | (r.outcome_bits[1] << 2) | (r.outcome_bits[2] << 1) | r.outcome_bits[3]
        counts[idx] += 1
    support = dist.probs > 1e-12
    assert counts[~support].sum() == 0
    expected = dist.probs[support] * counts.sum()
    _, p_value = stats.chisquare(counts[support], expected)
    assert p_value > 0.001


def test_count_all_mode_yields_extra_records():
    config = SourceConfig(four_photon_rate=2.0, first_event_only=False)
    records = _session(5000, seed=7, config=config)
    assert len(records) > 5000
    indices = [r.round_index for r in records]
    assert indices == sorted(indices)
    detected = sum(r.detected for r in records)
    expect = 2.0 * 5000
    assert abs(detected - expect) < 3 * math.sqrt(expect)
    # undetected windows still produce exactly one placeholder record
    seen = {}
    for r in records:
        seen.setdefault(r.round_index, []).append(r.detected)
    for flags in seen.values():
        if len(flags) > 1:
            assert all(flags)


def test_record_file_roundtrip(tmp_path):
    records = _session(300, seed=8, config=SourceConfig(four_photon_rate=1.0))
    path = tmp_path / "session.records"
    write_records(records, path)
    assert read_records(path) == records


def test_record_file_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.records"
    path.write_text("nope\n")
    with pytest.raises(ValueError, match="header"):
        read_records(path)
