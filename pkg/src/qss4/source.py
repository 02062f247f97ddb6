"""Stochastic model of the pulsed four-photon source and detection.

Emission is Poisson in fixed acquisition windows; by default only the
first four-photon event of a window is kept, and each of its four photons
independently survives the detector with the configured efficiency. All
randomness flows through named, seed-derived streams so a session is
bit-reproducible and each party's basis sequence can be regenerated in
isolation.

Record files are line oriented, one round per line, comma separated:

    round_index,label_a,label_b,label_c,label_d,
    phi_a,phi_b,phi_c,phi_d,detected,bits

with phases printed via repr (exact float round trip) and ``bits`` either
four characters of 0/1 or ``-`` for an undetected round.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .quantum import (
    NoiseModel,
    OutcomeDistribution,
    PureState,
    make_psi4_minus,
    outcome_distribution,
    pattern_bits,
)

#: Typical silicon avalanche photodiode efficiency at the source
#: wavelength, usable via :meth:`SourceConfig.lab_preset`.
LAB_DETECTOR_EFFICIENCY = 0.4


@dataclass(frozen=True)
class SourceConfig:
    """Source and acquisition parameters.

    ``first_event_only`` keeps at most one event per window (the default
    acquisition rule); switching it off counts every surviving event in a
    window as an additional round record with the same window index.
    ``dead_time_seconds`` lengthens the effective per-round wall time in
    throughput accounting only; it never affects statistics.
    """

    four_photon_rate: float = 0.4
    window_seconds: float = 1.0
    first_event_only: bool = True
    detector_efficiency: float = 1.0
    dead_time_seconds: float = 0.0

    def __post_init__(self) -> None:
        if self.four_photon_rate < 0:
            raise ValueError("four_photon_rate must be >= 0")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be > 0")
        if not 0.0 <= self.detector_efficiency <= 1.0:
            raise ValueError("detector_efficiency must lie in [0, 1]")
        if self.dead_time_seconds < 0:
            raise ValueError("dead_time_seconds must be >= 0")

    @classmethod
    def lab_preset(cls, **overrides) -> "SourceConfig":
        """Defaults with the measured 40% detector efficiency."""
        params = {"detector_efficiency": LAB_DETECTOR_EFFICIENCY}
        params.update(overrides)
        return cls(**params)

    @property
    def mean_events_per_window(self) -> float:
        return self.four_photon_rate * self.window_seconds

    def session_seconds(self, n_windows: int) -> float:
        """Wall time of a session, including per-round analyzer dead time."""
        return n_windows * (self.window_seconds + self.dead_time_seconds)


@dataclass(frozen=True, slots=True)
class RoundRecord:
    """One acquisition window (or one extra same-window event).

    ``labels`` are the per-party basis choices (0 or 1 into that party's
    two-phase set for the round), ``phases`` the resolved analyzer phases.
    ``outcome_bits`` is present exactly when ``detected`` is set.
    """

    round_index: int
    labels: tuple[int, int, int, int]
    phases: tuple[float, float, float, float]
    detected: bool
    outcome_bits: tuple[int, int, int, int] | None = None

    def __post_init__(self) -> None:
        if self.detected != (self.outcome_bits is not None):
            raise ValueError("outcome_bits must be present iff detected")


@dataclass(frozen=True)
class PartySchedule:
    """The two-phase set one party draws from, with an optional periodic override.

    On rounds where ``round_index % override_every == 0`` the party draws
    its basis label against ``override_phases`` instead of ``phases``.
    """

    phases: tuple[float, float]
    override_phases: tuple[float, float] | None = None
    override_every: int = 0

    def __post_init__(self) -> None:
        if (self.override_every > 0) != (self.override_phases is not None):
            raise ValueError("override_phases and override_every must be set together")

    def is_override_round(self, round_index: int) -> bool:
        return self.override_every > 0 and round_index % self.override_every == 0

    def round_phases(self, round_index: int) -> tuple[float, float]:
        if self.is_override_round(round_index):
            return self.override_phases  # type: ignore[return-value]
        return self.phases


@dataclass
class SessionStreams:
    """Independent seeded streams for the four parties, source, adversary, protocol."""

    parties: tuple[np.random.Generator, np.random.Generator, np.random.Generator, np.random.Generator]
    source: np.random.Generator
    adversary: np.random.Generator
    protocol: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "SessionStreams":
        children = np.random.SeedSequence(seed).spawn(7)
        gens = [np.random.default_rng(child) for child in children]
        return cls(parties=tuple(gens[:4]), source=gens[4], adversary=gens[5], protocol=gens[6])

    @staticmethod
    def party_stream(seed: int, party_index: int) -> np.random.Generator:
        """Regenerate a single party's stream without touching the others."""
        children = np.random.SeedSequence(seed).spawn(7)
        return np.random.default_rng(children[party_index])


def sample_window(
    config: SourceConfig, dist: OutcomeDistribution, rng: np.random.Generator
) -> tuple[int, int, int, int] | None:
    """Draw one acquisition window under the first-event rule.

    Draws the Poisson event count; with no event, or with any photon of
    the first event lost to detector inefficiency, the window yields no
    detection. Otherwise one outcome is sampled from ``dist``.
    """
    n_events = int(rng.poisson(config.mean_events_per_window))
    if n_events == 0:
        return None
    survival = rng.random(4)
    if np.any(survival >= config.detector_efficiency):
        return None
    u = rng.random()
    idx = int(np.searchsorted(dist.cdf(), u, side="right"))
    return pattern_bits(min(idx, 15))


class _DistributionCache:
    """Outcome CDFs keyed by (state key, phase tuple); states keyed by Eve's path."""

    def __init__(self, base_state: PureState, noise: NoiseModel):
        self.noise = noise
        self.states: dict[tuple, PureState] = {(): base_state}
        self.branch: dict[tuple, tuple[float, tuple, tuple]] = {}
        self.cdfs: dict[tuple, np.ndarray] = {}

    def cdf(self, state_key: tuple, phases: tuple) -> np.ndarray:
        key = (state_key, phases)
        found = self.cdfs.get(key)
        if found is None:
            dist = outcome_distribution(self.states[state_key], phases, self.noise)
            found = dist.cdf()
            self.cdfs[key] = found
        return found

    def collapse_branch(self, state_key: tuple, mode_axis: int, phi: float) -> tuple[float, tuple, tuple]:
        """Probability of the +1 branch and the child state keys for both branches."""
        from .quantum import collapse_after_single_mode_measurement

        key = (state_key, mode_axis, phi)
        found = self.branch.get(key)
        if found is None:
            state = self.states[state_key]
            p_plus, plus_state = collapse_after_single_mode_measurement(state, mode_axis, phi, +1)
            _, minus_state = collapse_after_single_mode_measurement(state, mode_axis, phi, -1)
            plus_key = state_key + ((mode_axis, phi, +1),)
            minus_key = state_key + ((mode_axis, phi, -1),)
            if plus_state is not None:
                self.states[plus_key] = plus_state
            if minus_state is not None:
                self.states[minus_key] = minus_state
            found = (p_plus, plus_key if plus_state is not None else None,
                     minus_key if minus_state is not None else None)
            self.branch[key] = found
        return found


def _eve_state_key(
    cache: _DistributionCache,
    attack,
    rng: np.random.Generator,
) -> tuple:
    """Sample Eve's per-mode basis and outcome for one attacked round."""
    from .quantum import mode_axis as _axis

    key: tuple = ()
    for mode in attack.attacked_modes:
        axis = _axis(mode)
        phi = attack.eve_bases[int(rng.integers(len(attack.eve_bases)))]
        p_plus, plus_key, minus_key = cache.collapse_branch(key, axis, phi)
        take_plus = rng.random() < p_plus
        nxt = plus_key if take_plus else minus_key
        if nxt is None:
            nxt = minus_key if take_plus else plus_key
        key = nxt
    return key


def run_session(
    n_windows: int,
    schedules: Sequence[PartySchedule],
    state: PureState | None,
    noise: NoiseModel,
    config: SourceConfig,
    streams: SessionStreams | int,
    first_round_index: int = 0,
) -> list[RoundRecord]:
    """Simulate ``n_windows`` acquisition windows and log one record per round.

    Basis labels come from the per-party streams, event counts and
    outcomes from the source stream, attack randomness (round selection,
    Eve's bases and outcomes) from the adversary stream. Identical seeds
    and configuration reproduce the record list bit for bit.
    """
    if n_windows < 0:
        raise ValueError("n_windows must be >= 0")
    if len(schedules) != 4:
        raise ValueError("need one schedule per party")
    if isinstance(streams, int):
        streams = SessionStreams.from_seed(streams)
    if state is None:
        state = make_psi4_minus()
    if n_windows == 0:
        return []

    round_indices = np.arange(first_round_index, first_round_index + n_windows)
    labels = np.stack([streams.parties[i].integers(0, 2, n_windows) for i in range(4)])
    phases = np.empty((4, n_windows), dtype=np.float64)
    for i, sched in enumerate(schedules):
        base = np.asarray(sched.phases, dtype=np.float64)
        phases[i] = base[labels[i]]
        if sched.override_every > 0:
            mask = (round_indices % sched.override_every) == 0
            over = np.asarray(sched.override_phases, dtype=np.float64)
            phases[i, mask] = over[labels[i, mask]]

    counts = streams.source.poisson(config.mean_events_per_window, n_windows)

    attack = noise.attack
    attacking = attack is not None and attack.attack_fraction > 0 and attack.attacked_modes
    if attacking:
        attacked = streams.adversary.random(n_windows) < attack.attack_fraction
    else:
        attacked = np.zeros(n_windows, dtype=bool)

    cache = _DistributionCache(state, noise)

    if config.first_event_only:
        survive = np.all(
            streams.source.random((n_windows, 4)) < config.detector_efficiency, axis=1
        )
        detected = (counts > 0) & survive
        uniforms = streams.source.random(n_windows)
        outcome_idx = np.full(n_windows, -1, dtype=np.int64)

        plain = detected & ~attacked
        for window in np.nonzero(plain)[0]:
            phase_key = tuple(phases[:, window])
            cdf = cache.cdf((), phase_key)
            outcome_idx[window] = np.searchsorted(cdf, uniforms[window], side="right")
        for window in np.nonzero(detected & attacked)[0]:
            key = _eve_state_key(cache, attack, streams.adversary)
            phase_key = tuple(phases[:, window])
            cdf = cache.cdf(key, phase_key)
            outcome_idx[window] = np.searchsorted(cdf, uniforms[window], side="right")

        records = []
        for w in range(n_windows):
            if detected[w]:
                bits = pattern_bits(min(int(outcome_idx[w]), 15))
            else:
                bits = None
            records.append(
                RoundRecord(
                    round_index=int(round_indices[w]),
                    labels=tuple(int(v) for v in labels[:, w]),
                    phases=tuple(float(v) for v in phases[:, w]),
                    detected=bool(detected[w]),
                    outcome_bits=bits,
                )
            )
        return records

    # count-all mode: every surviving event in a window becomes a record
    total_events = int(counts.sum())
    survive = np.all(
        streams.source.random((total_events, 4)) < config.detector_efficiency, axis=1
    )
    uniforms = streams.source.random(total_events)
    records = []
    event = 0
    for w in range(n_windows):
        window_bits: list[tuple[int, int, int, int]] = []
        phase_key = tuple(phases[:, w])
        for _ in range(int(counts[w])):
            if survive[event]:
                if attacked[w]:
                    key = _eve_state_key(cache, attack, streams.adversary)
                else:
                    key = ()
                cdf = cache.cdf(key, phase_key)
                idx = int(np.searchsorted(cdf, uniforms[event], side="right"))
                window_bits.append(pattern_bits(min(idx, 15)))
            event += 1
        base = dict(
            round_index=int(round_indices[w]),
            labels=tuple(int(v) for v in labels[:, w]),
            phases=tuple(float(v) for v in phases[:, w]),
        )
        if not window_bits:
            records.append(RoundRecord(detected=False, **base))
        else:
            for bits in window_bits:
                records.append(RoundRecord(detected=True, outcome_bits=bits, **base))
    return records


RECORD_HEADER = (
    "round_index,label_a,label_b,label_c,label_d,"
    "phi_a,phi_b,phi_c,phi_d,detected,bits"
)


def write_records(records: Sequence[RoundRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RECORD_HEADER + "\n")
        for rec in records:
            bits = "".join(str(b) for b in rec.outcome_bits) if rec.detected else "-"
            fields = (
                [str(rec.round_index)]
                + [str(l) for l in rec.labels]
                + [repr(p) for p in rec.phases]
                + [str(int(rec.detected)), bits]
            )
            fh.write(",".join(fields) + "\n")


def read_records(path) -> list[RoundRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != RECORD_HEADER:
            raise ValueError(f"unexpected record file header: {header!r}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 11:
                raise ValueError(f"bad record line: {line!r}")
            detected = bool(int(parts[9]))
            bits = None
            if detected:
                bits = tuple(int(ch) for ch in parts[10])
            records.append(
                RoundRecord(
                    round_index=int(parts[0]),
                    labels=tuple(int(v) for v in parts[1:5]),
                    phases=tuple(float(v) for v in parts[5:9]),
                    detected=detected,
                    outcome_bits=bits,
                )
            )
    return records
