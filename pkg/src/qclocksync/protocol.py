"""Alice/Bob state machines and protocol orchestration.

The orchestrator is a single-threaded deterministic event loop: events are
committed in (time, sequence) order, so identical seeds and configuration
reproduce identical transcripts bit for bit. Party logic never reads the
other party's configuration; hidden truths (clock offsets, the basis-phase
offset) are consulted only by the scoring helpers at the bottom, which a
real deployment would not have.

Two independent rng streams are used: quantum draws (collapse outcomes and
measurement outcomes) and channel draws (loss/jitter). Holding the quantum
stream fixed while varying the channel model leaves every measurement
outcome bit-identical, which is the channel-independence property under
test.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import estimation
from .channels import ChannelModel, deliver
from .ensemble import (
    Ensemble,
    PopulationSeries,
    SamplingSchedule,
    SubensembleHandle,
    alice_collapse_all,
    sample_batch,
    select_subensemble,
)
from .errors import BudgetError, ConfigError, InconclusiveError, ProtocolOrderError
from .estimation import BeatSeries, PhaseEstimate
from .quantum import ClockSpecies, circular_difference, normalize_phase


@dataclass
class PartyConfig:
    """One party's local configuration.

    basis_phase_per_species maps species name -> equatorial phase of that
    party's |pos> choice. Within one party the settings are locked at
    configuration time; the inter-party difference of the locks is the
    (unknown) offset the two-frequency protocol is immune to.
    local_clock_offset is hidden truth: the party's clock reads
    global time + offset. Only the scoring helpers may look at it.
    """

    party_id: str  # 'A' or 'B'
    basis_phase_per_species: dict[str, float]
    local_clock_offset: float = 0.0

    def __post_init__(self):
        if self.party_id not in ("A", "B"):
            raise ValueError("party_id must be 'A' or 'B'")
        self.basis_phase_per_species = {
            k: normalize_phase(v) for k, v in self.basis_phase_per_species.items()
        }

    def phase_for(self, species: ClockSpecies) -> float:
        return self.basis_phase_per_species[species.name]

    def to_global(self, local_time: float) -> float:
        return local_time - self.local_clock_offset

    def to_local(self, global_time: float) -> float:
        return global_time + self.local_clock_offset


@dataclass(frozen=True)
class ClassicalMessage:
    """A label broadcast. The payload carries labels only, never timestamps."""

    sender: str
    species: str
    labels: tuple[int, ...]
    send_time: float
    deliver_time: float

    def __post_init__(self):
        if self.deliver_time < self.send_time:
            raise ValueError("deliver_time must be >= send_time")


@dataclass(frozen=True)
class TimeOriginConfig:
    """Two-frequency configuration for the common-time-origin construction."""

    omega1: float
    delta_omega: float
    protocol_duration_T: float

    def __post_init__(self):
        if self.omega1 <= 0.0 or self.delta_omega <= 0.0:
            raise ConfigError("omega1 and delta_omega must be positive")
        if self.protocol_duration_T <= 0.0:
            raise ConfigError("protocol_duration_T must be positive")
        if not self.delta_omega * self.protocol_duration_T < math.pi / 2.0:
            raise ConfigError(
                f"delta_omega * T = {self.delta_omega * self.protocol_duration_T:.6g} "
                "must be strictly below pi/2 for a unique common time origin"
            )

    @property
    def omega2(self) -> float:
        return self.omega1 + self.delta_omega


@dataclass
class ProtocolSchedules:
    """Sampling plans in party-local time, plus Alice's collapse/send instants."""

    alice: SamplingSchedule
    bob: SamplingSchedule
    collapse_time: float = 0.0  # Alice-local
    send_time: float | None = None  # Alice-local; defaults to collapse_time

    def __post_init__(self):
        if self.send_time is None:
            self.send_time = self.collapse_time
        if self.send_time < self.collapse_time:
            raise ProtocolOrderError("labels cannot be sent before the collapse")
        if self.alice.times[0] < self.collapse_time:
            raise ProtocolOrderError("Alice cannot sample before her collapse")


class Transcript:
    """Ordered event log of a run, serializable as line-delimited JSON."""

    def __init__(self):
        self.records: list[dict] = []
        self._seq = 0

    def record(self, kind: str, time: float, **fields) -> None:
        rec = {"seq": self._seq, "time": float(time), "kind": kind}
        rec.update(fields)
        self.records.append(rec)
        self._seq += 1

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    @staticmethod
    def parse_jsonl(text: str) -> list[dict]:
        return [json.loads(line) for line in text.splitlines() if line.strip()]


@dataclass
class SpeciesOutcome:
    """Per-species raw series and phase estimates for both parties."""

    species: ClockSpecies
    n_type_i: int = 0
    n_type_ii: int = 0
    alice_series: PopulationSeries | None = None
    bob_series: PopulationSeries | None = None
    alice_phase: PhaseEstimate | None = None
    bob_phase: PhaseEstimate | None = None


@dataclass
class SyncResult:
    """Deliverable of a protocol run.

    sync_error (seconds) is populated only by the scoring helpers with
    god's-eye access to hidden truth; party logic never sees it, and it is
    never emitted from a partial (no_sync / inconclusive) run.
    """

    status: str  # 'ok' | 'no_sync' | 'inconclusive'
    reason: str | None = None
    species_outcomes: dict[str, SpeciesOutcome] = field(default_factory=dict)
    envelope_a: PhaseEstimate | None = None
    envelope_b: PhaseEstimate | None = None
    beats_a: BeatSeries | None = None
    beats_b: BeatSeries | None = None
    t_origin_a: float | None = None
    t_origin_sigma_a: float | None = None
    t_origin_b: float | None = None
    t_origin_sigma_b: float | None = None
    sync_error: float | None = None

    def to_dict(self) -> dict:
        def est(e: PhaseEstimate | None):
            if e is None:
                return None
            return {"phase": e.phase, "sigma": e.sigma,
                    "n_samples_used": e.n_samples_used, "residual": e.residual}

        species = {}
        for name, out in sorted(self.species_outcomes.items()):
            species[name] = {
                "omega": out.species.omega,
                "n_type_i": out.n_type_i,
                "n_type_ii": out.n_type_ii,
                "alice_phase": est(out.alice_phase),
                "bob_phase": est(out.bob_phase),
            }
        return {
            "status": self.status,
            "reason": self.reason,
            "species": species,
            "envelope_a": est(self.envelope_a),
            "envelope_b": est(self.envelope_b),
            "t_origin_a": self.t_origin_a,
            "t_origin_sigma_a": self.t_origin_sigma_a,
            "t_origin_b": self.t_origin_b,
            "t_origin_sigma_b": self.t_origin_sigma_b,
            "sync_error": self.sync_error,
        }


def broadcast_labels(channel: ChannelModel, sender: PartyConfig, species: ClockSpecies,
                     labels, send_time_global: float, channel_rng: np.random.Generator,
                     transcript: Transcript | None = None) -> ClassicalMessage | None:
    """Send a label list over the channel; returns the message or None if lost."""
    labels = tuple(int(x) for x in labels)
    deliver_time = deliver(channel, send_time_global, channel_rng)
    if transcript is not None:
        transcript.record("send", send_time_global, sender=sender.party_id,
                          species=species.name, n_labels=len(labels))
    if deliver_time is None:
        if transcript is not None:
            transcript.record("lost", send_time_global, sender=sender.party_id,
                              species=species.name)
        return None
    return ClassicalMessage(sender=sender.party_id, species=species.name, labels=labels,
                            send_time=send_time_global, deliver_time=deliver_time)


class _EventQueue:
    """Min-heap keyed by (time, kind priority, sequence).

    The kind priority fixes the semantics of simultaneous events (a collapse
    precedes sampling at the same instant, a delivery precedes Bob's
    measurement at the same instant); the sequence number makes the remaining
    order deterministic.
    """

    _PRIORITY = {"collapse": 0, "send": 1, "deliver": 2, "alice_sample": 3,
                 "bob_sample": 4}

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, time: float, kind: str, payload=None) -> None:
        heapq.heappush(self._heap,
                       (float(time), self._PRIORITY[kind], self._seq, kind, payload))
        self._seq += 1

    def pop(self):
        time, _prio, seq, kind, payload = heapq.heappop(self._heap)
        return time, seq, kind, payload

    def __bool__(self) -> bool:
        return bool(self._heap)


def run_single_frequency(ensemble: Ensemble, alice: PartyConfig, bob: PartyConfig,
                         channel: ChannelModel, schedules: ProtocolSchedules,
                         quantum_rng: np.random.Generator,
                         channel_rng: np.random.Generator,
                         transcript: Transcript | None = None) -> SyncResult:
    """One full single-frequency synchronization run.

    Flow: Alice collapses every pair at her t=0, samples her Type-I
    subensemble on her schedule, and broadcasts the Type-I labels. Bob
    selects his Type-II subensemble once the message is delivered and samples
    it on his (absolute, pre-agreed) schedule; scheduled times that precede
    delivery cannot be measured and make the run inconclusive. Both parties
    fit their clock phase against their own local timestamps.
    """
    species = ensemble.species
    phi_a = alice.phase_for(species)
    phi_b = bob.phase_for(species)

    t0_g = alice.to_global(schedules.collapse_time)
    send_g = alice.to_global(schedules.send_time)
    alice_times_g = [alice.to_global(t) for t in schedules.alice.times]
    bob_times_g = [bob.to_global(t) for t in schedules.bob.times]

    queue = _EventQueue()
    queue.push(t0_g, "collapse")
    queue.push(send_g, "send")
    for i, t in enumerate(alice_times_g):
        queue.push(t, "alice_sample", i)
    for i, t in enumerate(bob_times_g):
        queue.push(t, "bob_sample", i)

    outcome = SpeciesOutcome(species=species)
    alice_handle: SubensembleHandle | None = None
    bob_handle: SubensembleHandle | None = None
    type_i_labels = None
    lost = False
    missed = False
    budget_hit = False
    a_counts: list[tuple[float, int, int]] = []
    b_counts: list[tuple[float, int, int]] = []

    while queue:
        t, _seq, kind, payload = queue.pop()
        if kind == "collapse":
            type_i_labels, type_ii_labels = alice_collapse_all(ensemble, t, phi_a, quantum_rng)
            outcome.n_type_i = int(type_i_labels.shape[0])
            outcome.n_type_ii = int(type_ii_labels.shape[0])
            alice_handle = select_subensemble(ensemble, type_i_labels, "type_i")
            if transcript is not None:
                transcript.record("collapse", t, species=species.name,
                                  n_type_i=outcome.n_type_i, n_type_ii=outcome.n_type_ii)
        elif kind == "send":
            if type_i_labels is None:
                raise ProtocolOrderError("labels cannot be broadcast before the collapse")
            msg = broadcast_labels(channel, alice, species, type_i_labels, t,
                                   channel_rng, transcript)
            if msg is None:
                lost = True
            else:
                queue.push(msg.deliver_time, "deliver", msg)
        elif kind == "deliver":
            msg = payload
            # Bob derives his Type-II subset as the complement of the broadcast labels.
            bob_type_ii = np.setdiff1d(ensemble.labels, np.asarray(msg.labels, dtype=np.int64))
            bob_handle = select_subensemble(ensemble, bob_type_ii, "type_ii")
            if transcript is not None:
                transcript.record("deliver", t, species=species.name,
                                  n_labels=len(msg.labels))
        elif kind == "alice_sample":
            try:
                n_pos, n = sample_batch(alice_handle, t, schedules.alice.batch_size,
                                        "A", phi_a, quantum_rng)
            except BudgetError:
                budget_hit = True
                continue
            a_counts.append((t, n_pos, n))
            if transcript is not None:
                transcript.record("sample", t, party="A", species=species.name,
                                  count_pos=n_pos, batch_size=n)
        elif kind == "bob_sample":
            if bob_handle is None:
                missed = True
                if transcript is not None and not lost:
                    transcript.record("missed_sample", t, party="B", species=species.name)
                continue
            try:
                n_pos, n = sample_batch(bob_handle, t, schedules.bob.batch_size,
                                        "B", phi_b, quantum_rng)
            except BudgetError:
                budget_hit = True
                continue
            b_counts.append((t, n_pos, n))
            if transcript is not None:
                transcript.record("sample", t, party="B", species=species.name,
                                  count_pos=n_pos, batch_size=n)

    def build_series(counts, party: PartyConfig) -> PopulationSeries | None:
        if not counts:
            return None
        times_g = [c[0] for c in counts]
        return PopulationSeries([party.to_local(t) for t in times_g],
                                [c[1] for c in counts],
                                [c[2] - c[1] for c in counts],
                                [c[2] for c in counts])

    outcome.alice_series = build_series(a_counts, alice)
    outcome.bob_series = build_series(b_counts, bob)
    if outcome.alice_series is not None and not budget_hit:
        outcome.alice_phase = estimation.estimate_phase(outcome.alice_series, species)

    result = SyncResult(status="ok", species_outcomes={species.name: outcome})
    if lost:
        result.status, result.reason = "no_sync", "label_message_lost"
        return result
    if missed:
        result.status, result.reason = "inconclusive", "bob_schedule_preceded_delivery"
        return result
    if budget_hit or outcome.bob_series is None:
        result.status, result.reason = "inconclusive", "budget_exhausted"
        return result
    outcome.bob_phase = estimation.estimate_phase(outcome.bob_series, species)
    return result


def run_two_frequency(ensembles: tuple[Ensemble, Ensemble], alice: PartyConfig,
                      bob: PartyConfig, channel: ChannelModel,
                      schedules: ProtocolSchedules,
                      quantum_rng: np.random.Generator,
                      channel_rng: np.random.Generator,
                      transcript: Transcript | None = None) -> SyncResult:
    """Duplicate the single-frequency protocol for two species and extract beats.

    Both parties sample both species on the same local time grid, form the
    per-time difference of the two empirical oscillation estimates, and fit
    the phase of the slow envelope factor, which is the basis-offset-immune
    synchronization observable.
    """
    ens1, ens2 = ensembles
    if ens1.species.omega == ens2.species.omega:
        raise ConfigError("two-frequency protocol needs two distinct frequencies")
    if ens1.species.name == ens2.species.name:
        raise ConfigError("two-frequency protocol needs two distinct species names")

    results = [
        run_single_frequency(ens, alice, bob, channel, schedules,
                             quantum_rng, channel_rng, transcript)
        for ens in (ens1, ens2)
    ]
    merged = SyncResult(status="ok")
    for r in results:
        merged.species_outcomes.update(r.species_outcomes)
    for bad_status in ("no_sync", "inconclusive"):
        for r in results:
            if r.status == bad_status:
                merged.status, merged.reason = bad_status, r.reason
                return merged

    w1, w2 = ens1.species.omega, ens2.species.omega
    out1 = merged.species_outcomes[ens1.species.name]
    out2 = merged.species_outcomes[ens2.species.name]
    try:
        merged.beats_a = estimation.beat_difference(out1.alice_series, out2.alice_series)
        merged.beats_b = estimation.beat_difference(out1.bob_series, out2.bob_series)
        merged.envelope_a = estimation.envelope_phase(merged.beats_a, w1, w2)
        merged.envelope_b = estimation.envelope_phase(merged.beats_b, w1, w2)
    except InconclusiveError as exc:
        merged.status, merged.reason = "inconclusive", str(exc)
    return merged


def establish_time_origin(config: TimeOriginConfig, ensembles: tuple[Ensemble, Ensemble],
                          alice: PartyConfig, bob: PartyConfig, channel: ChannelModel,
                          schedules: ProtocolSchedules,
                          quantum_rng: np.random.Generator,
                          channel_rng: np.random.Generator,
                          transcript: Transcript | None = None) -> SyncResult:
    """Common-time-origin construction from the first beat-envelope maximum.

    The duration constraint delta_omega * T < pi/2 is enforced by the config
    itself at load time; T bounds the phase-sync establishment, while beat
    monitoring continues until the first envelope maximum (near t = pi /
    delta_omega) is bracketed by the sampling window.
    """
    ens1, ens2 = ensembles
    for ens, want in ((ens1, config.omega1), (ens2, config.omega2)):
        if not math.isclose(ens.species.omega, want, rel_tol=1e-12):
            raise ConfigError(
                f"ensemble species omega {ens.species.omega} does not match "
                f"time-origin config omega {want}"
            )
    result = run_two_frequency(ensembles, alice, bob, channel, schedules,
                               quantum_rng, channel_rng, transcript)
    if result.status != "ok":
        return result
    w1, w2 = ens1.species.omega, ens2.species.omega
    try:
        result.t_origin_a, result.t_origin_sigma_a = estimation.first_envelope_maximum(
            result.beats_a, w1, w2)
        result.t_origin_b, result.t_origin_sigma_b = estimation.first_envelope_maximum(
            result.beats_b, w1, w2)
    except InconclusiveError as exc:
        result.status, result.reason = "inconclusive", str(exc)
    return result


# --------------------------------------------------------------------------
# Scoring harness: god's-eye access to hidden truth. Never called by party
# logic; sync_error is only ever attached to a completed ('ok') run.
# --------------------------------------------------------------------------

def configured_offset(alice: PartyConfig, bob: PartyConfig, species: ClockSpecies,
                      eta: float = 0.0) -> float:
    """Effective oscillation offset delta seen by Bob, from the hidden configs."""
    return normalize_phase(alice.phase_for(species) - bob.phase_for(species) - eta)


def score_single_frequency(result: SyncResult, alice: PartyConfig, bob: PartyConfig,
                           species: ClockSpecies, eta: float = 0.0) -> SyncResult:
    """Attach sync_error (seconds): residual of the measured phase difference
    against the truth implied by the hidden configuration."""
    if result.status != "ok":
        return result
    out = result.species_outcomes[species.name]
    observed = out.bob_phase.phase - out.alice_phase.phase
    clock_gap = bob.local_clock_offset - alice.local_clock_offset
    expected = configured_offset(alice, bob, species, eta) - species.omega * clock_gap
    result.sync_error = circular_difference(observed, expected) / species.omega
    return result


def score_envelope(result: SyncResult, alice: PartyConfig, bob: PartyConfig,
                   omega1: float, omega2: float) -> SyncResult:
    """Attach sync_error (seconds) from the envelope-phase comparison."""
    if result.status != "ok" or result.envelope_a is None or result.envelope_b is None:
        return result
    w_e = abs(omega1 - omega2) / 2.0
    clock_gap = bob.local_clock_offset - alice.local_clock_offset
    observed = result.envelope_b.phase - result.envelope_a.phase
    expected = -w_e * clock_gap
    result.sync_error = circular_difference(observed, expected, period=math.pi) / w_e
    return result


def score_time_origin(result: SyncResult, alice: PartyConfig, bob: PartyConfig) -> SyncResult:
    """Attach sync_error (seconds): disagreement of the two parties' time
    origins after removing the true clock gap."""
    if result.status != "ok" or result.t_origin_a is None or result.t_origin_b is None:
        return result
    clock_gap = bob.local_clock_offset - alice.local_clock_offset
    result.sync_error = (result.t_origin_b - result.t_origin_a) - clock_gap
    return result
