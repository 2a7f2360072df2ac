"""Scenario configuration: loading, validation, resolution, and execution.

A scenario is a human-editable YAML file. Running it writes a deterministic
artifact set into the output directory:

    config_echo.yaml   resolved configuration (reloads to an equivalent config)
    events.jsonl       ordered event transcript (line-delimited records)
    series_*.csv       per-party, per-species population series
    result.json        SyncResult (or baseline summary) as a structured record

Identical configuration and seeds produce byte-identical artifacts: no
wall-clock timestamps are ever written, and every file header documents the
seeds and package version instead.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .channels import SPEED_OF_LIGHT, ChannelModel, MediumModel, es_rms_error
from .ensemble import SamplingSchedule, create_ensemble
from .errors import ConfigError
from .protocol import (
    PartyConfig,
    ProtocolSchedules,
    SyncResult,
    TimeOriginConfig,
    Transcript,
    establish_time_origin,
    run_single_frequency,
    run_two_frequency,
    score_envelope,
    score_single_frequency,
    score_time_origin,
)
from .quantum import TWO_PI, ClockSpecies, normalize_phase

MODES = ("single_frequency", "two_frequency", "time_origin", "baseline_sweep")

EXIT_OK = 0
EXIT_INVALID_CONFIG = 1
EXIT_RUNTIME_ERROR = 2
EXIT_INCONCLUSIVE = 3


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding: which field, what constraint, what was seen."""

    field: str
    constraint: str
    observed: object
    severity: str = "error"  # 'error' blocks the run, 'warning' does not

    def to_dict(self) -> dict:
        return {"field": self.field, "constraint": self.constraint,
                "observed": self.observed, "severity": self.severity}


@dataclass
class ScenarioConfig:
    mode: str
    n_pairs: int = 0
    eta: float = 0.0
    species: list[dict] = field(default_factory=list)  # [{'name':..., 'omega':...}]
    alice_phase: float = 0.0
    bob_phase: float | None = None  # derived from delta when None
    delta: object = None  # float | 'random' | None
    alice_clock_offset: float = 0.0
    bob_clock_offset: float = 0.0
    schedule: dict = field(default_factory=dict)  # start, stop, n_points, batch_size
    bob_schedule: dict | None = None
    collapse_time: float = 0.0
    send_time: float | None = None
    channel: dict = field(default_factory=dict)
    time_origin: dict | None = None  # omega1, delta_omega, duration_T
    baseline: dict | None = None
    seeds: dict = field(default_factory=lambda: {"quantum": 0, "channel": 0, "delta": 0})
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.seeds = {"quantum": 0, "channel": 0, "delta": 0, **(cfg.seeds or {})}
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            out[name] = getattr(self, name)
        return out


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return ScenarioConfig.from_dict(raw)


def _schedule_from(d: dict) -> SamplingSchedule:
    times = np.linspace(float(d["start"]), float(d["stop"]), int(d["n_points"]))
    return SamplingSchedule(tuple(float(t) for t in times), int(d["batch_size"]))


def _budget_limit(n_pairs: int) -> float:
    # Subensemble size is Binomial(N, 1/2); allow expectation minus 5 sigma.
    return n_pairs / 2.0 - 2.5 * math.sqrt(n_pairs)


def validate_config(config: ScenarioConfig) -> list[Diagnostic]:
    """All load-time diagnostics; the config is runnable iff none has
    severity 'error'."""
    diags: list[Diagnostic] = []

    def err(field_, constraint, observed):
        diags.append(Diagnostic(field_, constraint, observed, "error"))

    def warn(field_, constraint, observed):
        diags.append(Diagnostic(field_, constraint, observed, "warning"))

    if config.mode not in MODES:
        err("mode", f"one of {MODES}", config.mode)
        return diags

    if config.mode == "baseline_sweep":
        base = config.baseline or {}
        for key, low in (("sigma_grid", 0.0), ("distance_grid", None)):
            grid = base.get(key)
            if not grid:
                err(f"baseline.{key}", "non-empty list required", grid)
                continue
            try:
                # YAML quietly treats exponents without a sign (1.0e6) as strings
                vals = [float(v) for v in grid]
            except (TypeError, ValueError):
                err(f"baseline.{key}", "numeric values required", grid)
                continue
            if (low is None and any(v <= 0 for v in vals)) or \
                    (low is not None and any(v < low for v in vals)):
                err(f"baseline.{key}", "values must be positive", grid)
        if int(base.get("n_trials", 0)) < 1:
            err("baseline.n_trials", ">= 1", base.get("n_trials"))
        return diags

    # quantum-protocol modes
    species = list(config.species)
    if config.mode == "time_origin":
        to = config.time_origin or {}
        for key in ("omega1", "delta_omega", "duration_T"):
            if key not in to:
                err(f"time_origin.{key}", "required", None)
        if not diags:
            if to["omega1"] <= 0:
                err("time_origin.omega1", "> 0", to["omega1"])
            if to["delta_omega"] <= 0:
                err("time_origin.delta_omega", "> 0", to["delta_omega"])
            prod = to.get("delta_omega", 0) * to.get("duration_T", 0)
            if not prod < math.pi / 2.0:
                err("time_origin", "delta_omega * duration_T < pi/2 (strict)", prod)
        species = _time_origin_species_dicts(to) if not diags else []
    else:
        want = 2 if config.mode == "two_frequency" else 1
        if len(species) != want:
            err("species", f"exactly {want} species for mode {config.mode}", len(species))
        for i, sp in enumerate(species):
            if sp.get("omega", 0) <= 0:
                err(f"species[{i}].omega", "> 0", sp.get("omega"))
        if want == 2 and len(species) == 2 and species[0].get("omega") == species[1].get("omega"):
            err("species", "two distinct frequencies required", species[0].get("omega"))

    if config.n_pairs < 1:
        err("n_pairs", ">= 1", config.n_pairs)

    for name, sched in (("schedule", config.schedule),
                        ("bob_schedule", config.bob_schedule or config.schedule)):
        missing = [k for k in ("start", "stop", "n_points", "batch_size") if k not in sched]
        if missing:
            err(name, f"missing keys {missing}", sched)
            continue
        if sched["n_points"] < 3:
            err(f"{name}.n_points", ">= 3 distinct times needed for a phase fit",
                sched["n_points"])
        if sched["stop"] <= sched["start"]:
            err(f"{name}.stop", "> start", (sched["start"], sched["stop"]))
        if sched["batch_size"] < 1:
            err(f"{name}.batch_size", ">= 1", sched["batch_size"])
        budget = sched.get("n_points", 0) * sched.get("batch_size", 0)
        if config.n_pairs >= 1 and budget > _budget_limit(config.n_pairs):
            err(f"{name}", "n_points * batch_size within N/2 minus 5-sigma margin",
                {"requested": budget, "limit": _budget_limit(config.n_pairs)})

    ch = config.channel or {}
    if ch.get("loss_probability", 0.0) >= 1.0:
        warn("channel.loss_probability", "< 1 (protocol will always abort)",
             ch.get("loss_probability"))
    if ch.get("base_delay", 0.0) < 0:
        err("channel.base_delay", ">= 0", ch.get("base_delay"))

    if (config.delta is not None and config.bob_phase is not None
            and not isinstance(config.delta, str)):
        # both may appear in an echoed config, but only if they agree
        implied = normalize_phase(config.alice_phase - float(config.delta))
        if abs(implied - normalize_phase(config.bob_phase)) > 1e-9:
            err("delta", "delta and bob_phase disagree (give one, or consistent values)",
                {"delta": config.delta, "bob_phase": config.bob_phase})
    if isinstance(config.delta, str) and config.delta != "random":
        err("delta", "a number, 'random', or null", config.delta)

    if config.mode == "time_origin" and not diags:
        to = config.time_origin
        t_max = math.pi / to["delta_omega"]
        sched = config.bob_schedule or config.schedule
        if sched.get("stop", 0) < t_max:
            warn("schedule.stop", "should bracket the first envelope maximum pi/delta_omega",
                 {"stop": sched.get("stop"), "t_max": t_max})
    return diags


def _time_origin_species_dicts(to: dict) -> list[dict]:
    return [
        {"name": "tone1", "omega": float(to["omega1"])},
        {"name": "tone2", "omega": float(to["omega1"]) + float(to["delta_omega"])},
    ]


def resolve_config(config: ScenarioConfig) -> ScenarioConfig:
    """Fill derived fields: random delta (own seed) and Bob's basis phase."""
    resolved = ScenarioConfig.from_dict(config.to_dict())
    if resolved.mode == "baseline_sweep":
        return resolved
    if resolved.mode == "time_origin":
        resolved.species = _time_origin_species_dicts(resolved.time_origin)
    if resolved.delta == "random":
        rng = np.random.default_rng(int(resolved.seeds["delta"]))
        resolved.delta = float(rng.uniform(0.0, TWO_PI))
    if resolved.bob_phase is None:
        delta = float(resolved.delta) if resolved.delta is not None else 0.0
        resolved.bob_phase = normalize_phase(resolved.alice_phase - delta)
        resolved.delta = delta
    if resolved.send_time is None:
        resolved.send_time = resolved.collapse_time
    if resolved.bob_schedule is None:
        resolved.bob_schedule = dict(resolved.schedule)
    return resolved


def _build_parties(config: ScenarioConfig, species: list[ClockSpecies]):
    names = [s.name for s in species]
    alice = PartyConfig("A", {n: config.alice_phase for n in names},
                        config.alice_clock_offset)
    bob = PartyConfig("B", {n: config.bob_phase for n in names},
                      config.bob_clock_offset)
    return alice, bob


def _header(config: ScenarioConfig) -> str:
    s = config.seeds
    return (f"qclocksync {__version__} seeds: quantum={s['quantum']} "
            f"channel={s['channel']} delta={s['delta']}")


def run_scenario(config: ScenarioConfig, output_dir: str | None = None) -> tuple[int, dict]:
    """Validate, resolve, execute, and write artifacts.

    Returns (exit_code, result_record). Exit codes: 0 success, 1 invalid
    config, 2 runtime error, 3 inconclusive/no-sync protocol outcome.
    """
    diags = validate_config(config)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        return EXIT_INVALID_CONFIG, {"diagnostics": [d.to_dict() for d in diags]}

    out_dir = output_dir or config.output_dir
    if out_dir is None:
        return EXIT_INVALID_CONFIG, {"diagnostics": [
            Diagnostic("output_dir", "required (config field or CLI flag)", None).to_dict()
        ]}
    os.makedirs(out_dir, exist_ok=True)

    resolved = resolve_config(config)
    with open(os.path.join(out_dir, "config_echo.yaml"), "w") as fh:
        fh.write(f"# {_header(resolved)}\n")
        yaml.safe_dump(resolved.to_dict(), fh, sort_keys=True)

    try:
        if resolved.mode == "baseline_sweep":
            record = _run_baseline_sweep(resolved, out_dir)
            status = "ok"
        else:
            record, status = _run_quantum_mode(resolved, out_dir)
    except Exception as exc:  # hard failure: distinct exit code from inconclusive
        record = {"error": f"{type(exc).__name__}: {exc}"}
        _write_result(out_dir, resolved, record)
        return EXIT_RUNTIME_ERROR, record

    _write_result(out_dir, resolved, record)
    if status != "ok":
        return EXIT_INCONCLUSIVE, record
    return EXIT_OK, record


def _write_result(out_dir: str, config: ScenarioConfig, record: dict) -> None:
    payload = {"version": __version__, "seeds": config.seeds, "result": record}
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_series(out_dir: str, config: ScenarioConfig, result: SyncResult) -> None:
    header = _header(config)
    for name, out in sorted(result.species_outcomes.items()):
        if out.alice_series is not None:
            out.alice_series.to_csv(os.path.join(out_dir, f"series_alice_{name}.csv"),
                                    header_comment=header)
        if out.bob_series is not None:
            out.bob_series.to_csv(os.path.join(out_dir, f"series_bob_{name}.csv"),
                                  header_comment=header)


def _run_quantum_mode(config: ScenarioConfig, out_dir: str) -> tuple[dict, str]:
    species = [ClockSpecies(s["name"], float(s["omega"])) for s in config.species]
    alice, bob = _build_parties(config, species)
    schedules = ProtocolSchedules(
        alice=_schedule_from(config.schedule),
        bob=_schedule_from(config.bob_schedule),
        collapse_time=float(config.collapse_time),
        send_time=float(config.send_time),
    )
    channel = ChannelModel(**(config.channel or {}))
    qrng = np.random.default_rng(int(config.seeds["quantum"]))
    crng = np.random.default_rng(int(config.seeds["channel"]))
    transcript = Transcript()

    if config.mode == "single_frequency":
        ens = create_ensemble(config.n_pairs, species[0], config.eta)
        result = run_single_frequency(ens, alice, bob, channel, schedules,
                                      qrng, crng, transcript)
        score_single_frequency(result, alice, bob, species[0], config.eta)
    elif config.mode == "two_frequency":
        ens = tuple(create_ensemble(config.n_pairs, sp, config.eta) for sp in species)
        result = run_two_frequency(ens, alice, bob, channel, schedules,
                                   qrng, crng, transcript)
        score_envelope(result, alice, bob, species[0].omega, species[1].omega)
    else:  # time_origin
        to = config.time_origin
        to_cfg = TimeOriginConfig(float(to["omega1"]), float(to["delta_omega"]),
                                  float(to["duration_T"]))
        ens = tuple(create_ensemble(config.n_pairs, sp, config.eta) for sp in species)
        result = establish_time_origin(to_cfg, ens, alice, bob, channel, schedules,
                                       qrng, crng, transcript)
        score_time_origin(result, alice, bob)

    with open(os.path.join(out_dir, "events.jsonl"), "w") as fh:
        meta = {"kind": "meta", "version": __version__, "seeds": config.seeds}
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        fh.write(transcript.to_jsonl())
    _write_series(out_dir, config, result)
    return result.to_dict(), result.status


def _run_baseline_sweep(config: ScenarioConfig, out_dir: str) -> dict:
    """Grid sweep comparing Einstein-synchronization RMS error against the
    entanglement protocol's, with the classical channel driven by the same
    medium (delay = distance * n / c, jitter = distance * sigma / c)."""
    base = config.baseline
    n_trials = int(base["n_trials"])
    mean_index = float(base.get("mean_index", 1.0))
    n_qcs_seeds = int(base.get("n_qcs_seeds", 20))
    qcs_cfg_raw = base.get("qcs_scenario") or _default_qcs_cell(config)

    rows = []
    crng = np.random.default_rng(int(config.seeds["channel"]))
    for sigma in [float(v) for v in base["sigma_grid"]]:
        for distance in [float(v) for v in base["distance_grid"]]:
            medium = MediumModel(distance=float(distance), mean_index=mean_index,
                                 index_fluctuation_sigma=float(sigma))
            rms_es = es_rms_error(medium, n_trials, crng)
            rms_qcs = _qcs_rms(qcs_cfg_raw, medium, n_qcs_seeds,
                               int(config.seeds["quantum"]),
                               int(config.seeds["channel"]))
            rows.append((float(sigma), float(distance), rms_es, rms_qcs, n_trials))

    path = os.path.join(out_dir, "baseline.csv")
    with open(path, "w") as fh:
        fh.write(f"# {_header(config)}\n")
        fh.write("sigma,distance,rms_error_es,rms_error_qcs,n_trials\n")
        for sigma, distance, rms_es, rms_qcs, n in rows:
            fh.write(f"{sigma!r},{distance!r},{rms_es!r},{rms_qcs!r},{n}\n")
    return {"n_cells": len(rows),
            "cells": [{"sigma": r[0], "distance": r[1], "rms_error_es": r[2],
                       "rms_error_qcs": r[3], "n_trials": r[4]} for r in rows]}


def _default_qcs_cell(config: ScenarioConfig) -> dict:
    return {
        "mode": "single_frequency",
        "n_pairs": 20000,
        "species": [{"name": "cs", "omega": 1.0}],
        "delta": 0.0,
        "schedule": {"start": 0.0, "stop": 6.0, "n_points": 10, "batch_size": 500},
        "seeds": dict(config.seeds),
    }


def _qcs_rms(raw: dict, medium: MediumModel, n_seeds: int,
             quantum_seed: int, channel_seed: int) -> float:
    """RMS entanglement-protocol sync error across quantum seeds, with the
    label channel inheriting the medium's delay and jitter."""
    cell = ScenarioConfig.from_dict(dict(raw))
    base_delay = medium.distance * medium.mean_index / SPEED_OF_LIGHT
    jitter = medium.distance * medium.index_fluctuation_sigma / SPEED_OF_LIGHT
    cell.channel = {"base_delay": base_delay, "jitter_sigma": jitter,
                    "loss_probability": 0.0}
    # keep Bob's measurements after worst-case delivery so the schedule is
    # reachable for every cell in the sweep
    margin = base_delay + 10.0 * jitter
    sched = dict(cell.schedule)
    cell.bob_schedule = {**sched, "start": sched["start"] + margin,
                         "stop": sched["stop"] + margin}
    cell = resolve_config(cell)

    species = ClockSpecies(cell.species[0]["name"], float(cell.species[0]["omega"]))
    alice, bob = _build_parties(cell, [species])
    schedules = ProtocolSchedules(alice=_schedule_from(cell.schedule),
                                  bob=_schedule_from(cell.bob_schedule),
                                  collapse_time=float(cell.collapse_time),
                                  send_time=float(cell.send_time))
    channel = ChannelModel(**cell.channel)
    errs = []
    children = np.random.SeedSequence(quantum_seed).spawn(n_seeds)
    for i in range(n_seeds):
        qrng = np.random.default_rng(children[i])
        crng = np.random.default_rng(np.random.SeedSequence(channel_seed).spawn(1)[0])
        ens = create_ensemble(cell.n_pairs, species, cell.eta)
        result = run_single_frequency(ens, alice, bob, channel, schedules, qrng, crng)
        score_single_frequency(result, alice, bob, species, cell.eta)
        if result.sync_error is not None:
            errs.append(result.sync_error)
    if not errs:
        return math.nan
    return float(np.sqrt(np.mean(np.square(errs))))
