"""Experiment configuration, policy persistence, and the sweep/eval/trace
runners behind the CLI.

A single JSON document configures everything; unknown keys are rejected so
typos fail fast.  Every run cell (pairing x q3_max x seed) derives its own
generator deterministically from the seed and the cell coordinates, and all
files are written atomically, so a (config, seed) pair fully determines every
output byte.  Floats are rendered with repr, which round-trips exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import neural, scenario
from .levelk import (PriorPolicy, QPolicy, TrainConfig, build_hierarchy,
                     evaluate)
from .scenario import (ATTACKER, DEFENDER, GridParams, as_netform,
                       attacker_feature_encoder, defender_feature_encoder,
                       level0_policies, simulate)

MANIFEST_VERSION = 1
POLICY_FORMAT_VERSION = 1

SWEEP_COLUMNS = ("q3_max", "defender_level", "attacker_level", "seed",
                 "defender_avg_reward_per_step", "attacker_avg_reward_per_step",
                 "eval_episodes", "horizon")
TRACE_COLUMNS = ("t", "V1", "V2", "V3", "p2", "q2", "q3", "P1", "Q1",
                 "R_D", "R_A", "metric_D", "metric_A")

# rng stream tags, one per command kind
_TRAIN_TAG, _SWEEP_TAG, _EVAL_TAG, _TRACE_TAG = 101, 102, 103, 104


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridParams
    train: TrainConfig
    defender_optimistic_bias: float | None = None
    attacker_optimistic_bias: float | None = None
    k_max: int = 2
    q3max_values: tuple[float, ...] = (0.2, 0.7, 1.2, 1.6)
    pairings: tuple[tuple[int, int], ...] = ((0, 0),)
    eval_episodes: int = 50
    horizon: int = scenario.DEFAULT_HORIZON
    seeds: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if any(q <= 0 for q in self.q3max_values):
            raise ValueError("q3max_values must all be > 0")
        for d_level, a_level in self.pairings:
            if not (0 <= d_level <= self.k_max and 0 <= a_level <= self.k_max):
                raise ValueError(
                    f"pairing ({d_level},{a_level}) exceeds k_max={self.k_max}")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")


def default_config() -> ExperimentConfig:
    return ExperimentConfig(grid=GridParams(), train=TrainConfig())


# ---------------------------------------------------------------------------
# Config file parsing
# ---------------------------------------------------------------------------

def _build_from_dict(cls, data: Mapping[str, Any], context: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(
            f"unknown key(s) in '{context}': {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    unknown = set(data) - {"grid", "train", "experiment"}
    if unknown:
        raise ValueError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    grid = _build_from_dict(GridParams, data.get("grid", {}), "grid")
    train = _build_from_dict(TrainConfig, data.get("train", {}), "train")
    experiment = dict(data.get("experiment", {}))
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"grid", "train"}
    unknown = set(experiment) - allowed
    if unknown:
        raise ValueError(
            f"unknown key(s) in 'experiment': {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in experiment.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return ExperimentConfig(grid=grid, train=train, **kwargs)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return config_from_dict(json.load(handle))


def config_to_dict(config: ExperimentConfig) -> dict:
    """Full config, defaults included, as a JSON-serializable dict."""
    data = dataclasses.asdict(config)
    grid = data.pop("grid")
    train = data.pop("train")
    grid["p2_range"] = list(grid["p2_range"])
    train["hidden_layers"] = list(train["hidden_layers"])
    data["q3max_values"] = list(data["q3max_values"])
    data["pairings"] = [list(p) for p in data["pairings"]]
    data["seeds"] = list(data["seeds"])
    return {"grid": grid, "train": train, "experiment": data}


def player_train_configs(config: ExperimentConfig) -> dict[str, TrainConfig]:
    """Per-player training configs: the optimistic start sits at the top of
    each player's single-step reward range (0 for the defender, whose rewards
    are <= 0; 2 for the attacker).  Seeding the attacker at the discounted-sum
    ceiling instead drowns the sparse TD signal and stalls learning."""
    d_bias = config.defender_optimistic_bias
    a_bias = config.attacker_optimistic_bias
    if d_bias is None:
        d_bias = 0.0
    if a_bias is None:
        a_bias = 2.0
    return {
        DEFENDER: replace(config.train, optimistic_bias=d_bias),
        ATTACKER: replace(config.train, optimistic_bias=a_bias),
    }


# ---------------------------------------------------------------------------
# Deterministic per-cell randomness
# ---------------------------------------------------------------------------

def _q3_key(q3_max: float) -> int:
    return int(round(q3_max * 10 ** 6))


def cell_rng(seed: int, tag: int, *coords: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tag)] + [int(c) for c in coords])


# ---------------------------------------------------------------------------
# Policy persistence
# ---------------------------------------------------------------------------

def policy_filename(player: str, level: int, q3_max: float, seed: int) -> str:
    return f"{player}_L{level}_q{q3_max:g}_s{seed}.json"


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def save_policy(path: Path, policy: QPolicy, player: str, level: int,
                q3_max: float, seed: int, train: TrainConfig) -> None:
    train_dict = dataclasses.asdict(train)
    train_dict["hidden_layers"] = list(train.hidden_layers)
    payload = {
        "format_version": POLICY_FORMAT_VERSION,
        "player": player,
        "level": level,
        "q3_max": q3_max,
        "seed": seed,
        "epsilon": policy.epsilon,
        "train_config": train_dict,
        "network": neural.network_to_dict(policy.spec, policy.params),
    }
    _atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=1))


def load_policy(path: Path, grid: GridParams) -> QPolicy:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("format_version") != POLICY_FORMAT_VERSION:
        raise ValueError(
            f"unsupported policy format version {payload.get('format_version')!r} "
            f"in {path}")
    spec, params = neural.network_from_dict(payload["network"])
    player = payload["player"]
    if player == DEFENDER:
        encoder = defender_feature_encoder(grid)
    elif player == ATTACKER:
        encoder = attacker_feature_encoder(grid)
    else:
        raise ValueError(f"unknown player {player!r} in {path}")
    return QPolicy(spec, params, float(payload["epsilon"]), encoder,
                   spec.output_dim)


def resolve_policy(config: ExperimentConfig, out_dir: Path, player: str,
                   level: int, q3_max: float, seed: int) -> PriorPolicy | QPolicy:
    grid = replace(config.grid, q3_max=q3_max)
    if level == 0:
        return level0_policies(grid)[player]
    path = out_dir / policy_filename(player, level, q3_max, seed)
    if not path.exists():
        raise FileNotFoundError(
            f"no trained policy for {player} level {level} at q3_max={q3_max:g}, "
            f"seed={seed}: expected {path}; run 'train' first")
    return load_policy(path, grid)


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _render(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str],
              rows: Sequence[Sequence[Any]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_render(v) for v in row])
    _atomic_write_text(path, buffer.getvalue())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRecord:
    q3_max: float
    defender_level: int
    attacker_level: int
    seed: int
    defender_avg_reward_per_step: float
    attacker_avg_reward_per_step: float
    eval_episodes: int
    horizon: int

    def row(self) -> tuple:
        return (self.q3_max, self.defender_level, self.attacker_level, self.seed,
                self.defender_avg_reward_per_step,
                self.attacker_avg_reward_per_step,
                self.eval_episodes, self.horizon)


def _selected(values: Sequence, chosen) -> list:
    if chosen is None:
        return list(values)
    if chosen in values:
        return [chosen]
    raise ValueError(f"{chosen!r} is not one of the configured values {values}")


def run_train(config: ExperimentConfig, out_dir: Path,
              q3_max: float | None = None, seed: int | None = None,
              ) -> tuple[list[str], list[str]]:
    """Build level hierarchies for every (q3_max, seed) cell and persist every
    trained policy.  Returns (written policy files, per-cell failures);
    failures do not stop the remaining cells.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfgs = player_train_configs(config)
    written: list[str] = []
    failures: list[str] = []
    for q3 in _selected(config.q3max_values, q3_max):
        grid = replace(config.grid, q3_max=q3)
        game = as_netform(grid, config.horizon)
        level0s = level0_policies(grid)
        for s in _selected(config.seeds, seed):
            rng = cell_rng(s, _TRAIN_TAG, _q3_key(q3))
            try:
                hierarchy = build_hierarchy(game, level0s, config.k_max,
                                            train_cfgs, rng)
            except Exception as exc:  # report the cell, keep sweeping
                failures.append(f"q3_max={q3:g} seed={s}: {exc}")
                continue
            for player in (DEFENDER, ATTACKER):
                for level in range(1, config.k_max + 1):
                    policy = hierarchy.policy(player, level)
                    name = policy_filename(player, level, q3, s)
                    save_policy(out_dir / name, policy, player, level, q3, s,
                                train_cfgs[player])
                    written.append(name)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "config": config_to_dict(config),
        "policies": written,
        "failures": failures,
    }
    _atomic_write_text(out_dir / "manifest.json",
                       json.dumps(manifest, sort_keys=True, indent=1))
    return written, failures


def run_sweep(config: ExperimentConfig, out_dir: Path,
              q3_max: float | None = None, seed: int | None = None,
              defender_level: int | None = None,
              attacker_level: int | None = None) -> list[SweepRecord]:
    """Evaluate every configured pairing at every q3_max and seed; write
    sweep.csv."""
    out_dir.mkdir(parents=True, exist_ok=True)
    pairings = [(d, a) for d, a in config.pairings
                if (defender_level is None or d == defender_level)
                and (attacker_level is None or a == attacker_level)]
    records: list[SweepRecord] = []
    for q3 in _selected(config.q3max_values, q3_max):
        grid = replace(config.grid, q3_max=q3)
        game = as_netform(grid, config.horizon)
        for d_level, a_level in pairings:
            for s in _selected(config.seeds, seed):
                defender = resolve_policy(config, out_dir, DEFENDER, d_level, q3, s)
                attacker = resolve_policy(config, out_dir, ATTACKER, a_level, q3, s)
                rng = cell_rng(s, _SWEEP_TAG, _q3_key(q3), d_level, a_level)
                report = evaluate(game, {DEFENDER: defender, ATTACKER: attacker},
                                  config.eval_episodes, rng)
                records.append(SweepRecord(
                    q3, d_level, a_level, s,
                    report.mean_reward_per_step[DEFENDER],
                    report.mean_reward_per_step[ATTACKER],
                    config.eval_episodes, config.horizon))
    write_csv(out_dir / "sweep.csv", SWEEP_COLUMNS, [r.row() for r in records])
    return records


def run_eval(config: ExperimentConfig, out_dir: Path, defender_level: int,
             attacker_level: int, q3_max: float, seed: int) -> dict:
    """Evaluate one pairing; write a per-episode CSV and return the summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = replace(config.grid, q3_max=q3_max)
    game = as_netform(grid, config.horizon)
    defender = resolve_policy(config, out_dir, DEFENDER, defender_level,
                              q3_max, seed)
    attacker = resolve_policy(config, out_dir, ATTACKER, attacker_level,
                              q3_max, seed)
    rng = cell_rng(seed, _EVAL_TAG, _q3_key(q3_max), defender_level, attacker_level)
    report = evaluate(game, {DEFENDER: defender, ATTACKER: attacker},
                      config.eval_episodes, rng)
    name = f"eval_D{defender_level}A{attacker_level}_q{q3_max:g}_s{seed}.csv"
    rows = [(i, d, a) for i, (d, a) in enumerate(
        zip(report.per_episode[DEFENDER], report.per_episode[ATTACKER]), start=1)]
    write_csv(out_dir / name,
              ("episode", "defender_reward_per_step", "attacker_reward_per_step"),
              rows)
    return {
        "defender_avg_reward_per_step": report.mean_reward_per_step[DEFENDER],
        "attacker_avg_reward_per_step": report.mean_reward_per_step[ATTACKER],
        "defender_std": report.std(DEFENDER),
        "attacker_std": report.std(ATTACKER),
        "episodes": report.episodes,
        "csv": name,
    }


def run_trace(config: ExperimentConfig, out_dir: Path, defender_level: int,
              attacker_level: int, q3_max: float, seed: int) -> Path:
    """One seeded greedy rollout; write the step-by-step trace CSV."""
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = replace(config.grid, q3_max=q3_max)
    defender = resolve_policy(config, out_dir, DEFENDER, defender_level,
                              q3_max, seed).greedy_copy()
    attacker = resolve_policy(config, out_dir, ATTACKER, attacker_level,
                              q3_max, seed).greedy_copy()
    rng = cell_rng(seed, _TRACE_TAG, _q3_key(q3_max), defender_level, attacker_level)
    records = simulate(grid, {DEFENDER: defender, ATTACKER: attacker},
                       config.horizon, rng)
    rows = []
    for rec in records:
        s = rec.state
        rows.append((rec.t, s.V1, s.V2, s.V3, s.p2, s.q2, s.q3, s.P1, s.Q1,
                     rec.defender_reward, rec.attacker_reward,
                     rec.defender_memory.metric, float(rec.attacker_memory.metric)))
    path = out_dir / (f"trace_D{defender_level}A{attacker_level}"
                      f"_q{q3_max:g}_s{seed}.csv")
    write_csv(path, TRACE_COLUMNS, rows)
    return path
