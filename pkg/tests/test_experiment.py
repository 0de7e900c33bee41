import csv
import json

import numpy as np
import pytest

from gridgame.cli import main
from gridgame.experiment import (SWEEP_COLUMNS, TRACE_COLUMNS,
                                 config_from_dict, config_to_dict,
                                 default_config, load_policy,
                                 player_train_configs, policy_filename,
                                 resolve_policy, run_eval, run_sweep, run_trace,
                                 run_train, save_policy)
from gridgame.levelk import QPolicy, TrainConfig
from gridgame.neural import NetworkSpec
from gridgame.scenario import (ATTACKER, DEFENDER, GridParams,
                               attacker_feature_encoder, power_flow)


def tiny_config(**experiment_overrides):
    data = {
        "grid": {"q3_max": 0.7},
        "train": {"episodes": 2, "hidden_layers": [4]},
        "experiment": {
            "k_max": 1,
            "q3max_values": [0.7],
            "pairings": [[0, 0]],
            "eval_episodes": 2,
            "horizon": 10,
            "seeds": [1],
            **experiment_overrides,
        },
    }
    return config_from_dict(data)


def write_config(tmp_path, config_dict):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_dict))
    return path


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_default_config_round_trips():
    config = default_config()
    rebuilt = config_from_dict(config_to_dict(config))
    assert rebuilt == config


def test_unknown_top_level_key_rejected():
    with pytest.raises(ValueError, match="unknown top-level"):
        config_from_dict({"grids": {}})


def test_unknown_grid_key_rejected():
    with pytest.raises(ValueError, match="grid.*q3max"):
        config_from_dict({"grid": {"q3max": 0.7}})


def test_unknown_train_key_rejected():
    with pytest.raises(ValueError, match="train"):
        config_from_dict({"train": {"episode": 5}})


def test_unknown_experiment_key_rejected():
    with pytest.raises(ValueError, match="experiment"):
        config_from_dict({"experiment": {"kmax": 2}})


def test_config_validates_pairings_against_k_max():
    with pytest.raises(ValueError, match="pairing"):
        config_from_dict({"experiment": {"k_max": 1, "pairings": [[2, 0]]}})


def test_config_rejects_nonpositive_sweep_values():
    with pytest.raises(ValueError, match="q3max_values"):
        config_from_dict({"experiment": {"q3max_values": [0.0]}})


def test_config_overrides_apply():
    config = config_from_dict({
        "grid": {"memory_window": 3, "p2_range": [1.0, 1.1]},
        "train": {"gamma": 0.9},
        "experiment": {"seeds": [5, 6]},
    })
    assert config.grid.memory_window == 3
    assert config.grid.p2_range == (1.0, 1.1)
    assert config.train.gamma == 0.9
    assert config.seeds == (5, 6)


def test_player_train_configs_bias_defaults():
    configs = player_train_configs(default_config())
    assert configs[DEFENDER].optimistic_bias == 0.0
    assert configs[ATTACKER].optimistic_bias == 2.0
    custom = config_from_dict({"experiment": {}})
    overridden = config_from_dict(
        {"experiment": {"attacker_optimistic_bias": 7.0,
                        "defender_optimistic_bias": -1.0}})
    assert player_train_configs(overridden)[ATTACKER].optimistic_bias == 7.0
    assert player_train_configs(overridden)[DEFENDER].optimistic_bias == -1.0


# ---------------------------------------------------------------------------
# policy files
# ---------------------------------------------------------------------------

def _dummy_policy(grid):
    spec = NetworkSpec(6, (4,), 11)
    rng = np.random.default_rng(0)
    from gridgame.neural import init
    return QPolicy(spec, init(spec, 0.1, 2.0, rng), 0.0,
                   attacker_feature_encoder(grid), 11)


def test_policy_save_load_round_trip(tmp_path):
    grid = GridParams(q3_max=0.7)
    policy = _dummy_policy(grid)
    path = tmp_path / policy_filename(ATTACKER, 1, 0.7, 3)
    save_policy(path, policy, ATTACKER, 1, 0.7, 3, TrainConfig())
    loaded = load_policy(path, grid)
    assert loaded.params.equals(policy.params)
    assert loaded.spec == policy.spec
    assert loaded.epsilon == policy.epsilon


def test_policy_filename_format():
    assert policy_filename(DEFENDER, 2, 1.6, 7) == "defender_L2_q1.6_s7.json"
    assert policy_filename(ATTACKER, 1, 0.2, 10) == "attacker_L1_q0.2_s10.json"


def test_resolve_level0_needs_no_file(tmp_path):
    config = tiny_config()
    policy = resolve_policy(config, tmp_path, DEFENDER, 0, 0.7, 1)
    assert policy.action_count == 3


def test_resolve_missing_trained_policy_raises(tmp_path):
    config = tiny_config()
    with pytest.raises(FileNotFoundError, match="level 1"):
        resolve_policy(config, tmp_path, DEFENDER, 1, 0.7, 1)


# ---------------------------------------------------------------------------
# train command
# ---------------------------------------------------------------------------

def test_train_k0_writes_manifest_only(tmp_path):
    config = tiny_config(k_max=0)
    written, failures = run_train(config, tmp_path)
    assert written == [] and failures == []
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["policies"] == []
    assert manifest["config"] == config_to_dict(config)


def test_train_k1_writes_both_policies(tmp_path):
    config = tiny_config()
    written, failures = run_train(config, tmp_path)
    assert failures == []
    assert sorted(written) == ["attacker_L1_q0.7_s1.json",
                               "defender_L1_q0.7_s1.json"]
    for name in written:
        assert (tmp_path / name).exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert sorted(manifest["policies"]) == sorted(written)


def test_train_rerun_is_byte_identical(tmp_path):
    config = tiny_config()
    run_train(config, tmp_path / "a")
    run_train(config, tmp_path / "b")
    for name in ("defender_L1_q0.7_s1.json", "attacker_L1_q0.7_s1.json",
                 "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_train_divergence_reported_per_cell(tmp_path, monkeypatch):
    from gridgame import experiment as experiment_module
    from gridgame.levelk import TrainingDiverged

    config = tiny_config(seeds=[1, 2])
    real = experiment_module.build_hierarchy
    calls = []

    def flaky_hierarchy(game, level0s, k_max, configs, rng):
        calls.append(1)
        if len(calls) == 1:
            raise TrainingDiverged("non-finite parameters at episode 0")
        return real(game, level0s, k_max, configs, rng)

    monkeypatch.setattr(experiment_module, "build_hierarchy", flaky_hierarchy)
    written, failures = run_train(config, tmp_path)
    assert len(failures) == 1 and "seed=1" in failures[0]
    assert sorted(written) == ["attacker_L1_q0.7_s2.json",
                               "defender_L1_q0.7_s2.json"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["failures"] == failures


# ---------------------------------------------------------------------------
# sweep command
# ---------------------------------------------------------------------------

def test_sweep_writes_expected_rows(tmp_path):
    config = tiny_config(k_max=0, seeds=[1, 2])
    records = run_sweep(config, tmp_path)
    assert len(records) == 2  # one pairing x one q3_max x two seeds
    with open(tmp_path / "sweep.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert tuple(rows[0]) == SWEEP_COLUMNS
    assert len(rows) == 3
    # round-trip parse reproduces the records exactly
    for row, record in zip(rows[1:], records):
        assert float(row[0]) == record.q3_max
        assert int(row[3]) == record.seed
        assert float(row[4]) == record.defender_avg_reward_per_step
        assert float(row[5]) == record.attacker_avg_reward_per_step


def test_sweep_determinism_byte_identical(tmp_path):
    config = tiny_config(k_max=0)
    run_sweep(config, tmp_path / "one")
    run_sweep(config, tmp_path / "two")
    assert (tmp_path / "one" / "sweep.csv").read_bytes() == \
        (tmp_path / "two" / "sweep.csv").read_bytes()


def test_sweep_missing_policy_fails(tmp_path):
    config = tiny_config(pairings=[[1, 0]])
    with pytest.raises(FileNotFoundError):
        run_sweep(config, tmp_path)


# ---------------------------------------------------------------------------
# trace and eval commands
# ---------------------------------------------------------------------------

def test_trace_rows_and_physics(tmp_path):
    config = tiny_config(k_max=0, horizon=50)
    path = run_trace(config, tmp_path, 0, 0, 0.7, seed=1)
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 50
    assert tuple(csv.reader(open(path)).__next__()) == TRACE_COLUMNS
    grid = GridParams(q3_max=0.7)
    for row in rows:
        flow = power_flow(float(row["p2"]), float(row["q2"]), 1.0,
                          float(row["q3"]), float(row["V1"]), grid)
        assert float(row["V2"]) == flow.V2
        assert float(row["V3"]) == flow.V3


def test_trace_rerun_identical(tmp_path):
    config = tiny_config(k_max=0)
    a = run_trace(config, tmp_path / "a", 0, 0, 0.7, seed=1)
    b = run_trace(config, tmp_path / "b", 0, 0, 0.7, seed=1)
    assert a.read_bytes() == b.read_bytes()


def test_eval_summary_and_csv(tmp_path):
    config = tiny_config(k_max=0, eval_episodes=3)
    summary = run_eval(config, tmp_path, 0, 0, 0.7, seed=1)
    assert summary["episodes"] == 3
    assert summary["defender_avg_reward_per_step"] <= 0.0
    with open(tmp_path / summary["csv"], newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 3
    per_episode = [float(r["defender_reward_per_step"]) for r in rows]
    assert np.mean(per_episode) == pytest.approx(
        summary["defender_avg_reward_per_step"], rel=1e-12)


# ---------------------------------------------------------------------------
# CLI entry point
# ---------------------------------------------------------------------------

def test_cli_sweep_end_to_end(tmp_path, capsys):
    config_path = write_config(tmp_path, {
        "train": {"episodes": 1},
        "experiment": {"k_max": 0, "q3max_values": [0.7], "pairings": [[0, 0]],
                       "eval_episodes": 2, "horizon": 5, "seeds": [1]},
    })
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(config_path), "--out", str(out)]) == 0
    assert (out / "sweep.csv").exists()
    assert "sweep.csv" in capsys.readouterr().out


def test_cli_trace_and_eval(tmp_path, capsys):
    config_path = write_config(tmp_path, {
        "experiment": {"k_max": 0, "q3max_values": [0.2], "pairings": [[0, 0]],
                       "eval_episodes": 2, "horizon": 5, "seeds": [3]},
    })
    out = tmp_path / "out"
    assert main(["trace", "--config", str(config_path), "--out", str(out),
                 "--defender-level", "0", "--attacker-level", "0",
                 "--q3max", "0.2"]) == 0
    assert main(["eval", "--config", str(config_path), "--out", str(out),
                 "--defender-level", "0", "--attacker-level", "0",
                 "--q3max", "0.2", "--seed", "3"]) == 0
    output = capsys.readouterr().out
    assert "attacker avg reward/step" in output


def test_cli_train_writes_manifest(tmp_path):
    config_path = write_config(tmp_path, {
        "train": {"episodes": 1, "hidden_layers": [4]},
        "experiment": {"k_max": 0, "q3max_values": [0.7], "pairings": [[0, 0]],
                       "eval_episodes": 1, "horizon": 5, "seeds": [1]},
    })
    out = tmp_path / "out"
    assert main(["train", "--config", str(config_path), "--out", str(out)]) == 0
    assert (out / "manifest.json").exists()


def test_cli_bad_config_exits_nonzero(tmp_path, capsys):
    config_path = write_config(tmp_path, {"nope": {}})
    out = tmp_path / "out"
    code = main(["sweep", "--config", str(config_path), "--out", str(out)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path, capsys):
    code = main(["sweep", "--config", str(tmp_path / "absent.json"),
                 "--out", str(tmp_path)])
    assert code == 1


def test_cli_unknown_sweep_value_rejected(tmp_path, capsys):
    config_path = write_config(tmp_path, {
        "experiment": {"k_max": 0, "q3max_values": [0.7], "pairings": [[0, 0]],
                       "eval_episodes": 1, "horizon": 5, "seeds": [1]},
    })
    code = main(["sweep", "--config", str(config_path),
                 "--out", str(tmp_path / "out"), "--q3max", "0.9"])
    assert code == 1
    assert "0.9" in capsys.readouterr().err
