"""CLI plumbing: subcommands, exit codes, artifacts, provenance snapshots."""

import json

import pytest

from redsim import cli, presets
from redsim.cli import (
    EXIT_ARTIFACT,
    EXIT_DATA,
    EXIT_INCOMPATIBLE,
    EXIT_IO,
    EXIT_OK,
    EXIT_SCENARIO,
    main,
)


@pytest.fixture()
def scenario_file(tmp_path):
    path = tmp_path / "desk5.json"
    path.write_text(json.dumps(presets.chain_scenario()), encoding="utf-8")
    return path


@pytest.fixture()
def mesh_file(tmp_path):
    path = tmp_path / "mesh.json"
    path.write_text(json.dumps(presets.mesh_scenario()), encoding="utf-8")
    return path


def _collect(scenario_file, tmp_path, name="d.jsonl", episodes=150, seed=7):
    out = tmp_path / name
    code = main(
        [
            "collect",
            "--scenario", str(scenario_file),
            "--policy", "random",
            "--episodes", str(episodes),
            "--seed", str(seed),
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    return out


def _build(data, tmp_path, name="m.model"):
    out = tmp_path / name
    assert main(["build-sim", "--data", str(data), "--out", str(out)]) == EXIT_OK
    return out


def _train(model, tmp_path, name="p.policy", episodes=3000, seed=1):
    out = tmp_path / name
    code = main(
        [
            "train",
            "--env", f"sim:{model}",
            "--algo", "q_learning",
            "--episodes", str(episodes),
            "--seed", str(seed),
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    return out


def test_scenario_validate_ok(scenario_file, capsys):
    assert main(["scenario-validate", "--scenario", str(scenario_file)]) == EXIT_OK
    assert "shortest_path=10" in capsys.readouterr().out


def test_scenario_validate_rejects_bad_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["scenario-validate", "--scenario", str(bad)]) == EXIT_SCENARIO


def test_missing_file_exit_code(tmp_path):
    assert main(["scenario-validate", "--scenario", str(tmp_path / "no.json")]) == EXIT_IO
    assert main(["build-sim", "--data", str(tmp_path / "no.jsonl"), "--out", "x"]) == EXIT_IO


def test_unknown_flag_is_usage_error(scenario_file):
    with pytest.raises(SystemExit) as err:
        main(["scenario-validate", "--scenario", str(scenario_file), "--bogus"])
    assert err.value.code == 2


def test_full_pipeline_and_transfer_gap(scenario_file, tmp_path, capsys):
    data = _collect(scenario_file, tmp_path, episodes=400)
    model = _build(data, tmp_path)
    policy = _train(model, tmp_path, episodes=4000)
    report = tmp_path / "t.json"
    code = main(
        [
            "transfer",
            "--policy", str(policy),
            "--scenario", str(scenario_file),
            "--model", str(model),
            "--episodes", "50",
            "--seed", "3",
            "--out", str(report),
        ]
    )
    assert code == EXIT_OK
    doc = json.loads(report.read_text())
    assert doc["world"]["success_rate"] == 1.0
    assert doc["world_gap_to_optimal"] <= 0.05
    assert (tmp_path / "t.json.csv").exists()


def test_every_stage_writes_run_snapshot(scenario_file, tmp_path):
    data = _collect(scenario_file, tmp_path)
    model = _build(data, tmp_path)
    for artifact, command in ((data, "collect"), (model, "build-sim")):
        snap = json.loads((artifact.parent / (artifact.name + ".run.json")).read_text())
        assert snap["command"] == command
        assert "created_at" in snap
        assert snap["resolved"]["out"].endswith(artifact.name)


def test_incompatible_artifacts_exit_code(scenario_file, mesh_file, tmp_path):
    mesh_data = _collect(mesh_file, tmp_path, name="mesh.jsonl")
    mesh_model = _build(mesh_data, tmp_path, name="mesh.model")
    mesh_policy = _train(mesh_model, tmp_path, name="mesh.policy", episodes=500)
    code = main(
        [
            "transfer",
            "--policy", str(mesh_policy),
            "--scenario", str(scenario_file),
            "--out", str(tmp_path / "t.json"),
        ]
    )
    assert code == EXIT_INCOMPATIBLE


def test_corrupt_model_exit_code(scenario_file, tmp_path):
    data = _collect(scenario_file, tmp_path)
    model = _build(data, tmp_path)
    raw = model.read_bytes()
    model.write_bytes(raw[: len(raw) - 40])
    code = main(
        [
            "train",
            "--env", f"sim:{model}",
            "--out", str(tmp_path / "p.policy"),
        ]
    )
    assert code == EXIT_ARTIFACT


def test_corrupt_log_exit_code(scenario_file, tmp_path):
    data = _collect(scenario_file, tmp_path, episodes=20)
    lines = data.read_text().splitlines()
    lines[3] = "garbage"
    data.write_text("\n".join(lines) + "\n")
    assert main(["build-sim", "--data", str(data), "--out", str(tmp_path / "m")]) == EXIT_DATA


def test_stats_verifies_chain(scenario_file, tmp_path, capsys):
    data = _collect(scenario_file, tmp_path, episodes=60)
    model = _build(data, tmp_path)
    policy = _train(model, tmp_path, episodes=300)
    assert main(["stats", str(data), str(model), str(policy)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "chain ok" in out


def test_stats_flags_cross_scenario_mixing(scenario_file, mesh_file, tmp_path):
    a = _collect(scenario_file, tmp_path, name="a.jsonl", episodes=20)
    b = _collect(mesh_file, tmp_path, name="b.jsonl", episodes=20)
    assert main(["stats", str(a), str(b)]) == EXIT_INCOMPATIBLE


def test_eval_subcommand_on_sim(scenario_file, tmp_path):
    data = _collect(scenario_file, tmp_path, episodes=300)
    model = _build(data, tmp_path)
    policy = _train(model, tmp_path, episodes=3000)
    out = tmp_path / "eval.json"
    code = main(
        [
            "eval",
            "--env", f"sim:{model}",
            "--policy", str(policy),
            "--episodes", "25",
            "--seed", "5",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["environment"] == "sim"
    assert doc["episodes"] == 25


def test_fidelity_subcommand(scenario_file, tmp_path):
    data = _collect(scenario_file, tmp_path, episodes=300)
    model = _build(data, tmp_path)
    out = tmp_path / "fid.json"
    code = main(
        [
            "fidelity",
            "--model", str(model),
            "--scenario", str(scenario_file),
            "--visit-threshold", "50",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["reachable_pairs"] == 100
    assert 0.0 <= doc["coverage"] <= 1.0


def test_epsilon_greedy_collection_needs_policy_file(scenario_file, tmp_path):
    code = main(
        [
            "collect",
            "--scenario", str(scenario_file),
            "--policy", "epsilon-greedy",
            "--episodes", "5",
            "--out", str(tmp_path / "d.jsonl"),
        ]
    )
    assert code == 2


def test_epsilon_greedy_collection_with_trained_policy(scenario_file, tmp_path):
    data = _collect(scenario_file, tmp_path, episodes=200)
    model = _build(data, tmp_path)
    policy = _train(model, tmp_path, episodes=2000)
    out = tmp_path / "guided.jsonl"
    code = main(
        [
            "collect",
            "--scenario", str(scenario_file),
            "--policy", "epsilon-greedy",
            "--policy-file", str(policy),
            "--epsilon", "0.4",
            "--episodes", "40",
            "--seed", "2",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    manifest = json.loads((tmp_path / "guided.jsonl.manifest.json").read_text())
    assert manifest["policy"] == "epsilon-greedy(epsilon=0.4)"
    # guided collection finds the goal far more often than random play
    assert manifest["episodes"] == 40


def test_study_max_steps_subcommand(scenario_file, tmp_path):
    data = _collect(scenario_file, tmp_path, episodes=400)
    model = _build(data, tmp_path)
    out = tmp_path / "study.json"
    code = main(
        [
            "study-max-steps",
            "--model", str(model),
            "--scenario", str(scenario_file),
            "--values", "5,20",
            "--episodes", "2500",
            "--eval-episodes", "100",
            "--seed", "4",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["shortest_path"] == 10
    first, second = doc["rows"]
    assert first["max_steps"] == 5 and not first["converged"]
    assert second["max_steps"] == 20 and second["converged"]
    assert (tmp_path / "study.json.csv").exists()


def test_output_root_env_var(scenario_file, tmp_path, monkeypatch):
    root = tmp_path / "outputs"
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(root))
    code = main(
        [
            "collect",
            "--scenario", str(scenario_file),
            "--episodes", "10",
            "--seed", "1",
            "--out", "runs/d.jsonl",
        ]
    )
    assert code == EXIT_OK
    assert (root / "runs" / "d.jsonl").exists()


def test_rerun_with_identical_config_is_byte_identical(scenario_file, tmp_path):
    a = _collect(scenario_file, tmp_path, name="a.jsonl", episodes=50)
    b = _collect(scenario_file, tmp_path, name="b.jsonl", episodes=50)
    assert a.read_bytes() == b.read_bytes()
    ma = _build(a, tmp_path, name="a.model")
    mb = _build(b, tmp_path, name="b.model")
    assert ma.read_bytes() == mb.read_bytes()
