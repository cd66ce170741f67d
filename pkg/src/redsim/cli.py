"""Command-line front end for the whole pipeline.

Every subcommand is batch: it reads artifacts, writes artifacts, and exits.
All randomness is controlled by --seed, every output gets a resolved-config
snapshot written next to it (``<out>.run.json``), and failure modes map to
distinct exit codes so shell harnesses can assert them:

    0  success
    1  unexpected error
    2  usage error (unknown flag / bad argument)
    3  missing or unreadable file
    4  invalid scenario
    5  invalid or corrupt dataset
    6  incompatible artifacts (fingerprint or dimension mismatch)
    7  damaged artifact container (version or checksum)
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, agents, collect, empirical, evaluate, world
from .artifacts import ArtifactChecksumError, ArtifactError, ArtifactVersionError, sniff_format
from .dqn import train_dqn

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SCENARIO = 4
EXIT_DATA = 5
EXIT_INCOMPATIBLE = 6
EXIT_ARTIFACT = 7

OUT_DIR_ENV = "REDSIM_OUT_DIR"


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _out_path(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUT_DIR_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_snapshot(out: Path, command: str, resolved: dict) -> None:
    doc = {
        "command": command,
        "resolved": {k: v for k, v in resolved.items() if k not in ("func", "command")},
        "version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    Path(str(out) + ".run.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _load_scenario(path: str) -> world.Scenario:
    if not Path(path).exists():
        raise CliError(EXIT_IO, "missing-file", f"scenario file not found: {path}")
    return world.load_scenario(path)


def _load_model(path: str) -> empirical.EmpiricalModel:
    if not Path(path).exists():
        raise CliError(EXIT_IO, "missing-file", f"model file not found: {path}")
    return empirical.load_model(path)


def _load_policy(path: str) -> agents.LoadedPolicy:
    if not Path(path).exists():
        raise CliError(EXIT_IO, "missing-file", f"policy file not found: {path}")
    return agents.load_policy(path)


def _make_env(spec: str, seed: int, max_steps: int | None, fallback: str):
    """Environment from a 'world:<scenario.json>' or 'sim:<model>' spec string."""
    kind, _, path = spec.partition(":")
    if not path or kind not in ("world", "sim"):
        raise CliError(
            EXIT_USAGE, "bad-env", f"--env must look like world:<scenario> or sim:<model>, got {spec!r}"
        )
    if kind == "world":
        scenario = _load_scenario(path)
        if max_steps is not None:
            scenario = _with_max_steps(scenario, max_steps)
        return world.AttackWorld(scenario, seed=seed), "world"
    model = _load_model(path)
    config = empirical.SimConfig.from_model(model, max_steps=max_steps, fallback=fallback)
    return empirical.EmpiricalSim(model, config, seed=seed), "sim"


# --- subcommands ------------------------------------------------------------

def _cmd_scenario_validate(args) -> int:
    scenario = _load_scenario(args.scenario)
    print(
        f"ok name={scenario.name!r} hosts={len(scenario.hosts)} "
        f"actions={len(scenario.actions)} obs_dim={scenario.obs_dim} "
        f"shortest_path={world.shortest_success_path(scenario)} "
        f"fingerprint={scenario.fingerprint[:16]}"
    )
    return EXIT_OK


def _with_max_steps(scenario: world.Scenario, max_steps: int) -> world.Scenario:
    game = world.GameConfig(
        max_steps=max_steps,
        gamma=scenario.game.gamma,
        goal_index=scenario.game.goal_index,
    )
    return dataclasses.replace(scenario, game=game)


def _cmd_collect(args) -> int:
    scenario = _load_scenario(args.scenario)
    if args.max_steps is not None:
        scenario = _with_max_steps(scenario, args.max_steps)
    env = world.AttackWorld(scenario, seed=args.seed)
    if args.policy == "random":
        policy = collect.uniform_random_policy(env.action_count)
    else:
        if not args.policy_file:
            raise CliError(
                EXIT_USAGE, "bad-policy", "--policy epsilon-greedy needs --policy-file"
            )
        loaded = _load_policy(args.policy_file)
        if loaded.fingerprint and loaded.fingerprint != scenario.fingerprint:
            raise CliError(
                EXIT_INCOMPATIBLE,
                "fingerprint-mismatch",
                "policy was trained against a different scenario",
            )
        policy = collect.epsilon_greedy_policy(
            lambda obs: agents.greedy_action(loaded.policy, obs),
            args.epsilon,
            env.action_count,
        )
    out = _out_path(args.out)
    result = collect.run_collection(env, policy, args.episodes, args.seed, out_path=out)
    _write_snapshot(out, "collect", vars(args))
    print(f"wrote {result.manifest['total_steps']} steps to {out}")
    return EXIT_OK


def _cmd_build_sim(args) -> int:
    if not Path(args.data).exists():
        raise CliError(EXIT_IO, "missing-file", f"log file not found: {args.data}")
    report = collect.validate_log(args.data)
    if not report.clean:
        raise CliError(
            EXIT_DATA,
            "invalid-log",
            f"log failed validation: {len(report.chain_violations)} chain violations, "
            f"{len(report.step_gaps)} step gaps, manifest_consistent={report.manifest_consistent}",
        )
    model = empirical.build_model_from_log(args.data)
    out = _out_path(args.out)
    empirical.save_model(model, out)
    _write_snapshot(out, "build-sim", vars(args))
    print(
        f"wrote model to {out}: {model.pair_support} (obs, action) pairs, "
        f"{model.total_transitions} transitions"
    )
    return EXIT_OK


def _train_config(args) -> agents.TrainConfig:
    return agents.TrainConfig(
        algorithm=args.algo,
        episodes=args.episodes,
        gamma=args.gamma,
        learning_rate=args.learning_rate
        if args.learning_rate is not None
        else (0.1 if args.algo == "q_learning" else 1e-3),
        epsilon_start=args.epsilon_start,
        epsilon_end=args.epsilon_end,
        epsilon_decay_steps=args.epsilon_decay_steps,
        replay_capacity=args.replay_capacity,
        batch_size=args.batch_size,
        target_sync_interval=args.target_sync,
        hidden_sizes=tuple(int(h) for h in args.hidden.split(",") if h),
        seed=args.seed,
    )


def _cmd_train(args) -> int:
    env, _ = _make_env(args.env, args.seed, args.max_steps, args.fallback)
    config = _train_config(args)
    trainer = agents.train_q_learning if args.algo == "q_learning" else train_dqn
    result = trainer(env, config)
    out = _out_path(args.out)
    agents.save_policy(
        result.policy,
        out,
        fingerprint=env.fingerprint,
        obs_dim=env.obs_dim,
        train_config=config,
    )
    result.save_curve(Path(str(out) + ".curve.csv"))
    _write_snapshot(out, "train", vars(args))
    final = result.curve[-1].episode_return if result.curve else float("nan")
    print(f"wrote policy to {out} ({len(result.curve)} episodes, last return {final})")
    return EXIT_OK


def _cmd_eval(args) -> int:
    env, tag = _make_env(args.env, args.seed, args.max_steps, args.fallback)
    loaded = _load_policy(args.policy)
    report = evaluate.evaluate_policy(
        env,
        loaded.policy,
        args.episodes,
        args.seed,
        environment_tag=tag,
        policy_meta={
            "obs_dim": loaded.obs_dim,
            "action_count": loaded.action_count,
            "fingerprint": loaded.fingerprint,
        },
    )
    out = _out_path(args.out)
    evaluate.write_report_json(report.to_dict(), out)
    rows = [report.to_dict(include_traces=False)]
    evaluate.write_report_csv(rows, sorted(rows[0]), Path(str(out) + ".csv"))
    _write_snapshot(out, "eval", vars(args))
    print(
        f"{tag}: mean return {report.mean_return:.3f} success rate {report.success_rate:.3f}"
    )
    return EXIT_OK


def _cmd_transfer(args) -> int:
    scenario = _load_scenario(args.scenario)
    loaded = _load_policy(args.policy)
    if loaded.fingerprint and loaded.fingerprint != scenario.fingerprint:
        raise CliError(
            EXIT_INCOMPATIBLE,
            "fingerprint-mismatch",
            "policy was trained against a different scenario than --scenario",
        )
    world_env = world.AttackWorld(scenario, seed=args.seed)
    sim_env = None
    if args.model:
        model = _load_model(args.model)
        if model.fingerprint != scenario.fingerprint:
            raise CliError(
                EXIT_INCOMPATIBLE,
                "fingerprint-mismatch",
                "model was generated from a different scenario than --scenario",
            )
        sim_env = empirical.EmpiricalSim(model, seed=args.seed)
    solution = agents.value_iteration(scenario)
    report = evaluate.transfer_eval(
        loaded.policy,
        world_env,
        sim_env,
        episodes=args.episodes,
        seed=args.seed,
        optimal_return=solution.optimal_return,
        policy_meta={
            "obs_dim": loaded.obs_dim,
            "action_count": loaded.action_count,
            "fingerprint": loaded.fingerprint,
        },
    )
    out = _out_path(args.out)
    evaluate.write_report_json(report.to_dict(), out)
    flat = {
        "world_mean_return": report.world.mean_return,
        "world_success_rate": report.world.success_rate,
        "sim_mean_return": report.sim.mean_return if report.sim else "",
        "optimal_return": report.optimal_return,
        "return_gap": report.return_gap if report.return_gap is not None else "",
        "world_gap_to_optimal": report.world_gap_to_optimal,
        "coa_agreement": report.coa_agreement if report.coa_agreement is not None else "",
    }
    evaluate.write_report_csv([flat], sorted(flat), Path(str(out) + ".csv"))
    _write_snapshot(out, "transfer", vars(args))
    print(
        f"world return {report.world.mean_return:.3f} vs optimal "
        f"{report.optimal_return:.3f} (gap {100 * report.world_gap_to_optimal:.2f}%), "
        f"success rate {report.world.success_rate:.3f}"
    )
    return EXIT_OK


def _cmd_fidelity(args) -> int:
    scenario = _load_scenario(args.scenario)
    model = _load_model(args.model)
    if model.fingerprint != scenario.fingerprint:
        raise CliError(
            EXIT_INCOMPATIBLE,
            "fingerprint-mismatch",
            "model was generated from a different scenario than --scenario",
        )
    report = evaluate.fidelity_report(model, scenario, visit_threshold=args.visit_threshold)
    out = _out_path(args.out)
    evaluate.write_report_json(report.to_dict(), out)
    rows = [
        {"obs": "".join(map(str, p.obs)), "action": p.action, "visits": p.visits, "tv_distance": p.tv_distance}
        for p in report.pairs
    ]
    evaluate.write_report_csv(rows, ("obs", "action", "visits", "tv_distance"), Path(str(out) + ".csv"))
    _write_snapshot(out, "fidelity", vars(args))
    print(
        f"coverage {report.coverage:.3f}, {report.confident_pairs} confident pairs, "
        f"max TV {report.max_tv_confident:.4f}, "
        f"{report.low_confidence_pairs} low-confidence pairs"
    )
    return EXIT_OK


def _cmd_study_max_steps(args) -> int:
    scenario = _load_scenario(args.scenario)
    model = _load_model(args.model)
    if model.fingerprint != scenario.fingerprint:
        raise CliError(
            EXIT_INCOMPATIBLE,
            "fingerprint-mismatch",
            "model was generated from a different scenario than --scenario",
        )
    values = [int(v) for v in args.values.split(",") if v]
    if not values:
        raise CliError(EXIT_USAGE, "bad-values", "--values needs a comma-separated list")
    config = agents.TrainConfig(episodes=args.episodes, seed=args.seed)
    study = evaluate.max_steps_study(
        model, scenario, values, config, eval_episodes=args.eval_episodes, seed=args.seed
    )
    out = _out_path(args.out)
    evaluate.write_report_json(study.to_dict(), out)
    rows = study.to_dict()["rows"]
    evaluate.write_report_csv(
        rows,
        ("max_steps", "optimal_return", "trained_return", "success_rate", "within_tolerance", "converged"),
        Path(str(out) + ".csv"),
    )
    _write_snapshot(out, "study-max-steps", vars(args))
    for row in study.rows:
        print(
            f"max_steps={row.max_steps}: trained {row.trained_return:.3f} vs optimal "
            f"{row.optimal_return:.3f}, converged={row.converged}"
        )
    return EXIT_OK


def _describe_artifact(path: str) -> dict:
    if not Path(path).exists():
        raise CliError(EXIT_IO, "missing-file", f"artifact not found: {path}")
    tag = sniff_format(path)
    if tag == empirical.MODEL_FORMAT:
        model = empirical.load_model(path)
        stats = empirical.model_stats(model)
        return {
            "path": path,
            "type": "model",
            "fingerprint": model.fingerprint,
            "seed": model.metadata.get("source_seed"),
            "stats": stats,
        }
    if tag == agents.POLICY_FORMAT:
        loaded = _load_policy(path)
        return {
            "path": path,
            "type": "policy",
            "fingerprint": loaded.fingerprint,
            "seed": loaded.train_config.get("seed"),
            "algorithm": loaded.algorithm,
        }
    # otherwise treat as a transition log
    report = collect.validate_log(path)
    manifest = collect.read_manifest(path)
    if not report.clean:
        raise CliError(
            EXIT_DATA,
            "invalid-log",
            f"{path}: {len(report.chain_violations)} chain violations, "
            f"{len(report.step_gaps)} step gaps",
        )
    return {
        "path": path,
        "type": "log",
        "fingerprint": manifest["fingerprint"],
        "seed": manifest.get("seed"),
        "total_steps": report.total_steps,
        "episodes": report.episodes,
    }


def _cmd_stats(args) -> int:
    descriptions = [_describe_artifact(p) for p in args.artifacts]
    for desc in descriptions:
        line = f"{desc['path']}: {desc['type']} fingerprint={desc['fingerprint'][:16]} seed={desc['seed']}"
        if desc["type"] == "log":
            line += f" steps={desc['total_steps']} episodes={desc['episodes']}"
        if desc["type"] == "model":
            s = desc["stats"]
            line += (
                f" pairs={s['pair_support']} transitions={s['total_transitions']}"
                f" obs={s['observations_seen']}"
            )
        if desc["type"] == "policy":
            line += f" algorithm={desc['algorithm']}"
        print(line)
    fingerprints = {d["fingerprint"] for d in descriptions}
    if len(fingerprints) > 1:
        raise CliError(
            EXIT_INCOMPATIBLE,
            "fingerprint-mismatch",
            f"artifacts span {len(fingerprints)} different environments",
        )
    if len(descriptions) > 1:
        print(f"chain ok: {len(descriptions)} artifacts share fingerprint {descriptions[0]['fingerprint'][:16]}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redsim", description="attack-graph gym and generated-simulator pipeline"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario-validate", help="parse and validate a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=_cmd_scenario_validate)

    p = sub.add_parser("collect", help="run a collection policy and log transitions")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", choices=("random", "epsilon-greedy"), default="random")
    p.add_argument("--policy-file", default=None)
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_collect)

    p = sub.add_parser("build-sim", help="estimate the transition model from a log")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_sim)

    p = sub.add_parser("train", help="train an agent in a world or generated sim")
    p.add_argument("--env", required=True, help="world:<scenario.json> or sim:<model>")
    p.add_argument("--algo", choices=("q_learning", "dqn"), default="q_learning")
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--epsilon-start", type=float, default=1.0)
    p.add_argument("--epsilon-end", type=float, default=0.05)
    p.add_argument("--epsilon-decay-steps", type=int, default=10_000)
    p.add_argument("--replay-capacity", type=int, default=20_000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--target-sync", type=int, default=500)
    p.add_argument("--hidden", default="100,100")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--fallback", choices=(empirical.FALLBACK_SELF, empirical.FALLBACK_REJECT),
                   default=empirical.FALLBACK_SELF)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a saved policy")
    p.add_argument("--env", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--fallback", choices=(empirical.FALLBACK_SELF, empirical.FALLBACK_REJECT),
                   default=empirical.FALLBACK_SELF)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("transfer", help="evaluate a sim-trained policy back in the world")
    p.add_argument("--policy", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--model", default=None, help="source sim model for the paired report")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="transfer_report.json")
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("fidelity", help="total-variation audit of a model vs the world")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--visit-threshold", type=int, default=200)
    p.add_argument("--out", default="fidelity_report.json")
    p.set_defaults(func=_cmd_fidelity)

    p = sub.add_parser("study-max-steps", help="game-horizon design study on the sim")
    p.add_argument("--model", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--values", required=True, help="comma-separated max_steps values")
    p.add_argument("--episodes", type=int, default=3000)
    p.add_argument("--eval-episodes", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="max_steps_study.json")
    p.set_defaults(func=_cmd_study_max_steps)

    p = sub.add_parser("stats", help="describe artifacts and verify their provenance chain")
    p.add_argument("artifacts", nargs="+")
    p.set_defaults(func=_cmd_stats)

    return parser


# Most specific first: subclasses must precede their bases.
_ERROR_MAP = (
    (world.ScenarioError, EXIT_SCENARIO, "invalid-scenario"),
    (collect.LogValidationError, EXIT_DATA, "invalid-log"),
    (collect.IncompatibleDatasetError, EXIT_INCOMPATIBLE, "incompatible-dataset"),
    (empirical.AmbiguousStartError, EXIT_DATA, "ambiguous-start"),
    (empirical.IncompatibleModelError, EXIT_INCOMPATIBLE, "incompatible-model"),
    (evaluate.IncompatiblePolicyError, EXIT_INCOMPATIBLE, "incompatible-policy"),
    (ArtifactVersionError, EXIT_ARTIFACT, "artifact-version"),
    (ArtifactChecksumError, EXIT_ARTIFACT, "artifact-checksum"),
    (ArtifactError, EXIT_ARTIFACT, "artifact"),
    (empirical.ModelError, EXIT_DATA, "invalid-dataset"),
    (agents.PolicyError, EXIT_ARTIFACT, "invalid-policy"),
    (json.JSONDecodeError, EXIT_DATA, "invalid-json"),
    (FileNotFoundError, EXIT_IO, "missing-file"),
    (OSError, EXIT_IO, "io-error"),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:
        for etype, code, kind in _ERROR_MAP:
            if isinstance(exc, etype):
                print(f"error: {kind}: {exc}", file=sys.stderr)
                return code
        print(f"error: unexpected: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
