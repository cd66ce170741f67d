"""Transition logging: run collection policies, persist JSONL logs, merge shards.

A log is one JSON object per line with exactly the fields
``episode, step, obs, action, next_obs, reward, done, action_success``,
plus a JSON manifest sidecar (``<log>.manifest.json``) that records the
environment fingerprint, dimensions, totals and default reward/game
parameters.  Logs are append-only and corruption-localizing; merging
renumbers episodes and adds totals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .envapi import Env, Observation, derive_seed

import numpy as np

LOG_FORMAT = "redsim-log-v1"

RECORD_FIELDS = (
    "episode",
    "step",
    "obs",
    "action",
    "next_obs",
    "reward",
    "done",
    "action_success",
)


class LogValidationError(Exception):
    """Log file contains records that cannot be parsed.

    ``lines`` holds the offending 1-based line numbers.
    """

    def __init__(self, message: str, lines=()):
        super().__init__(message)
        self.lines = list(lines)


class IncompatibleDatasetError(Exception):
    """Logs from different environments (fingerprint/dimension mismatch)."""


@dataclass(slots=True)
class TransitionRecord:
    episode: int
    step: int
    obs: Observation
    action: int
    next_obs: Observation
    reward: float
    done: bool
    action_success: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "episode": self.episode,
                "step": self.step,
                "obs": list(self.obs),
                "action": self.action,
                "next_obs": list(self.next_obs),
                "reward": self.reward,
                "done": self.done,
                "action_success": self.action_success,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_obj(cls, obj: dict) -> "TransitionRecord":
        missing = [f for f in RECORD_FIELDS if f not in obj]
        if missing:
            raise ValueError(f"missing fields: {', '.join(missing)}")
        return cls(
            episode=int(obj["episode"]),
            step=int(obj["step"]),
            obs=tuple(int(v) for v in obj["obs"]),
            action=int(obj["action"]),
            next_obs=tuple(int(v) for v in obj["next_obs"]),
            reward=float(obj["reward"]),
            done=bool(obj["done"]),
            action_success=bool(obj["action_success"]),
        )


def manifest_path(log_path) -> Path:
    return Path(str(log_path) + ".manifest.json")


def write_manifest(manifest: dict, log_path) -> Path:
    path = manifest_path(log_path)
    path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return path


def read_manifest(log_path) -> dict:
    path = manifest_path(log_path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != LOG_FORMAT:
        raise IncompatibleDatasetError(
            f"{path}: unexpected manifest format {manifest.get('format')!r}"
        )
    return manifest


def write_log(records, log_path) -> None:
    with open(log_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


def read_log(log_path):
    """Parse a JSONL log strictly; corrupt lines raise LogValidationError."""
    records = []
    bad: list[tuple[int, str]] = []
    with open(log_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(TransitionRecord.from_obj(json.loads(line)))
            except (ValueError, TypeError, json.JSONDecodeError) as exc:
                bad.append((lineno, str(exc)))
    if bad:
        lines = [ln for ln, _ in bad]
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in bad[:5])
        raise LogValidationError(
            f"{len(bad)} corrupt record(s) in {log_path} ({detail})", lines=lines
        )
    return records


# --- collection policies ---------------------------------------------------

def uniform_random_policy(action_count: int):
    def pick(obs, rng) -> int:
        return int(rng.integers(action_count))

    pick.descriptor = "uniform-random"
    return pick


def epsilon_greedy_policy(greedy_fn, epsilon: float, action_count: int):
    """Explore uniformly with probability epsilon, otherwise follow greedy_fn."""

    def pick(obs, rng) -> int:
        if rng.random() < epsilon:
            return int(rng.integers(action_count))
        return int(greedy_fn(obs))

    pick.descriptor = f"epsilon-greedy(epsilon={epsilon})"
    return pick


@dataclass
class CollectionResult:
    records: list
    manifest: dict
    log_path: Path | None = None


def run_collection(
    env: Env,
    policy,
    episodes: int,
    seed: int,
    out_path=None,
) -> CollectionResult:
    """Roll the policy for the given number of episodes and log every step.

    Deterministic given the seed: the environment consumes per-episode
    streams derived from it and the policy gets its own derived stream.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    policy_rng = np.random.default_rng(derive_seed(seed, "collection-policy"))
    records: list[TransitionRecord] = []
    starts: set[Observation] = set()
    for ep in range(episodes):
        obs = env.reset(seed=seed) if ep == 0 else env.reset()
        starts.add(obs)
        step = 0
        done = False
        while not done:
            action = policy(obs, policy_rng)
            res = env.step(action)
            records.append(
                TransitionRecord(
                    episode=ep,
                    step=step,
                    obs=obs,
                    action=action,
                    next_obs=res.observation,
                    reward=res.reward,
                    done=res.done,
                    action_success=bool(res.info.get("action_success", False)),
                )
            )
            obs = res.observation
            done = res.done
            step += 1

    meta = env.metadata()
    manifest = {
        "format": LOG_FORMAT,
        "fingerprint": meta["fingerprint"],
        "obs_dim": meta["obs_dim"],
        "action_count": meta["action_count"],
        "total_steps": len(records),
        "episodes": episodes,
        "o0": [list(o) for o in sorted(starts)],
        "policy": getattr(policy, "descriptor", "custom"),
        "seed": seed,
        "reward": meta["reward"],
        "game": meta["game"],
    }
    log_path = None
    if out_path is not None:
        log_path = Path(out_path)
        write_log(records, log_path)
        write_manifest(manifest, log_path)
    return CollectionResult(records=records, manifest=manifest, log_path=log_path)


def collect_shards(make_env, policy_factory, episodes_per_shard: int, shards: int, seed: int):
    """Independent collection shards with seeds derived from one master seed.

    Each shard gets its own environment instance and seed, so shards can run
    on separate workers; merging their logs in any order yields the same
    transition counts.
    """
    results = []
    for worker in range(shards):
        env = make_env()
        policy = policy_factory(env)
        results.append(
            run_collection(env, policy, episodes_per_shard, derive_seed(seed, "shard", worker))
        )
    return results


# --- merging and validation -------------------------------------------------

def _require_compatible(manifests) -> None:
    first = manifests[0]
    for m in manifests[1:]:
        for key in ("fingerprint", "obs_dim", "action_count", "o0"):
            if m.get(key) != first.get(key):
                raise IncompatibleDatasetError(
                    f"manifest field {key!r} differs: {first.get(key)!r} vs {m.get(key)!r}"
                )


def merge_logs(log_paths, out_path) -> CollectionResult:
    """Concatenate logs from the same environment, renumbering episodes."""
    if not log_paths:
        raise ValueError("need at least one log to merge")
    manifests = [read_manifest(p) for p in log_paths]
    _require_compatible(manifests)

    merged: list[TransitionRecord] = []
    next_episode = 0
    for path in log_paths:
        remap: dict[int, int] = {}
        for rec in read_log(path):
            if rec.episode not in remap:
                remap[rec.episode] = next_episode
                next_episode += 1
            merged.append(
                TransitionRecord(
                    episode=remap[rec.episode],
                    step=rec.step,
                    obs=rec.obs,
                    action=rec.action,
                    next_obs=rec.next_obs,
                    reward=rec.reward,
                    done=rec.done,
                    action_success=rec.action_success,
                )
            )

    first = manifests[0]
    manifest = {
        "format": LOG_FORMAT,
        "fingerprint": first["fingerprint"],
        "obs_dim": first["obs_dim"],
        "action_count": first["action_count"],
        "total_steps": len(merged),
        "episodes": next_episode,
        "o0": first["o0"],
        "policy": "merged(" + ", ".join(m.get("policy", "?") for m in manifests) + ")",
        "seed": None,
        "sources": [str(p) for p in log_paths],
        "reward": first.get("reward"),
        "game": first.get("game"),
    }
    log_path = Path(out_path)
    write_log(merged, log_path)
    write_manifest(manifest, log_path)
    return CollectionResult(records=merged, manifest=manifest, log_path=log_path)


@dataclass
class CoverageReport:
    total_steps: int
    episodes: int
    unique_observations: int
    visited_pairs: int
    per_action_counts: dict[int, int]
    start_observations: list[Observation]
    chain_violations: list[tuple[int, int]]
    step_gaps: list[tuple[int, int]]
    manifest_consistent: bool | None

    @property
    def clean(self) -> bool:
        return not self.chain_violations and not self.step_gaps and (
            self.manifest_consistent is not False
        )

    def to_dict(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "episodes": self.episodes,
            "unique_observations": self.unique_observations,
            "visited_pairs": self.visited_pairs,
            "per_action_counts": {str(k): v for k, v in sorted(self.per_action_counts.items())},
            "start_observations": [list(o) for o in self.start_observations],
            "chain_violations": [list(v) for v in self.chain_violations],
            "step_gaps": [list(v) for v in self.step_gaps],
            "manifest_consistent": self.manifest_consistent,
        }


def validate_log(log_path, manifest: dict | None = None) -> CoverageReport:
    """Structural and statistical audit of a transition log.

    Parsing problems raise LogValidationError; semantic inconsistencies
    (broken observation chains, step numbering gaps) are reported, not
    raised, so a tampered line is pinpointed rather than fatal.
    """
    records = read_log(log_path)
    if manifest is None:
        try:
            manifest = read_manifest(log_path)
        except (OSError, json.JSONDecodeError):
            manifest = None

    observations: set[Observation] = set()
    pairs: set[tuple[Observation, int]] = set()
    per_action: dict[int, int] = {}
    starts: set[Observation] = set()
    chain_violations: list[tuple[int, int]] = []
    step_gaps: list[tuple[int, int]] = []
    last: dict[int, TransitionRecord] = {}
    episodes: set[int] = set()

    for rec in records:
        episodes.add(rec.episode)
        observations.add(rec.obs)
        observations.add(rec.next_obs)
        pairs.add((rec.obs, rec.action))
        per_action[rec.action] = per_action.get(rec.action, 0) + 1
        prev = last.get(rec.episode)
        if rec.step == 0:
            starts.add(rec.obs)
            if prev is not None:
                step_gaps.append((rec.episode, rec.step))
        else:
            if prev is None or prev.step != rec.step - 1:
                step_gaps.append((rec.episode, rec.step))
            elif prev.next_obs != rec.obs:
                chain_violations.append((rec.episode, rec.step))
        last[rec.episode] = rec

    manifest_ok = None
    if manifest is not None:
        manifest_ok = (
            manifest.get("total_steps") == len(records)
            and manifest.get("episodes") == len(episodes)
            and manifest.get("o0") == [list(o) for o in sorted(starts)]
        )

    return CoverageReport(
        total_steps=len(records),
        episodes=len(episodes),
        unique_observations=len(observations),
        visited_pairs=len(pairs),
        per_action_counts=per_action,
        start_observations=sorted(starts),
        chain_violations=chain_violations,
        step_gaps=step_gaps,
        manifest_consistent=manifest_ok,
    )
