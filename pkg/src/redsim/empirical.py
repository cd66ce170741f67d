"""Count-table transition model estimated from logs, and the fast simulator on top.

The generator is data-centric: it never interprets host or action
semantics, only the ``(obs, action, next_obs)`` triples in the log.  The
persisted representation is raw outcome counts, not probabilities --
counts are lossless sufficient statistics, merge by pointwise addition
(so shard builds commute) and normalise to exact rational transition
probabilities on demand.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

from . import artifacts
from .envapi import Env, GameConfig, Observation, compute_reward, decode_obs, encode_obs

MODEL_FORMAT = "redsim-model-v1"

FALLBACK_SELF = "self-transition"
FALLBACK_REJECT = "reject-action"


class ModelError(Exception):
    """Base class for empirical-model problems."""


class NoDataError(ModelError):
    """The queried (observation, action) pair was never observed."""


class AmbiguousStartError(ModelError):
    """Dataset contains more than one distinct episode-start observation."""


class IncompatibleModelError(ModelError):
    """Models from different environments cannot be merged."""


class EmpiricalModel:
    """Outcome counts per (observation, action) with exact normalisation."""

    def __init__(
        self,
        obs_dim: int,
        action_count: int,
        fingerprint: str = "",
        x0: Observation | None = None,
        metadata: dict | None = None,
    ):
        self.obs_dim = int(obs_dim)
        self.action_count = int(action_count)
        self.fingerprint = fingerprint
        self.x0 = tuple(x0) if x0 is not None else None
        self.metadata = dict(metadata or {})
        # (obs bytes, action) -> {next obs bytes: count}
        self.counts: dict[tuple[bytes, int], dict[bytes, int]] = {}
        self.obs_index: dict[bytes, Observation] = {}
        if self.x0 is not None:
            self.obs_index[encode_obs(self.x0)] = self.x0

    # -- construction -------------------------------------------------------

    def record(self, obs, action: int, next_obs, n: int = 1) -> None:
        key_obs = encode_obs(obs)
        key_next = encode_obs(next_obs)
        self.obs_index.setdefault(key_obs, tuple(obs))
        self.obs_index.setdefault(key_next, tuple(next_obs))
        outcomes = self.counts.setdefault((key_obs, int(action)), {})
        outcomes[key_next] = outcomes.get(key_next, 0) + n

    # -- queries -------------------------------------------------------------

    def outcome_counts(self, obs, action: int) -> dict[bytes, int]:
        try:
            return self.counts[(encode_obs(obs), int(action))]
        except KeyError:
            raise NoDataError(
                f"no data for observation {tuple(obs)} action {action}"
            ) from None

    def distribution(self, obs, action: int) -> dict[Observation, float]:
        """Normalised outcome probabilities; they sum to 1 by construction."""
        outcomes = self.outcome_counts(obs, action)
        total = sum(outcomes.values())
        return {decode_obs(k): c / total for k, c in sorted(outcomes.items())}

    def transition_prob(self, obs, action: int, next_obs) -> float:
        outcomes = self.outcome_counts(obs, action)
        total = sum(outcomes.values())
        return outcomes.get(encode_obs(next_obs), 0) / total

    def has_pair(self, obs, action: int) -> bool:
        return (encode_obs(obs), int(action)) in self.counts

    @property
    def pair_support(self) -> int:
        return len(self.counts)

    @property
    def total_transitions(self) -> int:
        return sum(sum(v.values()) for v in self.counts.values())

    def observations(self):
        return self.obs_index.values()

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmpiricalModel):
            return NotImplemented
        return (
            self.obs_dim == other.obs_dim
            and self.action_count == other.action_count
            and self.fingerprint == other.fingerprint
            and self.x0 == other.x0
            and self.counts == other.counts
        )

    # -- serialisation --------------------------------------------------------

    def to_payload(self) -> dict:
        table: dict[str, dict[str, dict[str, int]]] = {}
        for (obs_key, action), outcomes in self.counts.items():
            row = table.setdefault(obs_key.hex(), {})
            row[str(action)] = {k.hex(): c for k, c in outcomes.items()}
        return {
            "obs_dim": self.obs_dim,
            "action_count": self.action_count,
            "fingerprint": self.fingerprint,
            "x0": list(self.x0) if self.x0 is not None else None,
            "counts": table,
            "metadata": self.metadata,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "EmpiricalModel":
        model = cls(
            obs_dim=payload["obs_dim"],
            action_count=payload["action_count"],
            fingerprint=payload.get("fingerprint", ""),
            x0=tuple(payload["x0"]) if payload.get("x0") is not None else None,
            metadata=payload.get("metadata"),
        )
        for obs_hex, row in payload.get("counts", {}).items():
            obs_key = bytes.fromhex(obs_hex)
            model.obs_index.setdefault(obs_key, decode_obs(obs_key))
            for action_str, outcomes in row.items():
                bucket = model.counts.setdefault((obs_key, int(action_str)), {})
                for next_hex, count in outcomes.items():
                    next_key = bytes.fromhex(next_hex)
                    model.obs_index.setdefault(next_key, decode_obs(next_key))
                    bucket[next_key] = bucket.get(next_key, 0) + int(count)
        return model


def build_model(
    records,
    obs_dim: int,
    action_count: int,
    fingerprint: str = "",
    metadata: dict | None = None,
) -> EmpiricalModel:
    """Single pass over the dataset; exact counts, start observation from step 0.

    The dataset must contain exactly one distinct episode-start observation:
    multiple starts raise AmbiguousStartError rather than silently becoming a
    start distribution.
    """
    model = EmpiricalModel(obs_dim, action_count, fingerprint, metadata=metadata)
    starts: set[Observation] = set()
    empty = True
    for rec in records:
        empty = False
        if rec.step == 0:
            starts.add(rec.obs)
        model.record(rec.obs, rec.action, rec.next_obs)
    if empty:
        raise ModelError("cannot build a model from an empty dataset")
    if len(starts) > 1:
        raise AmbiguousStartError(
            f"{len(starts)} distinct episode-start observations in dataset"
        )
    if starts:
        model.x0 = starts.pop()
        model.obs_index.setdefault(encode_obs(model.x0), model.x0)
    return model


def build_model_from_log(log_path) -> EmpiricalModel:
    """Build from a JSONL log, taking dimensions and defaults from its manifest."""
    from . import collect

    manifest = collect.read_manifest(log_path)
    records = collect.read_log(log_path)
    metadata = {
        "reward": manifest.get("reward"),
        "game": manifest.get("game"),
        "source_total_steps": manifest.get("total_steps"),
        "source_episodes": manifest.get("episodes"),
        "source_policy": manifest.get("policy"),
        "source_seed": manifest.get("seed"),
    }
    model = build_model(
        records,
        obs_dim=manifest["obs_dim"],
        action_count=manifest["action_count"],
        fingerprint=manifest["fingerprint"],
        metadata=metadata,
    )
    model.metadata["build_stats"] = {
        "pair_support": model.pair_support,
        "total_transitions": model.total_transitions,
        "observations_seen": len(model.obs_index),
    }
    return model


def merge_models(a: EmpiricalModel, b: EmpiricalModel) -> EmpiricalModel:
    """Pointwise count addition.  Counts form a commutative monoid under merge."""
    for attr in ("obs_dim", "action_count", "fingerprint"):
        if getattr(a, attr) != getattr(b, attr):
            raise IncompatibleModelError(
                f"{attr} differs: {getattr(a, attr)!r} vs {getattr(b, attr)!r}"
            )
    if a.x0 is not None and b.x0 is not None and a.x0 != b.x0:
        raise IncompatibleModelError(f"start observations differ: {a.x0} vs {b.x0}")
    merged = EmpiricalModel(
        a.obs_dim,
        a.action_count,
        a.fingerprint,
        x0=a.x0 if a.x0 is not None else b.x0,
        metadata=a.metadata or b.metadata,
    )
    merged.obs_index.update(a.obs_index)
    merged.obs_index.update(b.obs_index)
    for source in (a, b):
        for key, outcomes in source.counts.items():
            bucket = merged.counts.setdefault(key, {})
            for next_key, count in outcomes.items():
                bucket[next_key] = bucket.get(next_key, 0) + count
    return merged


def save_model(model: EmpiricalModel, path) -> None:
    artifacts.write_artifact(path, MODEL_FORMAT, model.to_payload())


def load_model(path) -> EmpiricalModel:
    return EmpiricalModel.from_payload(artifacts.read_artifact(path, MODEL_FORMAT))


def model_stats(model: EmpiricalModel, thresholds=(1, 10, 200)) -> dict:
    """Support and visit-count statistics; sparse support predicts erratic sims."""
    visit_counts = sorted(sum(v.values()) for v in model.counts.values())
    histogram: dict[str, int] = {}
    for count in visit_counts:
        bucket = 1 << (count.bit_length() - 1)
        label = f"{bucket}-{2 * bucket - 1}"
        histogram[label] = histogram.get(label, 0) + 1
    support = len(visit_counts)
    fraction_at_least = {
        int(k): (sum(1 for c in visit_counts if c >= k) / support if support else 0.0)
        for k in thresholds
    }
    return {
        "observations_seen": len(model.obs_index),
        "pair_support": support,
        "total_transitions": sum(visit_counts),
        "min_visits": visit_counts[0] if visit_counts else 0,
        "median_visits": visit_counts[support // 2] if visit_counts else 0,
        "max_visits": visit_counts[-1] if visit_counts else 0,
        "visit_histogram": histogram,
        "fraction_at_least": fraction_at_least,
    }


@dataclass(frozen=True)
class SimConfig:
    """Reward and game parameters under which the generated sim is played.

    Rewards are recomputed from observations, never replayed from the log,
    so the same model supports games the data was not collected under.  The
    fallback mode decides what an unseen (obs, action) pair does:
    ``self-transition`` keeps the episode alive at -cost without inventing
    dynamics, ``reject-action`` raises NoDataError to the caller.
    """

    game: GameConfig
    flag_worths: tuple[float, ...]
    action_costs: tuple[float, ...]
    fallback: str = FALLBACK_SELF

    def __post_init__(self):
        if self.fallback not in (FALLBACK_SELF, FALLBACK_REJECT):
            raise ValueError(f"unknown fallback mode {self.fallback!r}")

    @classmethod
    def from_model(
        cls,
        model: EmpiricalModel,
        max_steps: int | None = None,
        gamma: float | None = None,
        fallback: str = FALLBACK_SELF,
        flag_worths=None,
        action_costs=None,
    ) -> "SimConfig":
        """Defaults from the model's recorded manifest, with per-game overrides."""
        reward_meta = model.metadata.get("reward") or {}
        game_meta = model.metadata.get("game") or {}
        worths = flag_worths if flag_worths is not None else reward_meta.get("flag_worths")
        costs = action_costs if action_costs is not None else reward_meta.get("action_costs")
        if worths is None or costs is None:
            raise ModelError(
                "model carries no reward defaults; pass flag_worths and action_costs"
            )
        game = GameConfig(
            max_steps=int(max_steps if max_steps is not None else game_meta.get("max_steps", 100)),
            gamma=float(gamma if gamma is not None else game_meta.get("gamma", 1.0)),
            goal_index=int(game_meta.get("goal_index", -1)),
        )
        return cls(
            game=game,
            flag_worths=tuple(float(w) for w in worths),
            action_costs=tuple(float(c) for c in costs),
            fallback=fallback,
        )


class EmpiricalSim(Env):
    """Environment that replays the estimated transition law.

    Sampling is exact in the rational sense: an outcome with count c out of
    a total of n is drawn with probability c/n via a uniform integer draw,
    so no floating-point normalisation error ever enters the dynamics.

    ``info['action_success']`` reports whether the observation changed,
    which is all the model can know about an action's outcome.
    """

    def __init__(self, model: EmpiricalModel, config: SimConfig | None = None, seed: int = 0):
        if config is None:
            config = SimConfig.from_model(model)
        if model.x0 is None:
            raise ModelError("model has no start observation; cannot run episodes")
        if len(config.action_costs) != model.action_count:
            raise ModelError(
                f"{len(config.action_costs)} action costs for "
                f"{model.action_count} actions"
            )
        if len(config.flag_worths) != model.obs_dim:
            raise ModelError(
                f"{len(config.flag_worths)} feature worths for "
                f"observation dimension {model.obs_dim}"
            )
        super().__init__(config.game, seed)
        self.model = model
        self.config = config
        self.obs_dim = model.obs_dim
        self.action_count = model.action_count
        self.fingerprint = model.fingerprint
        # Frozen sampling tables: outcomes in byte order, cumulative counts.
        self._samplers: dict[tuple[bytes, int], tuple[list[int], list[bytes], int]] = {}
        for key, outcomes in model.counts.items():
            ordered = sorted(outcomes.items())
            cum: list[int] = []
            nexts: list[bytes] = []
            running = 0
            for next_key, count in ordered:
                running += count
                cum.append(running)
                nexts.append(next_key)
            self._samplers[key] = (cum, nexts, running)
        self._obs: Observation = model.x0

    def _reset_state(self) -> Observation:
        self._obs = self.model.x0
        return self._obs

    def _apply_action(self, action: int):
        obs = self._obs
        sampler = self._samplers.get((encode_obs(obs), action))
        if sampler is None:
            if self.config.fallback == FALLBACK_REJECT:
                raise NoDataError(
                    f"no data for observation {obs} action {action} "
                    "(fallback mode reject-action)"
                )
            next_obs = obs
        else:
            cum, nexts, total = sampler
            draw = int(self._rng.integers(total))
            next_obs = self.model.obs_index[nexts[bisect_right(cum, draw)]]
        reward = compute_reward(
            self.config.flag_worths, obs, next_obs, self.config.action_costs[action]
        )
        self._obs = next_obs
        return next_obs, reward, {"action_success": next_obs != obs}

    def metadata(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "obs_dim": self.obs_dim,
            "action_count": self.action_count,
            "reward": {
                "flag_worths": list(self.config.flag_worths),
                "action_costs": list(self.config.action_costs),
            },
            "game": {
                "max_steps": self.game.max_steps,
                "gamma": self.game.gamma,
                "goal_index": self.game.goal_index,
            },
        }
