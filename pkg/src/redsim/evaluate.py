"""Evaluation, sim-to-world transfer, model fidelity and game-design studies.

Everything here is read-only with respect to policies and models: rollouts
are greedy (no exploration, no learning) and reports are plain values that
export to JSON and CSV for external plotting.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import TrainConfig, greedy_action, train_q_learning, value_iteration
from .empirical import EmpiricalModel, EmpiricalSim, SimConfig
from .envapi import Env, Observation, encode_obs
from .world import (
    Scenario,
    exact_transition,
    reachable_observations,
    shortest_success_path,
)


class IncompatiblePolicyError(Exception):
    """Policy and environment disagree on dimensions or provenance."""


@dataclass
class EvalReport:
    environment: str
    episodes: int
    mean_return: float
    std_return: float
    mean_length: float
    std_length: float
    success_rate: float
    coa: list[list[int]] = field(default_factory=list)

    def to_dict(self, include_traces: bool = True) -> dict:
        doc = {
            "environment": self.environment,
            "episodes": self.episodes,
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "mean_length": self.mean_length,
            "std_length": self.std_length,
            "success_rate": self.success_rate,
        }
        if include_traces:
            doc["coa"] = self.coa
        return doc


def _check_compat(env: Env, policy, meta: dict | None) -> None:
    if meta is None:
        return
    if meta.get("obs_dim") not in (None, env.obs_dim) or meta.get(
        "action_count"
    ) not in (None, env.action_count):
        raise IncompatiblePolicyError(
            f"policy dims ({meta.get('obs_dim')}, {meta.get('action_count')}) do not "
            f"match environment ({env.obs_dim}, {env.action_count})"
        )
    fp = meta.get("fingerprint")
    if fp and env.fingerprint and fp != env.fingerprint:
        raise IncompatiblePolicyError(
            "policy was trained against a different environment "
            f"(fingerprint {fp[:12]} vs {env.fingerprint[:12]})"
        )


def evaluate_policy(
    env: Env,
    policy,
    episodes: int,
    seed: int,
    environment_tag: str = "env",
    policy_meta: dict | None = None,
) -> EvalReport:
    """Greedy rollouts; deterministic given the seed, side-effect free on the policy."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    _check_compat(env, policy, policy_meta)
    returns = np.zeros(episodes)
    lengths = np.zeros(episodes)
    successes = 0
    traces: list[list[int]] = []
    for ep in range(episodes):
        obs = env.reset(seed=seed) if ep == 0 else env.reset()
        trace: list[int] = []
        total = 0.0
        done = False
        goal = False
        while not done:
            action = greedy_action(policy, obs)
            trace.append(action)
            res = env.step(action)
            total += res.reward
            obs = res.observation
            done = res.done
            goal = res.info["goal"]
        returns[ep] = total
        lengths[ep] = len(trace)
        successes += 1 if goal else 0
        traces.append(trace)
    return EvalReport(
        environment=environment_tag,
        episodes=episodes,
        mean_return=float(returns.mean()),
        std_return=float(returns.std()),
        mean_length=float(lengths.mean()),
        std_length=float(lengths.std()),
        success_rate=successes / episodes,
        coa=traces,
    )


def _coa_agreement(a: list[list[int]], b: list[list[int]]) -> float:
    """Mean shared-prefix fraction over paired episodes.

    Greedy policies only diverge where stochastic outcomes differ, so this
    is 1.0 exactly on deterministic scenarios and decays with divergence.
    """
    scores = []
    for ta, tb in zip(a, b):
        prefix = 0
        for x, y in zip(ta, tb):
            if x != y:
                break
            prefix += 1
        scores.append(prefix / max(len(ta), len(tb), 1))
    return float(np.mean(scores)) if scores else 1.0


@dataclass
class TransferReport:
    world: EvalReport
    sim: EvalReport | None
    optimal_return: float | None
    return_gap: float | None
    normalized_gap: float | None
    world_gap_to_optimal: float | None
    coa_agreement: float | None
    world_pairs_in_model: float | None

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(include_traces=False),
            "sim": self.sim.to_dict(include_traces=False) if self.sim else None,
            "optimal_return": self.optimal_return,
            "return_gap": self.return_gap,
            "normalized_gap": self.normalized_gap,
            "world_gap_to_optimal": self.world_gap_to_optimal,
            "coa_agreement": self.coa_agreement,
            "world_pairs_in_model": self.world_pairs_in_model,
        }


def transfer_eval(
    policy,
    world_env: Env,
    sim_env: Env | None = None,
    episodes: int = 50,
    seed: int = 0,
    optimal_return: float | None = None,
    policy_meta: dict | None = None,
) -> TransferReport:
    """Run the same greedy policy in the world (and optionally its source sim).

    The normalised gap is |world return - sim return| / max(1, |optimal|),
    and the report also notes what fraction of the (obs, action) pairs the
    policy visited in the world were ever seen by the model -- the coverage
    diagnostic that explains widening gaps on starved datasets.
    """
    _check_compat(world_env, policy, policy_meta)
    world_report = evaluate_policy(world_env, policy, episodes, seed, "world")
    sim_report = None
    agreement = None
    gap = None
    norm_gap = None
    coverage = None
    if sim_env is not None:
        _check_compat(sim_env, policy, policy_meta)
        sim_report = evaluate_policy(sim_env, policy, episodes, seed, "sim")
        agreement = _coa_agreement(sim_report.coa, world_report.coa)
        gap = abs(world_report.mean_return - sim_report.mean_return)
        if optimal_return is not None:
            norm_gap = gap / max(1.0, abs(optimal_return))
        if isinstance(sim_env, EmpiricalSim):
            coverage = _world_coverage(world_env, policy, sim_env.model, episodes, seed)
    world_gap = None
    if optimal_return is not None:
        world_gap = abs(world_report.mean_return - optimal_return) / max(
            1.0, abs(optimal_return)
        )
    return TransferReport(
        world=world_report,
        sim=sim_report,
        optimal_return=optimal_return,
        return_gap=gap,
        normalized_gap=norm_gap,
        world_gap_to_optimal=world_gap,
        coa_agreement=agreement,
        world_pairs_in_model=coverage,
    )


def _world_coverage(world_env, policy, model: EmpiricalModel, episodes, seed) -> float:
    seen = 0
    known = 0
    for ep in range(episodes):
        obs = world_env.reset(seed=seed) if ep == 0 else world_env.reset()
        done = False
        while not done:
            action = greedy_action(policy, obs)
            seen += 1
            if model.has_pair(obs, action):
                known += 1
            res = world_env.step(action)
            obs = res.observation
            done = res.done
    return known / seen if seen else 1.0


# --- fidelity ----------------------------------------------------------------

@dataclass
class PairFidelity:
    obs: Observation
    action: int
    visits: int
    tv_distance: float


@dataclass
class FidelityReport:
    visit_threshold: int
    reachable_pairs: int
    visited_pairs: int
    coverage: float
    confident_pairs: int
    low_confidence_pairs: int
    max_tv_confident: float
    mean_tv_confident: float
    pairs: list[PairFidelity]
    aliased_observations: list[Observation]

    def to_dict(self, include_pairs: bool = True) -> dict:
        doc = {
            "visit_threshold": self.visit_threshold,
            "reachable_pairs": self.reachable_pairs,
            "visited_pairs": self.visited_pairs,
            "coverage": self.coverage,
            "confident_pairs": self.confident_pairs,
            "low_confidence_pairs": self.low_confidence_pairs,
            "max_tv_confident": self.max_tv_confident,
            "mean_tv_confident": self.mean_tv_confident,
            "aliased_observations": [list(o) for o in self.aliased_observations],
        }
        if include_pairs:
            doc["pairs"] = [
                {
                    "obs": list(p.obs),
                    "action": p.action,
                    "visits": p.visits,
                    "tv_distance": p.tv_distance,
                }
                for p in self.pairs
            ]
        return doc


def _tv_distance(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def fidelity_report(
    model: EmpiricalModel,
    scenario: Scenario,
    visit_threshold: int = 200,
    max_obs: int = 100_000,
) -> FidelityReport:
    """Total-variation distance between the model and the exact world law.

    Computed per reachable (observation, action) pair.  Pairs with at least
    ``visit_threshold`` visits are held to the fidelity bar; everything
    below it (including never-visited pairs) counts as low-confidence.
    Observation aliasing -- distinct world states sharing a rendered
    observation but disagreeing in projected dynamics -- is also flagged;
    this desk world is observation-Markov, so any entry here is a bug.
    """
    sources = [
        obs
        for obs in reachable_observations(scenario, max_obs=max_obs)
        if obs[scenario.objective_flag] != 1
    ]
    pairs: list[PairFidelity] = []
    confident_tv = []
    reachable = 0
    visited = 0
    low_confidence = 0
    for obs in sources:
        for action in scenario.actions:
            reachable += 1
            exact = {
                next_obs: p for next_obs, p in exact_transition(scenario, obs, action)
            }
            if model.has_pair(obs, action.id):
                visited += 1
                visits = sum(model.outcome_counts(obs, action.id).values())
                tv = _tv_distance(model.distribution(obs, action.id), exact)
                pairs.append(PairFidelity(obs, action.id, visits, tv))
                if visits >= visit_threshold:
                    confident_tv.append(tv)
                else:
                    low_confidence += 1
            else:
                low_confidence += 1

    # In this world the state is the observation, so the projection groups
    # are singletons; the check still runs so wider-state worlds get audited.
    groups: dict[bytes, list[Observation]] = {}
    for obs in sources:
        groups.setdefault(encode_obs(obs), []).append(obs)
    aliased = []
    for members in groups.values():
        if len(members) < 2:
            continue
        baseline = None
        for state in members:
            dists = [
                {o: p for o, p in exact_transition(scenario, state, a)}
                for a in scenario.actions
            ]
            if baseline is None:
                baseline = dists
            elif any(_tv_distance(d, b) > 1e-12 for d, b in zip(dists, baseline)):
                aliased.append(members[0])
                break

    return FidelityReport(
        visit_threshold=visit_threshold,
        reachable_pairs=reachable,
        visited_pairs=visited,
        coverage=visited / reachable if reachable else 1.0,
        confident_pairs=len(confident_tv),
        low_confidence_pairs=low_confidence,
        max_tv_confident=max(confident_tv) if confident_tv else 0.0,
        mean_tv_confident=float(np.mean(confident_tv)) if confident_tv else 0.0,
        pairs=pairs,
        aliased_observations=aliased,
    )


# --- game design study --------------------------------------------------------

@dataclass
class HorizonOutcome:
    max_steps: int
    optimal_return: float
    trained_return: float
    success_rate: float
    within_tolerance: bool
    converged: bool


@dataclass
class MaxStepsStudy:
    shortest_path: int
    tolerance: float
    rows: list[HorizonOutcome]

    def to_dict(self) -> dict:
        return {
            "shortest_path": self.shortest_path,
            "tolerance": self.tolerance,
            "rows": [
                {
                    "max_steps": r.max_steps,
                    "optimal_return": r.optimal_return,
                    "trained_return": r.trained_return,
                    "success_rate": r.success_rate,
                    "within_tolerance": r.within_tolerance,
                    "converged": r.converged,
                }
                for r in self.rows
            ],
        }


def max_steps_study(
    model: EmpiricalModel,
    scenario: Scenario,
    max_steps_values,
    train_config: TrainConfig,
    eval_episodes: int = 300,
    seed: int = 0,
    tolerance: float = 0.05,
) -> MaxStepsStudy:
    """Train one agent per game horizon on the same model, re-gaming the sim.

    Convergence means the trained greedy return lands within ``tolerance``
    of the horizon-adjusted value-iteration optimum AND the goal is actually
    reached; a horizon too short for any success path is reported as
    non-converged even though its (purely negative) optimum is trivially
    matched.
    """
    rows = []
    for max_steps in max_steps_values:
        config = SimConfig.from_model(model, max_steps=max_steps)
        sim = EmpiricalSim(model, config, seed=seed)
        result = train_q_learning(sim, train_config)
        eval_sim = EmpiricalSim(model, config, seed=seed)
        report = evaluate_policy(eval_sim, result.policy, eval_episodes, seed, "sim")
        solution = value_iteration(scenario, horizon=max_steps)
        within = abs(report.mean_return - solution.optimal_return) <= tolerance * max(
            1.0, abs(solution.optimal_return)
        )
        rows.append(
            HorizonOutcome(
                max_steps=int(max_steps),
                optimal_return=solution.optimal_return,
                trained_return=report.mean_return,
                success_rate=report.success_rate,
                within_tolerance=within,
                converged=within and report.success_rate > 0.0,
            )
        )
    return MaxStepsStudy(
        shortest_path=shortest_success_path(scenario),
        tolerance=tolerance,
        rows=rows,
    )


# --- report export -------------------------------------------------------------

def write_report_json(doc: dict, path) -> None:
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def rows_to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row.get(c, "") for c in columns])
    return buf.getvalue()


def write_report_csv(rows: list[dict], columns, path) -> None:
    Path(path).write_text(rows_to_csv(rows, columns), encoding="utf-8")
