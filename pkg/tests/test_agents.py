"""Tabular Q-learning, greedy selection, and the value-iteration oracle."""

import numpy as np
import pytest

from redsim import agents, presets, world
from redsim.agents import QTable, TrainConfig, greedy_action, train_q_learning, value_iteration
from redsim.collect import TransitionRecord
from redsim.empirical import EmpiricalSim, SimConfig, build_model
from redsim.envapi import GameConfig, compute_reward


def _toy_bandit_model():
    """Two observations, two actions; action 1 reaches the goal flag."""
    start, bad, goal = (0, 0), (1, 0), (0, 1)
    records = []
    for e in range(4):
        records.append(TransitionRecord(2 * e, 0, start, 0, bad, 0.0, True, True))
        records.append(TransitionRecord(2 * e + 1, 0, start, 1, goal, 0.0, True, True))
    model = build_model(records, obs_dim=2, action_count=2)
    config = SimConfig(
        game=GameConfig(max_steps=3, gamma=1.0, goal_index=1),
        flag_worths=(0.0, 10.0),
        action_costs=(1.0, 1.0),
    )
    return model, config


def test_bandit_learns_rewarded_action():
    model, config = _toy_bandit_model()
    sim = EmpiricalSim(model, config, seed=0)
    result = train_q_learning(sim, TrainConfig(episodes=300, seed=0, epsilon_decay_steps=300))
    assert greedy_action(result.policy, (0, 0)) == 1


def test_training_is_deterministic(desk5_model):
    def run():
        sim = EmpiricalSim(desk5_model, seed=4)
        out = train_q_learning(sim, TrainConfig(episodes=300, seed=4))
        return out

    a, b = run(), run()
    assert set(a.policy.values) == set(b.policy.values)
    for key in a.policy.values:
        assert np.array_equal(a.policy.values[key], b.policy.values[key])
    assert a.curve == b.curve


def test_greedy_action_examples():
    q = QTable(3)
    q.values[bytes((0, 0))] = np.array([1.0, 3.0, 2.0])
    assert greedy_action(q, (0, 0)) == 1
    q.values[bytes((0, 1))] = np.array([2.0, 2.0, 1.0])
    assert greedy_action(q, (0, 1)) == 0
    # unseen observation: all-zero values, tie-break to action 0
    assert greedy_action(q, (1, 1)) == 0


def test_greedy_action_invariant_under_positive_scaling():
    rng = np.random.default_rng(11)
    q = QTable(5)
    for _ in range(200):
        obs = tuple(int(v) for v in rng.integers(0, 2, size=4))
        values = rng.normal(size=5)
        q.values[bytes(obs)] = values
        scale = float(rng.uniform(0.1, 50.0))
        scaled = QTable(5)
        scaled.values[bytes(obs)] = values * scale
        assert greedy_action(q, obs) == greedy_action(scaled, obs)


def test_value_iteration_deterministic_chain_arithmetic(det3):
    # single path, all probabilities 1: worths + bonus minus action count
    # 2 discoveries (2 each) + 2 user grabs (10 each) + root (5) + bonus (100) - 6 actions
    solution = value_iteration(det3)
    assert solution.optimal_return == pytest.approx(129.0 - 6.0, abs=1e-9)


def test_value_iteration_expected_retries_and_monte_carlo_agreement():
    # one unreliable required action with unlimited patience: the optimum is
    # analytic (retries are geometric) and a vectorized Monte-Carlo rollout
    # of the greedy policy must agree within 0.5%
    doc = presets.chain_scenario(n_hosts=2, exploit_prob=0.5, escalate_prob=1.0, max_steps=10_000)
    scenario = world.parse_scenario(doc)
    solution = value_iteration(scenario)
    # scan (1) + exploit retries (1/0.5 = 2) + escalate (1) + objective (1) = 5 expected actions
    assert solution.optimal_return == pytest.approx(95.0, abs=1e-6)

    states = world.reachable_observations(scenario)
    index = {obs: i for i, obs in enumerate(states)}
    policy = solution.policy
    worths = scenario.flag_worths()
    rng = np.random.default_rng(20240601)
    episodes = 1_000_000
    state = np.full(episodes, index[scenario.initial_observation()], dtype=np.int64)
    returns = np.zeros(episodes)
    alive = np.ones(episodes, dtype=bool)
    goal_flag = scenario.objective_flag
    for _ in range(scenario.game.max_steps):
        if not alive.any():
            break
        for s in np.unique(state[alive]):
            obs = states[s]
            mask = alive & (state == s)
            action = scenario.actions[policy[obs]]
            outcomes = world.exact_transition(scenario, obs, action)
            n = int(mask.sum())
            if len(outcomes) == 1:
                chosen = np.zeros(n, dtype=np.int64)
            else:
                chosen = (rng.random(n) >= outcomes[0][1]).astype(np.int64)
            for j, (next_obs, _p) in enumerate(outcomes):
                sel = np.where(mask)[0][chosen == j]
                if sel.size == 0:
                    continue
                returns[sel] += compute_reward(worths, obs, next_obs, action.cost)
                state[sel] = index[next_obs]
                if next_obs[goal_flag] == 1:
                    alive[sel] = False
    assert not alive.any()
    mc = float(returns.mean())
    assert abs(mc - solution.optimal_return) / abs(solution.optimal_return) < 0.005


def test_value_iteration_horizon_below_path_is_pure_cost(desk5):
    short = value_iteration(desk5, horizon=5)
    assert short.optimal_return == pytest.approx(-5.0, abs=1e-9)
    shorter = value_iteration(desk5, horizon=3)
    assert shorter.optimal_return == pytest.approx(-3.0, abs=1e-9)


def test_value_iteration_respects_enumeration_budget(mesh):
    with pytest.raises(world.EnumerationBudgetError):
        value_iteration(mesh, max_obs=10)


def test_q_learning_matches_value_iteration_on_model_mdp():
    # deterministic toy model MDP: the greedy return must match planning on
    # the model itself to 1e-6
    o0, o1, o2, goal = (0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)
    chain = [(o0, 0, o1), (o1, 0, o2), (o2, 0, goal)]
    records = []
    for e in range(3):
        for i, (obs, action, nxt) in enumerate(chain):
            records.append(
                TransitionRecord(e, i, obs, action, nxt, 0.0, i == 2, True)
            )
    model = build_model(records, obs_dim=3, action_count=2)
    config = SimConfig(
        game=GameConfig(max_steps=20, gamma=1.0, goal_index=2),
        flag_worths=(1.0, 2.0, 50.0),
        action_costs=(1.0, 1.0),
    )
    planned = agents.value_iteration_model(model, config)
    sim = EmpiricalSim(model, config, seed=2)
    result = train_q_learning(
        sim, TrainConfig(episodes=4000, seed=2, epsilon_end=0.2, epsilon_decay_steps=500)
    )
    rollout = EmpiricalSim(model, config, seed=3)
    obs = rollout.reset(seed=3)
    total = 0.0
    done = False
    while not done:
        res = rollout.step(greedy_action(result.policy, obs))
        total += res.reward
        obs = res.observation
        done = res.done
    assert total == pytest.approx(planned.optimal_return, abs=1e-6)


def test_policy_round_trip_q_table(tmp_path, desk5_model):
    sim = EmpiricalSim(desk5_model, seed=4)
    config = TrainConfig(episodes=200, seed=4)
    result = train_q_learning(sim, config)
    path = tmp_path / "p.policy"
    agents.save_policy(
        result.policy,
        path,
        fingerprint=desk5_model.fingerprint,
        obs_dim=desk5_model.obs_dim,
        train_config=config,
    )
    loaded = agents.load_policy(path)
    assert loaded.algorithm == "q_table"
    assert loaded.fingerprint == desk5_model.fingerprint
    assert set(loaded.policy.values) == set(result.policy.values)
    for key, row in result.policy.values.items():
        assert np.array_equal(loaded.policy.values[key], row)


def test_curve_csv_columns(desk5_model):
    sim = EmpiricalSim(desk5_model, seed=4)
    result = train_q_learning(sim, TrainConfig(episodes=5, seed=4))
    lines = result.curve_csv().splitlines()
    assert lines[0] == "step,episode_return,episode_length,epsilon"
    assert len(lines) == 6
