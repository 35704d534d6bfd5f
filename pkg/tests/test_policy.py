import dataclasses
import math

import numpy as np
import pytest

from prmlab.envs import CraftDag
from prmlab.errors import ProtocolError
from prmlab.features import FeatureMap
from prmlab.policy import (
    LinearPolicy,
    TabularPolicy,
    behavior_clone,
    expert_trajectories,
    replay_actions,
    rollout,
    rollout_batch,
)
from prmlab.seeding import rng_from


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def test_uniform_logits_give_uniform_distribution():
    env = CraftDag.generate(2, [2], horizon=6, n_tasks=1, seed=0)
    assert len(env.action_names) == 4
    task = env.task_list()[0]
    state = env.reset(task, 0)
    policy = TabularPolicy(env.action_names)
    probs = policy.action_distribution(state)
    assert np.allclose(probs, [0.25, 0.25, 0.25, 0.25])


def test_softmax_two_logits_matches_closed_form(small_grid):
    task = small_grid.task_list()[0]
    state = small_grid.reset(task, 0)
    policy = TabularPolicy(small_grid.action_names)
    policy.logits[policy.state_key(state)] = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    reduced = dataclasses.replace(state, legal=state.legal[:2])  # up, down
    probs = policy.action_distribution(reduced)
    e = math.e
    assert probs[0] == pytest.approx(e / (e + 1), abs=1e-12)  # ~0.7311
    assert probs[1] == pytest.approx(1 / (e + 1), abs=1e-12)  # ~0.2689


def test_temperature_zero_is_greedy_with_first_index_tiebreak(small_grid):
    task = small_grid.task_list()[0]
    state = small_grid.reset(task, 0)
    policy = TabularPolicy(small_grid.action_names, temperature=0.0)
    # all-equal logits: argmax ties resolve to the first action
    probs = policy.action_distribution(state)
    assert probs[0] == 1.0 and probs[1:].sum() == 0.0
    assert policy.greedy_action(state) == state.legal[0]


def test_normalization_and_masking(small_grid):
    task = small_grid.task_list()[0]
    state = small_grid.reset(task, 0)
    policy = TabularPolicy(small_grid.action_names)
    rng = rng_from("norm")
    policy.logits[policy.state_key(state)] = rng.normal(size=5) * 3
    probs = policy.action_distribution(state)
    assert abs(probs.sum() - 1.0) <= 1e-9
    # masking: dropping actions from the legal set removes their mass entirely
    reduced = dataclasses.replace(state, legal=state.legal[:3])
    reduced_probs = policy.action_distribution(reduced)
    assert len(reduced_probs) == 3
    assert abs(reduced_probs.sum() - 1.0) <= 1e-9


def test_terminal_state_distribution_is_protocol_error(small_grid):
    task = small_grid.task_list()[0]
    traj = replay_actions(
        small_grid, task, 0, [a.payload for a in small_grid.expert_actions(task)]
    )
    policy = TabularPolicy(small_grid.action_names)
    with pytest.raises(ProtocolError):
        policy.action_distribution(traj.final_state)


def test_entropy_monotone_in_temperature(small_grid):
    task = small_grid.task_list()[0]
    state = small_grid.reset(task, 0)
    policy = TabularPolicy(small_grid.action_names)
    rng = rng_from("entropy")
    policy.logits[policy.state_key(state)] = rng.normal(size=5) * 2
    entropies = []
    for temp in (0.0, 0.3, 0.7, 1.0, 2.0, 10.0):
        entropies.append(_entropy(policy.with_temperature(temp).action_distribution(state)))
    assert all(b >= a - 1e-12 for a, b in zip(entropies, entropies[1:]))


def test_rollout_reproducible_and_seed_sensitivity(small_grid):
    task = small_grid.task_list()[0]
    policy = TabularPolicy(small_grid.action_names)
    a = rollout(policy, small_grid, task, seed=42)
    b = rollout(policy, small_grid, task, seed=42)
    assert a.action_payloads == b.action_payloads
    assert a.observation_payloads == b.observation_payloads
    assert a.outcome.value == b.outcome.value


def test_rollout_horizon_one():
    from prmlab.envs import GridNav

    env = GridNav.from_layouts(
        3, 1, [{"id": "h1", "start": [0, 0], "goal": [1, 0], "horizon": 1}]
    )
    policy = TabularPolicy(env.action_names)
    traj = rollout(policy, env, env.get_task("h1"), seed=0)
    assert len(traj) == 1
    assert traj.final_state.terminal


def test_rollout_batch_counts_and_distinct_replicates(small_grid):
    tasks = small_grid.task_list()[:3]
    policy = TabularPolicy(small_grid.action_names)
    trajectories = rollout_batch(policy, small_grid, tasks, n_per_task=2, seed=0)
    assert len(trajectories) == 6
    # replicates of the same task use disjoint derived seeds
    first, second = trajectories[0], trajectories[1]
    assert first.task.id == second.task.id
    assert first.seed != second.seed
    assert first.action_payloads != second.action_payloads


def test_grad_log_prob_matches_finite_difference(small_grid):
    task = small_grid.task_list()[0]
    state = small_grid.reset(task, 0)
    policy = TabularPolicy(small_grid.action_names, temperature=0.7)
    rng = rng_from("pol-grad")
    key = policy.state_key(state)
    policy.logits[key] = rng.normal(size=5)
    action = state.legal[2]
    grads = policy.grad_log_prob(state, action)[key]
    h = 1e-6
    for i in range(5):
        policy.logits[key][i] += h
        up = math.log(policy.action_distribution(state)[2])
        policy.logits[key][i] -= 2 * h
        down = math.log(policy.action_distribution(state)[2])
        policy.logits[key][i] += h
        numeric = (up - down) / (2 * h)
        assert grads[i] == pytest.approx(numeric, abs=1e-5)


def test_linear_policy_gradient_ascends_log_prob(small_grid):
    task = small_grid.task_list()[0]
    state = small_grid.reset(task, 0)
    fmap = FeatureMap(small_grid.action_names, window=2)
    policy = LinearPolicy(small_grid.action_names, fmap)
    action = state.legal[1]
    before = policy.action_distribution(state)[1]
    for _ in range(20):
        policy.apply_grads(policy.grad_log_prob(state, action), lr=0.5)
    after = policy.action_distribution(state)[1]
    assert after > before


def test_behavior_clone_reaches_goal_greedily(small_grid):
    tasks = small_grid.task_list()
    policy = TabularPolicy(small_grid.action_names, window=3)
    behavior_clone(policy, small_grid, tasks, n_trajectories=16, epochs=5, seed=0)
    greedy = policy.with_temperature(0.0)
    solved = 0
    for task in tasks:
        traj = rollout(greedy, small_grid, task, seed=1)
        solved += traj.outcome.value >= 1.0
    assert solved == len(tasks)


def test_expert_trajectories_cycle_tasks(small_grid):
    demos = expert_trajectories(small_grid, small_grid.task_list()[:2], 5)
    assert [d.task.id for d in demos[:2]] == [t.id for t in small_grid.task_list()[:2]]
    assert all(d.outcome.value == 1.0 for d in demos)


def test_with_temperature_shares_clone_copies(small_grid):
    policy = TabularPolicy(small_grid.action_names)
    twin = policy.with_temperature(0.5)
    deep = policy.clone()
    state = small_grid.reset(small_grid.task_list()[0], 0)
    policy.logits[policy.state_key(state)] = np.ones(5)
    assert policy.state_key(state) in twin.logits  # shared table
    assert policy.state_key(state) not in deep.logits  # independent copy
