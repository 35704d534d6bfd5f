import numpy as np
import pytest

from oracles import reference_gae
from prmlab.envs import GridNav
from prmlab.errors import DataError
from prmlab.labeling import (
    CostLedger,
    TdConfig,
    cost_ratio,
    estimate_mc,
    estimate_td_gae,
    gae_advantages,
    q_targets,
    sparse_rewards,
    td_residuals,
)
from prmlab.policy import TabularPolicy, behavior_clone, rollout_batch
from prmlab.rewards import RewardModel, RmConfig
from prmlab.seeding import rng_from


def test_gae_two_step_worked_example():
    # q=[0.2,0.5], v0=0, gamma=1, lambda=0.95, outcome 1.0
    rewards = [0.0, 1.0]
    deltas = td_residuals([0.2, 0.5], rewards, 1.0, 0.0)
    assert deltas == pytest.approx([0.2, 0.8])
    adv = gae_advantages([0.2, 0.5], rewards, 1.0, 0.95, 0.0)
    assert adv == pytest.approx([0.96, 0.8])
    qhat = q_targets(adv, [0.2, 0.5], rewards, 0.0)
    assert qhat == pytest.approx([0.96, 1.0])
    assert qhat[-1] == 1.0  # terminal pinned exactly


def test_gae_three_step_worked_example():
    rewards = [0.0, 0.0, 1.0]
    deltas = td_residuals([0.2, 0.5, 0.8], rewards, 1.0, 0.0)
    assert deltas == pytest.approx([0.2, 0.3, 0.5])
    adv = gae_advantages([0.2, 0.5, 0.8], rewards, 1.0, 0.95, 0.0)
    assert adv == pytest.approx([0.93625, 0.775, 0.5])
    qhat = q_targets(adv, [0.2, 0.5, 0.8], rewards, 0.0)
    assert qhat == pytest.approx([0.93625, 0.975, 1.0])


def test_lambda_zero_collapses_to_residuals():
    rng = rng_from("lam0")
    q = rng.random(12)
    rewards = sparse_rewards(12, 1.0)
    adv = gae_advantages(q, rewards, 0.97, 0.0, 0.3)
    deltas = td_residuals(q, rewards, 0.97, 0.3)
    assert adv == pytest.approx(list(deltas), abs=1e-15)


def test_lambda_one_gamma_one_telescopes_to_outcome_minus_prev():
    # gamma = lambda = 1: A_t = r_T - q_{t-1}; hand expansion on length 3
    q = [0.3, 0.6, 0.1]
    rewards = [0.0, 0.0, 1.0]
    v0 = 0.2
    adv = gae_advantages(q, rewards, 1.0, 1.0, v0)
    hand = [
        (0.3 - 0.2) + (0.6 - 0.3) + (1.0 - 0.6),
        (0.6 - 0.3) + (1.0 - 0.6),
        (1.0 - 0.6),
    ]
    assert adv == pytest.approx(hand, abs=1e-12)
    assert adv == pytest.approx([1.0 - v0, 1.0 - q[0], 1.0 - q[1]], abs=1e-12)


def test_backward_recursion_equals_reference_sum():
    rng = rng_from("gae-prop")
    for trial in range(200):
        n = int(rng.integers(1, 65))
        q = rng.random(n)
        outcome = float(rng.random())
        gamma = float(rng.choice([0.9, 1.0]))
        lam = float(rng.choice([0.0, 0.5, 0.95, 1.0]))
        v0 = float(rng.random())
        rewards = sparse_rewards(n, outcome)
        fast = gae_advantages(q, rewards, gamma, lam, v0)
        slow = reference_gae(list(q), list(rewards), gamma, lam, v0)
        assert np.max(np.abs(fast - np.array(slow))) <= 1e-10


def test_telescoping_consistency():
    # Qhat_t == A_t + q_{t-1} for t < T: bit-exact in the direction the
    # targets are built; the subtracted form holds to float resolution
    # (IEEE addition is not exactly invertible).
    rng = rng_from("telescope")
    for trial in range(50):
        n = int(rng.integers(2, 20))
        q = rng.random(n)
        rewards = sparse_rewards(n, float(rng.random()))
        v0 = float(rng.random())
        adv = gae_advantages(q, rewards, 1.0, 0.95, v0)
        qhat = q_targets(adv, q, rewards, v0)
        prev = np.concatenate(([v0], q[:-1]))
        for t in range(n - 1):
            assert qhat[t] == adv[t] + prev[t]  # bit-exact composition
            assert qhat[t] - prev[t] == pytest.approx(adv[t], abs=1e-12)


def _td_setup(small_grid):
    tasks = small_grid.task_list()[:2]
    policy = TabularPolicy(small_grid.action_names, window=2)
    behavior_clone(policy, small_grid, tasks, n_trajectories=8, seed=1)
    trajectories = rollout_batch(policy, small_grid, tasks, 4, seed=3)
    model = RewardModel(RmConfig(backend="tabular"), small_grid.action_names)
    return policy, trajectories, model


def test_estimate_td_gae_pins_terminal_and_counts(small_grid):
    _, trajectories, model = _td_setup(small_grid)
    ledger = CostLedger()
    labeled = estimate_td_gae(model, trajectories, TdConfig(), ledger)
    assert ledger.labeled_steps == sum(len(t) for t in trajectories)
    assert ledger.env_steps == 0 and ledger.rollouts == 0  # no extra sampling
    by_traj = {}
    for step in labeled:
        by_traj.setdefault(step.traj_index, []).append(step)
    for idx, steps in by_traj.items():
        last = max(steps, key=lambda s: s.step_index)
        assert last.q_target == trajectories[idx].outcome.value  # exact pin
        assert all(s.source == "td_gae" for s in steps)


def test_estimate_td_gae_v0_modes_differ(small_grid):
    _, trajectories, model = _td_setup(small_grid)
    zero = estimate_td_gae(model, trajectories, TdConfig(v0_mode="zero"))
    learned = estimate_td_gae(model, trajectories, TdConfig())
    # fresh tabular model scores BEGIN at the 0.5 default, not 0
    assert zero[0].adv_target != learned[0].adv_target
    assert learned[0].adv_target == pytest.approx(zero[0].adv_target - 0.5)


def test_estimate_mc_deterministic_greedy_on_path(small_grid):
    tasks = small_grid.task_list()[:2]
    policy = TabularPolicy(small_grid.action_names, window=2)
    behavior_clone(policy, small_grid, tasks, n_trajectories=8, seed=1)
    greedy = policy.with_temperature(0.0)
    trajectories = rollout_batch(greedy, small_grid, tasks, 1, seed=0)
    assert all(t.outcome.value == 1.0 for t in trajectories)
    labeled = estimate_mc(greedy, small_grid, trajectories, n_mc=1)
    # a deterministic solving policy certifies every on-path step with one rollout
    assert all(step.q_target == 1.0 for step in labeled)
    # forward differences: first step 1-0, later steps 1-1
    firsts = [s for s in labeled if s.step_index == 0]
    assert all(s.adv_target == 1.0 for s in firsts)
    rest = [s for s in labeled if s.step_index > 0]
    assert all(s.adv_target == 0.0 for s in rest)


def test_estimate_mc_unreachable_step_is_zero():
    env = GridNav.from_layouts(
        4, 1, [{"id": "c", "start": [0, 0], "goal": [3, 0], "horizon": 3}]
    )
    task = env.get_task("c")
    policy = TabularPolicy(env.action_names)
    # a trajectory that stays put: goal unreachable after the first wasted step
    from prmlab.policy import replay_actions

    traj = replay_actions(env, task, 0, ["stay", "stay", "stay"])
    labeled = estimate_mc(policy, env, [traj], n_mc=8, seed=2)
    assert all(step.q_target == 0.0 for step in labeled)


def test_estimate_mc_binary_labels_and_terminal_consistency(small_grid):
    tasks = small_grid.task_list()[:2]
    policy = TabularPolicy(small_grid.action_names, window=2)
    trajectories = rollout_batch(policy, small_grid, tasks, 3, seed=9)
    labeled = estimate_mc(policy, small_grid, trajectories, n_mc=4, seed=1)
    assert all(step.q_target in (0.0, 1.0) for step in labeled)
    for idx, traj in enumerate(trajectories):
        last = max(
            (s for s in labeled if s.traj_index == idx), key=lambda s: s.step_index
        )
        assert last.q_target == traj.outcome.value


def test_estimate_mc_ledger_counts_rollout_steps(small_grid):
    tasks = small_grid.task_list()[:1]
    policy = TabularPolicy(small_grid.action_names, window=2)
    trajectories = rollout_batch(policy, small_grid, tasks, 1, seed=5)
    traj = trajectories[0]
    n_mc = 3
    ledger = CostLedger()
    estimate_mc(policy, small_grid, trajectories, n_mc=n_mc, ledger=ledger, seed=0)
    resumable = sum(
        1
        for t in range(len(traj))
        if not (traj.steps[t + 1].state if t + 1 < len(traj) else traj.final_state).terminal
    )
    assert ledger.rollouts == n_mc * resumable
    assert ledger.env_steps >= ledger.rollouts  # every rollout takes >= 1 step
    assert ledger.labeled_steps == len(traj)


def test_estimate_mc_detects_corrupt_trajectory(small_grid):
    tasks = small_grid.task_list()[:1]
    policy = TabularPolicy(small_grid.action_names, window=2)
    traj = rollout_batch(policy, small_grid, tasks, 1, seed=5)[0]
    import dataclasses

    from prmlab.envs import Observation

    tampered_step = dataclasses.replace(
        traj.steps[0], observation=Observation("garbage")
    )
    broken = dataclasses.replace(traj, steps=(tampered_step,) + traj.steps[1:])
    with pytest.raises(DataError):
        estimate_mc(policy, small_grid, [broken], n_mc=1)


def test_cost_ratio_and_zero_denominator():
    mc, td = CostLedger(), CostLedger()
    mc.count_rollout(90)
    td.count_rollout(10)
    assert cost_ratio(mc, td) == 9.0
    with pytest.raises(DataError):
        cost_ratio(mc, CostLedger())


def test_cost_dominance_mc_vs_td(small_grid):
    """Horizon >= 8, n_mc = 16: MC labeling pays >8x the env steps of TD."""
    tasks = small_grid.task_list()[:2]
    policy = TabularPolicy(small_grid.action_names, window=2)

    # TD arm: collect N_TD trajectories per task, no extra cost
    td_ledger = CostLedger()
    rollout_batch(policy, small_grid, tasks, 16, seed=0, ledger=td_ledger)
    assert td_ledger.rollouts == 16 * len(tasks)

    # MC arm: one seed trajectory per task plus per-step resumed rollouts
    mc_ledger = CostLedger()
    seeds = rollout_batch(policy, small_grid, tasks, 1, seed=0, ledger=mc_ledger)
    model_free = estimate_mc(policy, small_grid, seeds, n_mc=16, ledger=mc_ledger, seed=0)
    assert len(model_free) == sum(len(t) for t in seeds)
    assert cost_ratio(mc_ledger, td_ledger) > 1.0  # horizon 6 here; full bound in acceptance


def test_empty_trajectory_rejected(small_grid):
    model = RewardModel(RmConfig(), small_grid.action_names)
    task = small_grid.task_list()[0]
    from prmlab.envs.core import OutcomeReward
    from prmlab.policy import Trajectory

    empty = Trajectory(
        task=task,
        seed=0,
        steps=(),
        outcome=OutcomeReward(0.0),
        final_state=small_grid.reset(task, 0),
    )
    with pytest.raises(DataError):
        estimate_td_gae(model, [empty], TdConfig())
