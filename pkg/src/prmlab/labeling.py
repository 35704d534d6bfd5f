"""Automatic step-label estimation: Monte-Carlo rollouts and TD with GAE.

Both estimators emit per-step regression targets (Q-hat, A-hat) for reward
model training. The Monte-Carlo path resumes the episode after each step
and pays for fresh rollouts; the TD path prices every step from the current
model's own scores and pays nothing beyond the seed trajectories. The cost
ledger makes that asymmetry measurable.

Indexing convention for the TD residual of the step at time t (q_t is the
model score of the pair acted at time t, v0 stands in for the value before
the first action):

    delta_t = r_t + gamma * q_t - q_{t-1}          for t < T
    delta_T = r_T - q_{T-1}                        (no bootstrap past the end)
    A_t     = delta_t + gamma * lambda * A_{t+1}   (A_T = delta_T)
    Qhat_t  = A_t + q_{t-1}  for t < T;  Qhat_T = r_T exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs.core import BEGIN_ACTION, Environment
from .errors import DataError
from .policy import BasePolicy, Trajectory, replay_actions, rollout
from .seeding import derive_seed, rng_from


@dataclass(frozen=True)
class TdConfig:
    gamma: float = 1.0
    lam: float = 0.95
    v0_mode: str = "learned-begin-token"  # or "zero"

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lambda must be in [0, 1]")
        if self.v0_mode not in ("learned-begin-token", "zero"):
            raise ValueError(f"unknown v0_mode {self.v0_mode!r}")


@dataclass
class CostLedger:
    """Monotone counters of sampling work. Safe under the GIL; increments
    are single bytecode-level operations on ints."""

    env_steps: int = 0
    rollouts: int = 0
    labeled_steps: int = 0

    def count_rollout(self, n_steps: int) -> None:
        if n_steps < 0:
            raise ValueError("negative step count")
        self.rollouts += 1
        self.env_steps += n_steps

    def count_labeled(self, n_steps: int) -> None:
        if n_steps < 0:
            raise ValueError("negative step count")
        self.labeled_steps += n_steps

    def as_dict(self) -> dict:
        return {
            "env_steps": self.env_steps,
            "rollouts": self.rollouts,
            "labeled_steps": self.labeled_steps,
        }


@dataclass(frozen=True)
class LabeledStep:
    """Training target for one step of one trajectory."""

    traj_index: int
    step_index: int
    q_target: float
    adv_target: float | None
    source: str  # mc | td_gae | pvm


# -- GAE kernel --------------------------------------------------------------


def td_residuals(
    q_values, rewards, gamma: float, v0: float
) -> np.ndarray:
    """Per-step TD residuals; ``rewards[t]`` is the instant reward at t."""
    q = np.asarray(q_values, dtype=float)
    r = np.asarray(rewards, dtype=float)
    if q.ndim != 1 or q.shape != r.shape or len(q) == 0:
        raise DataError("q_values and rewards must be equal-length, non-empty 1-d")
    last = len(q) - 1
    prev = np.concatenate(([v0], q[:-1]))
    deltas = r + gamma * q - prev
    deltas[last] = r[last] - prev[last]
    return deltas


def gae_advantages(
    q_values, rewards, gamma: float, lam: float, v0: float
) -> np.ndarray:
    """Backward-recursion GAE over the residuals of ``td_residuals``."""
    deltas = td_residuals(q_values, rewards, gamma, v0)
    advantages = np.empty_like(deltas)
    running = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        running = deltas[t] + gamma * lam * running
        advantages[t] = running
    return advantages


def q_targets(advantages, q_values, rewards, v0: float) -> np.ndarray:
    """Q-hat targets: advantage plus previous score, terminal pinned to r_T."""
    adv = np.asarray(advantages, dtype=float)
    q = np.asarray(q_values, dtype=float)
    prev = np.concatenate(([v0], q[:-1]))
    targets = adv + prev
    targets[-1] = rewards[-1]
    return targets


def sparse_rewards(length: int, outcome: float) -> np.ndarray:
    rewards = np.zeros(length)
    rewards[-1] = outcome
    return rewards


# -- TD estimation -------------------------------------------------------------


def model_v0(model, trajectory: Trajectory, v0_mode: str) -> float:
    if v0_mode == "zero":
        return 0.0
    return model.score_step(trajectory.steps[0].state, BEGIN_ACTION).q


def estimate_td_gae(
    model,
    trajectories: list[Trajectory],
    config: TdConfig,
    ledger: CostLedger | None = None,
) -> list[LabeledStep]:
    """Label every step of every trajectory from the model's frozen scores.

    Scores are read once up front and treated as constants, so the caller
    may train on the returned targets without feedback within the batch.
    """
    labeled: list[LabeledStep] = []
    for traj_index, traj in enumerate(trajectories):
        if len(traj) == 0:
            raise DataError(f"trajectory {traj_index} is empty")
        scores = np.array([s.q for s in model.score_trajectory(traj)])
        rewards = sparse_rewards(len(traj), traj.outcome.value)
        v0 = model_v0(model, traj, config.v0_mode)
        advantages = gae_advantages(scores, rewards, config.gamma, config.lam, v0)
        targets = q_targets(advantages, scores, rewards, v0)
        for t in range(len(traj)):
            labeled.append(
                LabeledStep(
                    traj_index=traj_index,
                    step_index=t,
                    q_target=float(targets[t]),
                    adv_target=float(advantages[t]),
                    source="td_gae",
                )
            )
        if ledger is not None:
            ledger.count_labeled(len(traj))
    return labeled


# -- MC estimation -------------------------------------------------------------


def estimate_mc(
    policy: BasePolicy,
    env: Environment,
    trajectories: list[Trajectory],
    n_mc: int,
    success_threshold: float = 1.0,
    ledger: CostLedger | None = None,
    seed: int = 0,
    replay_check: bool = True,
) -> list[LabeledStep]:
    """Binary Q labels from resumed rollouts.

    For each step t the episode is resumed after the action (state s_{t+1})
    and ``n_mc`` policy rollouts are run; the step's value is 1 if any of
    them finishes with outcome >= ``success_threshold``, else 0. Advantage
    labels are forward differences with q_{-1} := 0. Every rollout step is
    charged to the ledger; resuming itself is free because the recorded
    states are reused.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    labeled: list[LabeledStep] = []
    for traj_index, traj in enumerate(trajectories):
        if len(traj) == 0:
            raise DataError(f"trajectory {traj_index} is empty")
        if replay_check:
            replay_actions(
                env,
                traj.task,
                traj.seed,
                traj.action_payloads,
                expected_observations=traj.observation_payloads,
            )
        q_prev = 0.0
        for t in range(len(traj)):
            resume = traj.steps[t + 1].state if t + 1 < len(traj) else traj.final_state
            if resume.terminal:
                success = resume.outcome >= success_threshold
            else:
                outcomes = [
                    _continue_rollout(
                        policy, env, resume, derive_seed("mc", seed, traj_index, t, j), ledger
                    )
                    for j in range(n_mc)
                ]
                success = any(value >= success_threshold for value in outcomes)
            q_now = 1.0 if success else 0.0
            labeled.append(
                LabeledStep(
                    traj_index=traj_index,
                    step_index=t,
                    q_target=q_now,
                    adv_target=q_now - q_prev,
                    source="mc",
                )
            )
            q_prev = q_now
        if ledger is not None:
            ledger.count_labeled(len(traj))
    return labeled


def _continue_rollout(
    policy: BasePolicy,
    env: Environment,
    state,
    seed: int,
    ledger: CostLedger | None,
) -> float:
    """Sample to termination from ``state``; returns the outcome reward."""
    rng = rng_from("mc-rollout", seed)
    steps = 0
    while not state.terminal:
        action = policy.sample_action(state, rng)
        state, _, _, _ = env.step(state, action)
        steps += 1
    if ledger is not None:
        ledger.count_rollout(steps)
    return state.outcome


def cost_ratio(mc_ledger: CostLedger, td_ledger: CostLedger) -> float:
    """Environment-step cost of MC labeling relative to TD labeling."""
    if td_ledger.env_steps == 0:
        raise DataError("td ledger has zero env steps")
    return mc_ledger.env_steps / td_ledger.env_steps
