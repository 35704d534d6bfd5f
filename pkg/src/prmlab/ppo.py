"""PPO fine-tuning of the policy with a frozen reward model as reward source.

Each iteration collects a batch of rollouts, prices every trajectory with
the chosen reward source (the model's final-step score, or the true
environment outcome for the oracle arm), subtracts a per-step KL penalty
against the reference policy frozen at start, estimates advantages with
the same GAE kernel used for labeling (a small on-policy critic supplies
the step values; the reward model itself stays frozen), and applies
clipped-surrogate updates.

Rollout collection is independent of the reward source: rewards are
attached after sampling, so two runs that differ only in reward_source see
byte-identical trajectory streams until their updates diverge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs.core import Environment, Task
from .errors import ConfigurationError, TrainingDivergedError
from .labeling import CostLedger, TdConfig, gae_advantages, q_targets
from .policy import BasePolicy, Trajectory, accumulate_grads, rollout
from .rewards import RewardModel, RmConfig
from .seeding import derive_seed

REWARD_SOURCES = ("agentprm", "pvm", "orm", "env-oracle")


@dataclass(frozen=True)
class PpoConfig:
    batch_size: int = 16
    learning_rate: float = 0.1
    kl_coeff: float = 1e-3
    temperature: float = 1.0
    horizon: int = 20
    iterations: int = 200
    clip_ratio: float = 0.2
    reward_source: str = "env-oracle"
    epochs_per_batch: int = 4
    value_lr: float = 0.5
    dense_rewards: bool = False
    gae: TdConfig = field(default_factory=TdConfig)
    eval_temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.reward_source not in REWARD_SOURCES:
            raise ConfigurationError(f"unknown reward source {self.reward_source!r}")
        if self.clip_ratio < 0.0:
            raise ConfigurationError("clip_ratio must be >= 0")


@dataclass(frozen=True)
class RlReport:
    iteration: int
    mean_task_score: float
    mean_rm_reward: float
    kl_to_reference: float


def evaluate_policy(
    policy: BasePolicy,
    env: Environment,
    tasks: list[Task],
    temperature: float = 0.0,
    seed: int = 0,
) -> float:
    """Mean outcome over one rollout per task (greedy at temperature 0)."""
    sampler = policy.with_temperature(temperature)
    total = 0.0
    for task in tasks:
        traj = rollout(sampler, env, task, derive_seed("eval", seed, task.id))
        total += traj.outcome.value
    return total / len(tasks)


def _state_kl(policy: BasePolicy, reference: BasePolicy, state) -> float:
    p = policy.action_distribution(state)
    q = reference.action_distribution(state)
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _base_reward(model: RewardModel | None, source: str, traj: Trajectory) -> float:
    if source == "env-oracle":
        return traj.outcome.value
    return model.score_trajectory(traj)[-1].q


def collect_batch(
    policy: BasePolicy,
    env: Environment,
    tasks: list[Task],
    config: PpoConfig,
    seed: int,
    iteration: int,
    ledger: CostLedger | None = None,
) -> list[Trajectory]:
    """One iteration's rollouts. Depends on the policy, the tasks and the
    seed only; the reward source never touches sampling."""
    sampler = policy.with_temperature(config.temperature)
    batch: list[Trajectory] = []
    for j in range(config.batch_size):
        task = tasks[(iteration * config.batch_size + j) % len(tasks)]
        traj = rollout(
            sampler,
            env,
            task,
            derive_seed(seed, "ppo", iteration, j),
            ledger,
            max_steps=config.horizon,
        )
        if len(traj) > 0:
            batch.append(traj)
    return batch


def ppo_train(
    policy: BasePolicy,
    model: RewardModel | None,
    env: Environment,
    tasks: list[Task],
    config: PpoConfig,
    seed: int,
    eval_tasks: list[Task] | None = None,
    ledger: CostLedger | None = None,
    on_iteration=None,
) -> tuple[BasePolicy, list[RlReport]]:
    """Optimize ``policy`` in place; returns it with per-iteration reports.

    ``eval_tasks`` default to the training tasks; pass a held-out split to
    measure generalization. ``on_iteration(k, policy)`` runs after each
    update (checkpoint hook).
    """
    if not tasks:
        raise ConfigurationError("ppo_train needs a non-empty task list")
    if config.reward_source != "env-oracle" and model is None:
        raise ConfigurationError(
            f"reward source {config.reward_source!r} requires a reward model"
        )
    eval_tasks = eval_tasks or tasks
    reference = policy.clone()
    sampler = policy.with_temperature(config.temperature)
    critic = RewardModel(
        RmConfig(variant="pvm", backend="tabular", seed=seed), env.action_names
    )
    reports: list[RlReport] = []

    for iteration in range(config.iterations):
        # -- collect (independent of reward source) --
        batch = collect_batch(policy, env, tasks, config, seed, iteration, ledger)

        # -- price and estimate --
        base_rewards = [_base_reward(model, config.reward_source, t) for t in batch]
        kl_values: list[float] = []
        samples = []  # (state, action, advantage, old_prob)
        for traj, base in zip(batch, base_rewards):
            if config.dense_rewards and model is not None:
                rewards = np.array([s.q for s in model.score_trajectory(traj)])
            else:
                rewards = np.zeros(len(traj))
                rewards[-1] = base
            for t, step in enumerate(traj.steps):
                kl = _state_kl(sampler, reference, step.state)
                kl_values.append(kl)
                rewards[t] -= config.kl_coeff * kl
            critic_q = np.array(
                [critic.score_step(s.state, s.action).q for s in traj.steps]
            )
            v0 = 0.0
            advantages = gae_advantages(
                critic_q, rewards, config.gae.gamma, config.gae.lam, v0
            )
            targets = q_targets(advantages, critic_q, rewards, v0)
            pairs = [(s.state, s.action) for s in traj.steps]
            critic.apply_delta(
                {
                    k: config.value_lr * g
                    for k, g in critic.grads_for(
                        pairs, (critic_q - targets) / len(traj)
                    ).items()
                }
            )
            old_probs = _action_probs(sampler, traj)
            for step, adv, old_p in zip(traj.steps, advantages, old_probs):
                samples.append((step.state, step.action, float(adv), float(old_p)))

        # -- clipped surrogate updates --
        update_sampler = policy.with_temperature(config.temperature)
        for _ in range(config.epochs_per_batch):
            contributions = []
            for state, action, adv, old_p in samples:
                probs = update_sampler.action_distribution(state)
                idx = next(
                    i for i, a in enumerate(state.legal) if a.payload == action.payload
                )
                ratio = float(probs[idx]) / old_p
                # gradient of min(ratio*adv, clip(ratio)*adv): zero once the
                # ratio is clipped in the direction the advantage pushes
                if (adv > 0.0 and ratio < 1.0 + config.clip_ratio) or (
                    adv < 0.0 and ratio > 1.0 - config.clip_ratio
                ):
                    grad = update_sampler.grad_log_prob(state, action)
                    contributions.append((grad, adv * ratio / len(samples)))
            if contributions:
                policy.apply_grads(
                    accumulate_grads(policy, contributions), config.learning_rate
                )

        mean_score = evaluate_policy(
            policy, env, eval_tasks, config.eval_temperature, seed
        )
        report = RlReport(
            iteration=iteration,
            mean_task_score=mean_score,
            mean_rm_reward=float(np.mean(base_rewards)) if base_rewards else 0.0,
            kl_to_reference=float(np.mean(kl_values)) if kl_values else 0.0,
        )
        if not (
            np.isfinite(report.mean_task_score)
            and np.isfinite(report.mean_rm_reward)
            and np.isfinite(report.kl_to_reference)
        ):
            raise TrainingDivergedError(
                f"non-finite PPO report at iteration {iteration}", reports
            )
        reports.append(report)
        if on_iteration is not None:
            on_iteration(iteration, policy)
    return policy, reports


def _action_probs(policy: BasePolicy, traj: Trajectory) -> list[float]:
    out = []
    for step in traj.steps:
        probs = policy.action_distribution(step.state)
        idx = next(
            i for i, a in enumerate(step.state.legal) if a.payload == step.action.payload
        )
        out.append(float(probs[idx]))
    return out
