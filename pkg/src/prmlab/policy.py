"""Stochastic discrete policies, rollouts, and behavior cloning.

Policies map an interaction-history state to a distribution over the legal
actions via temperature-scaled softmax of logits. Two parameterizations:

* ``TabularPolicy`` keeps a logit vector per state key. The key is a
  stable hash of the full history by default, or of a recent
  (observation, action) window when ``window`` is set, which trades
  exactness for transfer to unseen tasks.
* ``LinearPolicy`` computes logits as a weight matrix applied to hashed
  state features; the fallback for state spaces too large for tables.

Evaluating a policy is read-only and safe to share across concurrent
rollouts; parameter updates require exclusive access.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .envs.core import Action, Environment, EnvState, Observation, OutcomeReward, Task
from .errors import DataError, ProtocolError
from .features import FeatureMap
from .seeding import derive_seed, rng_from, stable_digest


@dataclass(frozen=True)
class TrajStep:
    """One interaction: the state acted from, the action, the response."""

    state: EnvState
    action: Action
    observation: Observation


@dataclass(frozen=True)
class Trajectory:
    task: Task
    seed: int
    steps: tuple[TrajStep, ...]
    outcome: OutcomeReward
    final_state: EnvState

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def action_payloads(self) -> list[str]:
        return [step.action.payload for step in self.steps]

    @property
    def observation_payloads(self) -> list[str]:
        return [step.observation.payload for step in self.steps]


def _softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 0.0:
        probs = np.zeros(len(logits))
        probs[int(np.argmax(logits))] = 1.0
        return probs
    scaled = logits / temperature
    scaled = scaled - scaled.max()
    exp = np.exp(scaled)
    return exp / exp.sum()


class BasePolicy:
    """Shared sampling machinery; subclasses provide logits and gradients."""

    def __init__(self, action_names: list[str], temperature: float = 1.0):
        if temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        self.action_names = list(action_names)
        self._action_index = {name: i for i, name in enumerate(self.action_names)}
        self.temperature = temperature

    # -- subclass surface ----------------------------------------------------

    def state_key(self, state: EnvState) -> str:
        raise NotImplementedError

    def _logit_vector(self, state: EnvState) -> np.ndarray:
        """Logits over the full action alphabet."""
        raise NotImplementedError

    def grad_log_prob(self, state: EnvState, action: Action):
        """Parameter-space gradient of log pi(action | state)."""
        raise NotImplementedError

    def apply_grads(self, grads, lr: float) -> None:
        """Ascend: parameters += lr * grads."""
        raise NotImplementedError

    # -- distribution --------------------------------------------------------

    def action_distribution(self, state: EnvState) -> np.ndarray:
        """Probabilities aligned with ``state.legal``. Illegal actions get 0."""
        if state.terminal:
            raise ProtocolError("no action distribution on a terminal state")
        logits = self._logit_vector(state)
        legal_logits = np.array(
            [logits[self._action_index[a.payload]] for a in state.legal]
        )
        return _softmax(legal_logits, self.temperature)

    def sample_action(self, state: EnvState, rng: np.random.Generator) -> Action:
        probs = self.action_distribution(state)
        cdf = np.cumsum(probs)
        idx = int(np.searchsorted(cdf, rng.random(), side="right"))
        idx = min(idx, len(probs) - 1)
        return state.legal[idx]

    def greedy_action(self, state: EnvState) -> Action:
        probs = self.action_distribution(state)
        return state.legal[int(np.argmax(probs))]

    def clone(self) -> "BasePolicy":
        return copy.deepcopy(self)

    def with_temperature(self, temperature: float) -> "BasePolicy":
        """Shallow copy sharing parameters; for read-only sampling use."""
        twin = copy.copy(self)
        twin.temperature = temperature
        return twin


class TabularPolicy(BasePolicy):
    def __init__(
        self,
        action_names: list[str],
        temperature: float = 1.0,
        window: int | None = None,
        key_includes_task: bool = False,
    ):
        super().__init__(action_names, temperature)
        self.window = window
        self.key_includes_task = key_includes_task
        self.logits: dict[str, np.ndarray] = {}

    def state_key(self, state: EnvState) -> str:
        if self.window is None:
            parts = [o.payload for o in state.observations]
            parts += [a.payload for a in state.actions]
            scope = state.task.id if self.key_includes_task else ""
            return "h:" + stable_digest(scope, *parts).hex()
        obs = [o.payload for o in state.observations[-(self.window + 1):]]
        acts = [a.payload for a in state.actions[-self.window:]] if self.window else []
        scope = [state.task.id] if self.key_includes_task else []
        return "w:" + "\x1e".join(scope + obs + acts)

    def _logit_vector(self, state: EnvState) -> np.ndarray:
        vec = self.logits.get(self.state_key(state))
        if vec is None:
            return np.zeros(len(self.action_names))
        return vec

    def grad_log_prob(self, state: EnvState, action: Action):
        if self.temperature == 0.0:
            raise ProtocolError("log-prob gradient undefined at temperature 0")
        probs = self.action_distribution(state)
        grad = np.zeros(len(self.action_names))
        for prob, legal in zip(probs, state.legal):
            grad[self._action_index[legal.payload]] -= prob
        grad[self._action_index[action.payload]] += 1.0
        return {self.state_key(state): grad / self.temperature}

    def apply_grads(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for key, grad in grads.items():
            current = self.logits.get(key)
            if current is None:
                current = np.zeros(len(self.action_names))
                self.logits[key] = current
            current += lr * grad

    def max_deviation(self, other: "TabularPolicy") -> float:
        """Largest absolute logit difference across both tables."""
        keys = set(self.logits) | set(other.logits)
        zero = np.zeros(len(self.action_names))
        worst = 0.0
        for key in keys:
            a = self.logits.get(key, zero)
            b = other.logits.get(key, zero)
            worst = max(worst, float(np.max(np.abs(a - b))))
        return worst


class LinearPolicy(BasePolicy):
    def __init__(
        self,
        action_names: list[str],
        feature_map: FeatureMap,
        temperature: float = 1.0,
    ):
        super().__init__(action_names, temperature)
        self.feature_map = feature_map
        self.weights = np.zeros((len(action_names), feature_map.state_dim))

    def state_key(self, state: EnvState) -> str:
        return "f:" + stable_digest(self.feature_map.state_features(state).tobytes()).hex()

    def _logit_vector(self, state: EnvState) -> np.ndarray:
        return self.weights @ self.feature_map.state_features(state)

    def grad_log_prob(self, state: EnvState, action: Action):
        if self.temperature == 0.0:
            raise ProtocolError("log-prob gradient undefined at temperature 0")
        probs = self.action_distribution(state)
        phi = self.feature_map.state_features(state)
        coeff = np.zeros(len(self.action_names))
        for prob, legal in zip(probs, state.legal):
            coeff[self._action_index[legal.payload]] -= prob
        coeff[self._action_index[action.payload]] += 1.0
        return np.outer(coeff / self.temperature, phi)

    def apply_grads(self, grads: np.ndarray, lr: float) -> None:
        self.weights += lr * grads


def accumulate_grads(policy: BasePolicy, contributions) -> object:
    """Sum per-sample grad_log_prob outputs, scaled: [(grad, coeff), ...]."""
    if isinstance(policy, TabularPolicy):
        total: dict[str, np.ndarray] = {}
        for grad, coeff in contributions:
            for key, vec in grad.items():
                slot = total.get(key)
                if slot is None:
                    total[key] = coeff * vec
                else:
                    slot += coeff * vec
        return total
    total_mat = None
    for grad, coeff in contributions:
        total_mat = coeff * grad if total_mat is None else total_mat + coeff * grad
    return total_mat


# -- rollouts ------------------------------------------------------------------


def rollout(
    policy: BasePolicy,
    env: Environment,
    task: Task,
    seed: int,
    ledger=None,
    max_steps: int | None = None,
) -> Trajectory:
    """Sample one episode. Pure function of (policy parameters, task, seed).

    ``max_steps`` truncates below the task horizon; a truncated episode is
    recorded as a failure (outcome 0) with a non-terminal final state.
    """
    state = env.reset(task, seed)
    rng = rng_from("rollout", task.id, seed)
    steps: list[TrajStep] = []
    while not state.terminal and (max_steps is None or len(steps) < max_steps):
        action = policy.sample_action(state, rng)
        next_state, observation, _, _ = env.step(state, action)
        steps.append(TrajStep(state=state, action=action, observation=observation))
        state = next_state
    if ledger is not None:
        ledger.count_rollout(len(steps))
    return Trajectory(
        task=task,
        seed=seed,
        steps=tuple(steps),
        outcome=OutcomeReward(state.outcome),
        final_state=state,
    )


def rollout_batch(
    policy: BasePolicy,
    env: Environment,
    tasks: list[Task],
    n_per_task: int,
    seed: int,
    ledger=None,
) -> list[Trajectory]:
    """``n_per_task`` rollouts per task with disjoint derived seeds."""
    if n_per_task < 1:
        raise ValueError("n_per_task must be >= 1")
    out = []
    for task in tasks:
        for replicate in range(n_per_task):
            out.append(
                rollout(policy, env, task, derive_seed(seed, task.id, replicate), ledger)
            )
    return out


def replay_actions(
    env: Environment,
    task: Task,
    seed: int,
    action_payloads: list[str],
    expected_observations: list[str] | None = None,
) -> Trajectory:
    """Rebuild a trajectory by replaying its actions from reset(task, seed)."""
    state = env.reset(task, seed)
    steps: list[TrajStep] = []
    for i, payload in enumerate(action_payloads):
        if state.terminal:
            raise DataError(f"replay of task {task.id!r}: actions continue past terminal")
        action = env.action(payload)
        next_state, observation, _, _ = env.step(state, action)
        if (
            expected_observations is not None
            and observation.payload != expected_observations[i]
        ):
            raise DataError(
                f"replay of task {task.id!r} diverged at step {i}: "
                f"{observation.payload!r} != {expected_observations[i]!r}"
            )
        steps.append(TrajStep(state=state, action=action, observation=observation))
        state = next_state
    return Trajectory(
        task=task,
        seed=seed,
        steps=tuple(steps),
        outcome=OutcomeReward(state.outcome),
        final_state=state,
    )


# -- behavior cloning ------------------------------------------------------------


def expert_trajectories(
    env: Environment, tasks: list[Task], n_trajectories: int, seed: int = 0
) -> list[Trajectory]:
    out = []
    for i in range(n_trajectories):
        task = tasks[i % len(tasks)]
        actions = [a.payload for a in env.expert_actions(task)]
        out.append(replay_actions(env, task, derive_seed("expert", seed, i), actions))
    return out


def behavior_clone(
    policy: BasePolicy,
    env: Environment,
    tasks: list[Task],
    n_trajectories: int = 32,
    epochs: int = 3,
    lr: float = 1.0,
    seed: int = 0,
) -> BasePolicy:
    """Cross-entropy cloning of scripted expert trajectories, in place."""
    demos = expert_trajectories(env, tasks, n_trajectories, seed)
    pairs = [(step.state, step.action) for traj in demos for step in traj.steps]
    rng = rng_from("bc", seed)
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        for idx in order:
            state, action = pairs[int(idx)]
            policy.apply_grads(policy.grad_log_prob(state, action), lr)
    return policy
