"""Step scorers: one model class, three variants, two backends.

A reward model maps a (state, action) pair to a scalar in the
success-probability scale. The ``agentprm``, ``pvm`` and ``orm`` variants
share the scoring machinery and the training loop and differ only in how
their targets are built, which keeps ablations honest.

Backends:

* ``tabular`` -- a value per state-action key (recent-observation window
  plus action), default 0.5 for anything unseen. Exact but memorizing.
* ``mlp`` -- a small tanh network with hand-written gradients over hashed
  features, squashed through a sigmoid so scores live in (0, 1).

Scoring is pure and never touches parameters; concurrent readers are safe.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .envs.core import BEGIN_ACTION, Action, Environment, EnvState
from .errors import ConfigurationError
from .features import PAD_PAYLOAD, FeatureMap
from .labeling import LabeledStep
from .policy import Trajectory
from .seeding import rng_from

VARIANTS = ("agentprm", "pvm", "orm")
BACKENDS = ("tabular", "mlp")


@dataclass(frozen=True)
class RmConfig:
    variant: str = "agentprm"
    backend: str = "tabular"
    window: int = 3
    obs_buckets: int = 32
    task_buckets: int = 8
    hidden: int = 32
    seed: int = 0
    default_value: float = 0.5
    key_includes_task: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True)
class StepScore:
    q: float
    step_index: int


class TabularBackend:
    """One scalar per key; unseen keys read as ``default``."""

    kind = "tabular"

    def __init__(self, default: float = 0.5):
        self.default = default
        self.values: dict[str, float] = {}

    def predict(self, keys: list[str]) -> np.ndarray:
        return np.array([self.values.get(k, self.default) for k in keys])

    def grads(self, keys: list[str], dpred: np.ndarray) -> dict[str, float]:
        grads: dict[str, float] = {}
        for key, g in zip(keys, dpred):
            grads[key] = grads.get(key, 0.0) + float(g)
        return grads

    def apply_delta(self, delta: dict[str, float]) -> None:
        for key, d in delta.items():
            self.values[key] = self.values.get(key, self.default) - d

    def clone(self) -> "TabularBackend":
        twin = TabularBackend(self.default)
        twin.values = dict(self.values)
        return twin


class MlpBackend:
    """d -> hidden tanh -> sigmoid scalar, with manual backprop."""

    kind = "mlp"

    def __init__(self, dim: int, hidden: int, seed: int):
        rng = rng_from("mlp-init", seed, dim, hidden)
        self.params = {
            "W1": rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
            "b2": np.zeros(1),
        }

    def predict(self, X: np.ndarray) -> np.ndarray:
        _, _, out = self._forward(X)
        return out

    def _forward(self, X: np.ndarray):
        z = X @ self.params["W1"] + self.params["b1"]
        a = np.tanh(z)
        s = a @ self.params["w2"] + self.params["b2"][0]
        out = 1.0 / (1.0 + np.exp(-s))
        return z, a, out

    def grads(self, X: np.ndarray, dpred: np.ndarray) -> dict[str, np.ndarray]:
        _, a, out = self._forward(X)
        ds = dpred * out * (1.0 - out)
        da = np.outer(ds, self.params["w2"])
        dz = da * (1.0 - a * a)
        return {
            "W1": X.T @ dz,
            "b1": dz.sum(axis=0),
            "w2": a.T @ ds,
            "b2": np.array([ds.sum()]),
        }

    def apply_delta(self, delta: dict[str, np.ndarray]) -> None:
        for name, d in delta.items():
            self.params[name] -= d

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in ("W1", "b1", "w2", "b2")])

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for name in ("W1", "b1", "w2", "b2"):
            size = self.params[name].size
            self.params[name] = flat[offset : offset + size].reshape(
                self.params[name].shape
            )
            offset += size

    def clone(self) -> "MlpBackend":
        twin = copy.deepcopy(self)
        return twin


class RewardModel:
    def __init__(self, config: RmConfig, action_names: list[str]):
        self.config = config
        self.action_names = list(action_names)
        self.feature_map = FeatureMap(
            self.action_names,
            window=config.window,
            obs_buckets=config.obs_buckets,
            task_buckets=config.task_buckets,
        )
        if config.backend == "tabular":
            self.backend = TabularBackend(config.default_value)
        else:
            self.backend = MlpBackend(self.feature_map.dim, config.hidden, config.seed)

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def backend_kind(self) -> str:
        return self.backend.kind

    # -- scoring units -------------------------------------------------------

    def pair_key(self, state: EnvState, action: Action) -> str:
        parts = [state.task.id] if self.config.key_includes_task else []
        parts += self.feature_map.recent_observations(state)
        parts.append(action.payload)
        return "\x1e".join(parts)

    def _units(self, pairs: list[tuple[EnvState, Action]]):
        if self.backend.kind == "tabular":
            return [self.pair_key(s, a) for s, a in pairs]
        return np.array(
            [self.feature_map.step_features(s, a.payload) for s, a in pairs]
        )

    # -- scoring ---------------------------------------------------------------

    def predict_pairs(self, pairs: list[tuple[EnvState, Action]]) -> np.ndarray:
        if not pairs:
            return np.zeros(0)
        return self.backend.predict(self._units(pairs))

    def score_step(self, state: EnvState, action: Action) -> StepScore:
        value = float(self.predict_pairs([(state, action)])[0])
        return StepScore(q=value, step_index=state.step_index)

    def score_trajectory(self, trajectory: Trajectory) -> list[StepScore]:
        """One score per action in order; the last one is the trajectory
        score used by Best-of-N (for every variant)."""
        if len(trajectory) == 0:
            raise ValueError("cannot score an empty trajectory")
        pairs = [(step.state, step.action) for step in trajectory.steps]
        values = self.predict_pairs(pairs)
        return [StepScore(q=float(v), step_index=i) for i, v in enumerate(values)]

    # -- training plumbing -----------------------------------------------------

    def grads_for(self, pairs: list[tuple[EnvState, Action]], dpred: np.ndarray):
        return self.backend.grads(self._units(pairs), dpred)

    def apply_delta(self, delta) -> None:
        self.backend.apply_delta(delta)

    def clone(self) -> "RewardModel":
        twin = RewardModel.__new__(RewardModel)
        twin.config = self.config
        twin.action_names = list(self.action_names)
        twin.feature_map = self.feature_map
        twin.backend = self.backend.clone()
        return twin


def make_reward_model(env: Environment, config: RmConfig) -> RewardModel:
    return RewardModel(config, env.action_names)


# -- baseline targets -------------------------------------------------------------


def implied_advantages(
    model: RewardModel, trajectory: Trajectory, v0_mode: str = "learned-begin-token"
) -> np.ndarray:
    """The model's own step-to-step score differences along a trajectory.

    Under deterministic transitions the predecessor's score stands in for
    the state value, so score(t) - score(t-1) is the model's advantage
    estimate for the action at t; at t=0 the begin-token score (or 0) is
    the predecessor.
    """
    scores = np.array([s.q for s in model.score_trajectory(trajectory)])
    if v0_mode == "zero":
        v0 = 0.0
    else:
        v0 = model.score_step(trajectory.steps[0].state, BEGIN_ACTION).q
    prev = np.concatenate(([v0], scores[:-1]))
    return scores - prev


def make_targets_pvm(trajectories: list[Trajectory]) -> list[LabeledStep]:
    """Every step inherits its trajectory's outcome reward as the Q target."""
    labeled = []
    for traj_index, traj in enumerate(trajectories):
        for t in range(len(traj)):
            labeled.append(
                LabeledStep(
                    traj_index=traj_index,
                    step_index=t,
                    q_target=traj.outcome.value,
                    adv_target=None,
                    source="pvm",
                )
            )
    return labeled


def make_targets_orm(
    trajectories: list[Trajectory],
) -> list[tuple[Trajectory, float]]:
    """One target per trajectory: its outcome reward."""
    return [(traj, traj.outcome.value) for traj in trajectories]
