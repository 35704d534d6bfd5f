"""Hashed feature vectors for states and state-action pairs.

The map concatenates task-instruction buckets, recency-tagged buckets over
the last few observations, and a one-hot over the action alphabet (with one
extra slot reserved for the begin pseudo-action). Observation hashing is
tagged with the slot offset so "saw X then Y" and "saw Y then X" land in
different buckets; an order-free bag cannot tell those histories apart.
"""

from __future__ import annotations

import numpy as np

from .envs.core import BEGIN_ACTION, EnvState
from .seeding import stable_bucket

PAD_PAYLOAD = "<pad>"


class FeatureMap:
    def __init__(
        self,
        action_names: list[str],
        window: int = 3,
        obs_buckets: int = 32,
        task_buckets: int = 8,
    ):
        self.action_names = list(action_names)
        self.window = window
        self.obs_buckets = obs_buckets
        self.task_buckets = task_buckets
        self._action_index = {name: i for i, name in enumerate(self.action_names)}
        self._action_index[BEGIN_ACTION.payload] = len(self.action_names)

    @property
    def state_dim(self) -> int:
        return self.task_buckets + self.obs_buckets

    @property
    def dim(self) -> int:
        return self.state_dim + len(self.action_names) + 1

    def recent_observations(self, state: EnvState) -> list[str]:
        """Last ``window`` observation payloads, most recent first, padded."""
        payloads = [obs.payload for obs in state.observations[-self.window:]][::-1]
        payloads += [PAD_PAYLOAD] * (self.window - len(payloads))
        return payloads

    def state_features(self, state: EnvState) -> np.ndarray:
        phi = np.zeros(self.state_dim)
        for token in state.task.instruction.split():
            phi[stable_bucket(f"task|{token}", self.task_buckets)] += 1.0
        for slot, payload in enumerate(self.recent_observations(state)):
            index = stable_bucket(f"obs|{slot}|{payload}", self.obs_buckets)
            phi[self.task_buckets + index] += 1.0
        return phi

    def step_features(self, state: EnvState, action_payload: str) -> np.ndarray:
        phi = np.zeros(self.dim)
        phi[: self.state_dim] = self.state_features(state)
        try:
            offset = self._action_index[action_payload]
        except KeyError:
            raise ValueError(f"action {action_payload!r} not in feature alphabet") from None
        phi[self.state_dim + offset] = 1.0
        return phi
