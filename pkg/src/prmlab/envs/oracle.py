"""Exact action values by backward induction over the reachable state graph.

``exact_q`` enumerates every state reachable from the initial state under
all action sequences and computes Q(s, a) = expected outcome reward under
the given policy, exactly. States are merged on (underlying snapshot, step
index, policy key): whenever the policy conditions on less than the full
history (windowed keys, uniform policies), distinct histories that agree on
that key and on the simulator snapshot share one table entry, which is what
keeps small environments enumerable.
"""

from __future__ import annotations

from ..errors import OracleUnavailableError
from .core import Action, Environment, EnvState, Task


class QOracle:
    """Lazy exact Q/V table for one (environment, task, policy) triple."""

    def __init__(self, env: Environment, task: Task, policy, seed: int, max_states: int):
        self.env = env
        self.task = task
        self.policy = policy
        self.seed = seed
        self.max_states = max_states
        self._v_cache: dict = {}
        self._q_cache: dict = {}
        self._rep_state: dict = {}  # first-seen representative per merge key

    def _merge_key(self, state: EnvState):
        return (state.sim, state.step_index, self.policy.state_key(state))

    def v(self, state: EnvState) -> float:
        if state.terminal:
            return state.outcome
        key = self._merge_key(state)
        cached = self._v_cache.get(key)
        if cached is not None:
            return cached
        if len(self._v_cache) >= self.max_states:
            raise OracleUnavailableError(
                f"reachable state count exceeds cap {self.max_states}"
            )
        self._rep_state.setdefault(key, state)
        probs = self.policy.action_distribution(state)
        value = 0.0
        for prob, action in zip(probs, state.legal):
            if prob > 0.0:
                value += prob * self.q(state, action)
        self._v_cache[key] = value
        return value

    def q(self, state: EnvState, action: Action) -> float:
        key = (self._merge_key(state), action.payload)
        cached = self._q_cache.get(key)
        if cached is not None:
            return cached
        next_state, _, reward, terminal = self.env.step(state, action)
        value = reward.value if terminal else self.v(next_state)
        self._q_cache[key] = value
        return value

    def reachable_states(self) -> list[EnvState]:
        """One representative EnvState per merged non-terminal entry."""
        return list(self._rep_state.values())

    @property
    def n_states(self) -> int:
        return len(self._v_cache)


def exact_q(
    env: Environment,
    task: Task,
    policy,
    seed: int = 0,
    max_states: int = 100_000,
) -> QOracle:
    """Exhaustively computed Q^pi for ``task``; raises OracleUnavailableError
    if the merged reachable state count exceeds ``max_states``."""
    oracle = QOracle(env, task, policy, seed, max_states)
    root = env.reset(task, seed)
    # Evaluate every action from every reachable state, not only the policy's
    # support, so the table answers off-policy queries too.
    stack = [root]
    seen = set()
    while stack:
        state = stack.pop()
        if state.terminal:
            continue
        key = oracle._merge_key(state)
        if key in seen:
            continue
        seen.add(key)
        if len(seen) > max_states:
            raise OracleUnavailableError(
                f"reachable state count exceeds cap {max_states}"
            )
        oracle._rep_state.setdefault(key, state)
        for action in state.legal:
            oracle.q(state, action)
            next_state, _, _, terminal = env.step(state, action)
            if not terminal:
                stack.append(next_state)
    oracle.v(root)
    return oracle
