"""Deterministic sparse-reward POMDP interface.

An environment family owns a registry of tasks. Episodes are purely
functional: ``step`` maps an (EnvState, Action) pair to a fresh successor
state and never mutates its inputs, so a single state can be branched from
many times (beam search relies on this). Reward is sparse: every
non-terminal step pays 0 and the outcome arrives with the terminal
transition.

Actions outside the alphabet are rejected; actions in the alphabet that
cannot take effect (bumping a grid edge, crafting without ingredients) are
observable no-ops that consume one step of the horizon budget.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..errors import ConfigurationError, IllegalActionError, ProtocolError


@dataclass(frozen=True)
class Task:
    """A single episode specification: identifier, symbolic goal, step budget."""

    id: str
    instruction: str
    horizon: int

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ConfigurationError(f"task {self.id!r}: horizon must be >= 1")


@dataclass(frozen=True)
class Observation:
    payload: str


@dataclass(frozen=True)
class Action:
    payload: str


#: Reserved pseudo-action scored by reward models to obtain a value estimate
#: for "before the first action". Never legal in any environment.
BEGIN_ACTION = Action("<begin>")


@dataclass(frozen=True)
class OutcomeReward:
    """Episode outcome in [0, 1]; nonzero only at episode end."""

    value: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"outcome reward {self.value} outside [0, 1]")


@dataclass(frozen=True)
class EnvState:
    """Interaction history plus the simulator's hidden snapshot.

    ``observations`` holds o_0 .. o_t and ``actions`` a_0 .. a_{t-1}; the
    pending observation is ``observations[-1]``. ``sim`` is the
    environment-specific underlying state (opaque, hashable) that the agent
    never sees directly; ``outcome`` is the reward emitted when this state
    was reached (0.0 for every non-terminal state).
    """

    task: Task
    observations: tuple[Observation, ...]
    actions: tuple[Action, ...]
    sim: tuple
    terminal: bool
    outcome: float
    legal: tuple[Action, ...]

    @property
    def step_index(self) -> int:
        return len(self.actions)

    @property
    def current_observation(self) -> Observation:
        return self.observations[-1]


class Environment(ABC):
    """Base class for deterministic sparse-reward environment families.

    Instances carry no per-episode mutable state; all episode state lives in
    EnvState values, so concurrent episodes are safe as long as a single
    EnvState is not stepped from two execution contexts at once.
    """

    family: str = "abstract"

    def __init__(self, tasks: Iterable[Task]):
        self._tasks: dict[str, Task] = {}
        for task in tasks:
            if task.id in self._tasks:
                raise ConfigurationError(f"duplicate task id {task.id!r}")
            self._tasks[task.id] = task

    # -- task registry -----------------------------------------------------

    def task_list(self) -> list[Task]:
        return list(self._tasks.values())

    def get_task(self, task_id: str) -> Task:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise ConfigurationError(
                f"unknown task id {task_id!r} for family {self.family!r}"
            ) from None

    # -- alphabet ----------------------------------------------------------

    @property
    @abstractmethod
    def action_names(self) -> list[str]:
        """Fixed, ordered action alphabet of the family."""

    def action(self, payload: str) -> Action:
        if payload not in self._action_set():
            raise IllegalActionError(f"{payload!r} not in action alphabet")
        return Action(payload)

    def _action_set(self) -> frozenset[str]:
        cached = getattr(self, "_alphabet_cache", None)
        if cached is None:
            cached = frozenset(self.action_names)
            self._alphabet_cache = cached
        return cached

    # -- episode protocol ----------------------------------------------------

    def reset(self, task: Task, seed: int) -> EnvState:
        """Initial state for ``task``. Deterministic given (task, seed)."""
        registered = self.get_task(task.id)
        if registered != task:
            raise ConfigurationError(f"task {task.id!r} does not match registry entry")
        sim, obs_payload = self._initial(task, seed)
        alphabet = tuple(Action(name) for name in self.action_names)
        return EnvState(
            task=task,
            observations=(Observation(f"{obs_payload} s=0"),),
            actions=(),
            sim=sim,
            terminal=False,
            outcome=0.0,
            legal=alphabet,
        )

    def step(
        self, state: EnvState, action: Action
    ) -> tuple[EnvState, Observation, OutcomeReward, bool]:
        """Apply ``action``; returns (next_state, observation, reward, terminal)."""
        if state.terminal:
            raise ProtocolError("step() called on a terminal state")
        if action.payload not in self._action_set():
            raise IllegalActionError(
                f"{action.payload!r} not in alphabet of {self.family!r}"
            )
        sim2, obs_payload, goal_reached = self._transition(state.task, state.sim, action.payload)
        steps_taken = state.step_index + 1
        if goal_reached:
            terminal = True
            reward = self._goal_reward(state.task, sim2)
        elif steps_taken >= state.task.horizon:
            terminal = True
            reward = self._timeout_reward(state.task, sim2)
        else:
            terminal = False
            reward = 0.0
        # the step counter is part of what any history-conditioned agent can
        # see; surfacing it keeps windowed state keys Markov-adequate under
        # a finite horizon
        observation = Observation(f"{obs_payload} s={steps_taken}")
        next_state = EnvState(
            task=state.task,
            observations=state.observations + (observation,),
            actions=state.actions + (action,),
            sim=sim2,
            terminal=terminal,
            outcome=reward if terminal else 0.0,
            legal=() if terminal else state.legal,
        )
        return next_state, observation, OutcomeReward(reward), terminal

    def legal_actions(self, state: EnvState) -> list[Action]:
        """Attemptable actions in ``state``; empty exactly when terminal."""
        return list(state.legal)

    # -- family internals --------------------------------------------------

    @abstractmethod
    def _initial(self, task: Task, seed: int) -> tuple[tuple, str]:
        """(initial sim snapshot, initial observation payload)."""

    @abstractmethod
    def _transition(self, task: Task, sim: tuple, action: str) -> tuple[tuple, str, bool]:
        """(next sim snapshot, observation payload, goal_reached)."""

    def _goal_reward(self, task: Task, sim: tuple) -> float:
        return 1.0

    def _timeout_reward(self, task: Task, sim: tuple) -> float:
        return 0.0

    # -- expert ------------------------------------------------------------

    @abstractmethod
    def expert_actions(self, task: Task) -> list[Action]:
        """Scripted solution used to seed behavior cloning."""


def write_task_manifest(env: Environment, path) -> None:
    """One task per line: id, instruction, horizon (tab-separated)."""
    with open(path, "w", encoding="utf-8") as fh:
        for task in env.task_list():
            fh.write(f"{task.id}\t{task.instruction}\t{task.horizon}\n")


def read_task_manifest(path) -> list[tuple[str, str, int]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            task_id, instruction, horizon = line.split("\t")
            rows.append((task_id, instruction, int(horizon)))
    return rows
