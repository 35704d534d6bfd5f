"""Test-time selection: Best-of-N reranking and step-level beam search.

Both spend extra sampling budget and let a step scorer pick where it goes.
Best-of-N samples full trajectories and keeps the one whose final step
scores highest. Beam search interleaves sampling and pruning: each round
every live beam proposes ``expand_m`` actions, every successor is scored,
and only the global top ``beam_n`` survive. Finished beams keep competing
for slots with their final score until the loop ends.

Candidate expansion is independent per beam (environments are pure and the
model is read-only), so a parallel driver could fan it out; the top-N cut
is the per-iteration join point. This implementation runs sequentially for
determinism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .envs.core import Environment, EnvState, OutcomeReward, Task
from .errors import ConfigurationError, SearchError
from .labeling import CostLedger
from .policy import BasePolicy, Trajectory, TrajStep, rollout
from .rewards import RewardModel
from .seeding import derive_seed, rng_from


@dataclass(frozen=True)
class SearchConfig:
    beam_n: int = 4
    expand_m: int = 4
    max_steps: int = 64
    sample_temperature: float = 0.7

    def __post_init__(self) -> None:
        if self.beam_n < 1 or self.expand_m < 1 or self.max_steps < 1:
            raise ConfigurationError("beam_n, expand_m and max_steps must be >= 1")


@dataclass
class SearchResult:
    best: Trajectory
    all_terminal: list[tuple[Trajectory, float]]
    expansions: int
    trace: list[dict] = field(default_factory=list)


def best_of_n(
    policy: BasePolicy,
    model: RewardModel | None,
    env: Environment,
    task: Task,
    n: int,
    seed: int,
    selector: str = "model",
    temperature: float | None = None,
    ledger: CostLedger | None = None,
) -> SearchResult:
    """Sample ``n`` trajectories and keep the highest-scoring one.

    ``selector`` picks the score: "model" uses the final-step model score,
    "oracle" the true outcome reward, "random" a seeded random number
    (the no-reward-model baseline). Ties go to the lowest sample index.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if selector == "model" and model is None:
        raise ConfigurationError("selector 'model' requires a reward model")
    sampler = policy if temperature is None else policy.with_temperature(temperature)
    rng = rng_from("bon-random", task.id, seed)
    scored: list[tuple[Trajectory, float]] = []
    expansions = 0
    for i in range(n):
        traj = rollout(sampler, env, task, derive_seed(seed, "bon", task.id, i), ledger)
        expansions += len(traj)
        if selector == "model":
            score = model.score_trajectory(traj)[-1].q
        elif selector == "oracle":
            score = traj.outcome.value
        elif selector == "random":
            score = float(rng.random())
        else:
            raise ConfigurationError(f"unknown selector {selector!r}")
        scored.append((traj, score))
    best_index = 0
    for i in range(1, n):
        if scored[i][1] > scored[best_index][1]:
            best_index = i
    return SearchResult(
        best=scored[best_index][0], all_terminal=scored, expansions=expansions
    )


@dataclass
class _Beam:
    state: EnvState
    steps: tuple[TrajStep, ...]
    score: float
    order: int  # insertion order, the stable tie-break


def beam_search(
    policy: BasePolicy,
    model: RewardModel,
    env: Environment,
    task: Task,
    config: SearchConfig,
    seed: int,
    ledger: CostLedger | None = None,
) -> SearchResult:
    """Expand-M / score / keep-top-N search guided by the step scorer.

    The candidate score of a successor is the model's value of the action
    that created it. Deterministic given ``seed``. The first iteration
    expands ``expand_m`` children of the root; afterwards every live beam
    expands and the global top ``beam_n`` survive.
    """
    sampler = policy.with_temperature(config.sample_temperature)
    rng = rng_from("beam", task.id, seed)
    root = env.reset(task, seed)
    beams = [_Beam(state=root, steps=(), score=0.0, order=0)]
    expansions = 0
    trace: list[dict] = []
    for iteration in range(config.max_steps):
        if all(beam.state.terminal for beam in beams):
            break
        pool: list[_Beam] = []
        next_order = 0
        for beam in beams:
            if beam.state.terminal:
                pool.append(
                    _Beam(beam.state, beam.steps, beam.score, order=next_order)
                )
                next_order += 1
                continue
            for _ in range(config.expand_m):
                action = sampler.sample_action(beam.state, rng)
                next_state, observation, _, _ = env.step(beam.state, action)
                expansions += 1
                if ledger is not None:
                    ledger.env_steps += 1
                score = model.score_step(beam.state, action).q
                pool.append(
                    _Beam(
                        state=next_state,
                        steps=beam.steps + (TrajStep(beam.state, action, observation),),
                        score=score,
                        order=next_order,
                    )
                )
                next_order += 1
        pool.sort(key=lambda b: -b.score)  # stable: ties keep insertion order
        beams = pool[: config.beam_n]
        trace.append(
            {
                "iteration": iteration,
                "pool": [
                    {
                        "order": b.order,
                        "score": b.score,
                        "terminal": b.state.terminal,
                        "actions": [s.action.payload for s in b.steps],
                    }
                    for b in pool
                ],
                "retained": [b.order for b in beams],
            }
        )
    terminal = [b for b in beams if b.state.terminal]
    if not terminal:
        raise SearchError(
            f"no terminal path within max_steps={config.max_steps}; "
            f"task horizon is {task.horizon}"
        )
    best = max(terminal, key=lambda b: b.score)  # max keeps the first on ties
    all_terminal = [(_to_trajectory(b, task, seed), b.score) for b in terminal]
    best_traj = _to_trajectory(best, task, seed)
    return SearchResult(
        best=best_traj,
        all_terminal=all_terminal,
        expansions=expansions,
        trace=trace,
    )


def _to_trajectory(beam: _Beam, task: Task, seed: int) -> Trajectory:
    return Trajectory(
        task=task,
        seed=seed,
        steps=beam.steps,
        outcome=OutcomeReward(beam.state.outcome),
        final_state=beam.state,
    )
