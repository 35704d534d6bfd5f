"""Experiment orchestration: seeded runs of collect -> label -> train -> evaluate.

A spec names an environment config, a model variant/backend, training and
search settings, and the seeds to run. Each seed runs the full pipeline on
its own task split and appends metrics records; two executions of the same
spec produce identical metrics files apart from the timestamp header.

Train/eval task splits are disjoint by construction (stable hash of the
task id), so every reported number is held-out.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import Environment, Task, make_env
from .errors import ConfigurationError, DataError
from .labeling import CostLedger, TdConfig, estimate_mc
from .policy import BasePolicy, TabularPolicy, Trajectory, behavior_clone, rollout, rollout_batch
from .rewards import RewardModel, RmConfig, make_reward_model
from .search import SearchConfig, best_of_n, beam_search
from .seeding import derive_seed, stable_hash64
from .serialize import MetricsRecord, MetricsWriter, save_model, save_policy
from .training import TrainConfig, train


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    env: dict
    model_variant: str = "agentprm"
    backend: str = "tabular"
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    bon_ns: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)
    beam_points: tuple[tuple[int, int], ...] = ((2, 2), (4, 4), (8, 8))
    seeds: tuple[int, ...] = (0,)
    n_eval_tasks: int = 50
    n_per_task: int = 16
    bc_trajectories: int = 32
    policy_window: int | None = 3
    eval_temperature: float = 0.7
    selector: str = "model"  # "random" skips training and reranks blindly
    label_method: str = "td"  # or "mc"
    n_mc: int = 16
    success_threshold: float = 1.0

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigurationError("spec needs at least one seed")
        if self.label_method not in ("td", "mc"):
            raise ConfigurationError(f"unknown label method {self.label_method!r}")


def split_tasks(tasks: list[Task], n_eval: int) -> tuple[list[Task], list[Task]]:
    """Disjoint (train, eval) split keyed by a stable hash of the task id."""
    ranked = sorted(tasks, key=lambda t: stable_hash64("split", t.id))
    eval_tasks = ranked[:n_eval]
    train_tasks = ranked[n_eval:]
    if not train_tasks or not eval_tasks:
        raise ConfigurationError(
            f"cannot split {len(tasks)} tasks into {n_eval} eval + at least 1 train"
        )
    return train_tasks, eval_tasks


def prepare_policy(spec: ExperimentSpec, env: Environment, train_tasks, seed: int):
    policy = TabularPolicy(env.action_names, temperature=1.0, window=spec.policy_window)
    behavior_clone(
        policy,
        env,
        train_tasks,
        n_trajectories=spec.bc_trajectories,
        seed=derive_seed("bc", spec.name, seed),
    )
    return policy


def train_stage(
    spec: ExperimentSpec,
    env: Environment,
    policy: BasePolicy,
    trajectories: list[Trajectory],
    seed: int,
    ledger: CostLedger,
) -> RewardModel:
    config = RmConfig(variant=spec.model_variant, backend=spec.backend, seed=seed)
    model = make_reward_model(env, config)
    train_config = TrainConfig(
        beta=spec.train.beta,
        epochs=spec.train.epochs,
        batch_size=spec.train.batch_size,
        learning_rate=spec.train.learning_rate,
        seed=derive_seed("train", spec.name, seed),
        td=spec.train.td,
        optimizer=spec.train.optimizer,
        reestimate=spec.train.reestimate,
        adv_on_fixed_labels=spec.train.adv_on_fixed_labels,
    )
    labels = None
    if spec.label_method == "mc":
        labels = estimate_mc(
            policy,
            env,
            trajectories,
            spec.n_mc,
            spec.success_threshold,
            ledger,
            seed=derive_seed("mc", spec.name, seed),
        )
    train(model, trajectories, train_config, spec.model_variant, ledger, labels=labels)
    return model


def evaluate_stage(
    spec: ExperimentSpec,
    env: Environment,
    policy: BasePolicy,
    model: RewardModel | None,
    eval_tasks: list[Task],
    seed: int,
    ledger: CostLedger,
) -> list[MetricsRecord]:
    """Greedy baseline, BoN curve, and beam table for one trained seed."""
    records = []
    greedy = policy.with_temperature(0.0)
    total = 0.0
    for task in eval_tasks:
        traj = rollout(greedy, env, task, derive_seed("greedy", seed, task.id), ledger)
        total += traj.outcome.value
    records.append(
        MetricsRecord(spec.name, "greedy", 0.0, total / len(eval_tasks), seed)
    )
    for n in spec.bon_ns:
        score = 0.0
        for task in eval_tasks:
            result = best_of_n(
                policy,
                model,
                env,
                task,
                n,
                derive_seed("bon", spec.name, seed, task.id),
                selector=spec.selector,
                temperature=spec.eval_temperature,
                ledger=ledger,
            )
            score += result.best.outcome.value
        records.append(
            MetricsRecord(spec.name, "bon", float(n), score / len(eval_tasks), seed)
        )
    if spec.selector == "model":
        for beam_n, expand_m in spec.beam_points:
            config = SearchConfig(
                beam_n=beam_n,
                expand_m=expand_m,
                max_steps=spec.search.max_steps,
                sample_temperature=spec.eval_temperature,
            )
            score = 0.0
            for task in eval_tasks:
                result = beam_search(
                    policy,
                    model,
                    env,
                    task,
                    config,
                    derive_seed("beam", spec.name, seed, task.id),
                    ledger=ledger,
                )
                score += result.best.outcome.value
            records.append(
                MetricsRecord(
                    spec.name,
                    f"beam@{beam_n}x{expand_m}",
                    float(beam_n * expand_m),
                    score / len(eval_tasks),
                    seed,
                )
            )
    return records


def run_experiment(spec: ExperimentSpec, out_dir) -> Path:
    """Execute the spec for every seed; returns the metrics file path.

    Checkpoints land next to the metrics file so evaluation can be re-run
    from disk without re-training.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / f"{spec.name}.metrics.txt"
    writer = MetricsWriter(metrics_path)
    for seed in spec.seeds:
        env = make_env(spec.env)
        train_tasks, eval_tasks = split_tasks(env.task_list(), spec.n_eval_tasks)
        collect_ledger = CostLedger()
        label_ledger = CostLedger()
        eval_ledger = CostLedger()
        policy = prepare_policy(spec, env, train_tasks, seed)
        trajectories = rollout_batch(
            policy,
            env,
            train_tasks,
            spec.n_per_task,
            derive_seed("collect", spec.name, seed),
            collect_ledger,
        )
        model = None
        if spec.selector == "model":
            model = train_stage(spec, env, policy, trajectories, seed, label_ledger)
            save_model(model, out / f"{spec.name}.model.seed{seed}.txt")
        save_policy(policy, out / f"{spec.name}.policy.seed{seed}.txt")
        for record in evaluate_stage(
            spec, env, policy, model, eval_tasks, seed, eval_ledger
        ):
            writer.add(record)
        stage_steps = {
            "collect": collect_ledger.env_steps,
            "label": label_ledger.env_steps,
            "eval": eval_ledger.env_steps,
        }
        for stage, steps in stage_steps.items():
            writer.add(
                MetricsRecord(spec.name, f"env_steps_{stage}", 0.0, float(steps), seed)
            )
        writer.add(
            MetricsRecord(
                spec.name, "env_steps_total", 0.0, float(sum(stage_steps.values())), seed
            )
        )
    return metrics_path


# -- value histograms -----------------------------------------------------------


@dataclass
class HistogramTable:
    edges: np.ndarray
    success_counts: np.ndarray
    failure_counts: np.ndarray
    success_mean: float
    failure_mean: float

    def rows(self) -> list[tuple[float, float, int, int]]:
        return [
            (float(self.edges[i]), float(self.edges[i + 1]),
             int(self.success_counts[i]), int(self.failure_counts[i]))
            for i in range(len(self.success_counts))
        ]


def export_value_histogram(
    model: RewardModel,
    trajectories: list[Trajectory],
    buckets: int,
    success_threshold: float = 1.0,
) -> HistogramTable:
    """Per-step score histograms split by trajectory outcome."""
    if buckets < 2:
        raise ConfigurationError("buckets must be >= 2")
    edges = np.linspace(0.0, 1.0, buckets + 1)
    success_scores: list[float] = []
    failure_scores: list[float] = []
    for traj in trajectories:
        scores = [s.q for s in model.score_trajectory(traj)]
        if traj.outcome.value >= success_threshold:
            success_scores.extend(scores)
        else:
            failure_scores.extend(scores)
    if not trajectories:
        warnings.warn("no trajectories supplied; histogram is empty")
    elif not success_scores or not failure_scores:
        empty = "success" if not success_scores else "failure"
        warnings.warn(f"{empty} partition is empty; emitting all-zero histogram")
    success_counts, _ = np.histogram(np.clip(success_scores, 0.0, 1.0), bins=edges)
    failure_counts, _ = np.histogram(np.clip(failure_scores, 0.0, 1.0), bins=edges)
    return HistogramTable(
        edges=edges,
        success_counts=success_counts,
        failure_counts=failure_counts,
        success_mean=float(np.mean(success_scores)) if success_scores else 0.0,
        failure_mean=float(np.mean(failure_scores)) if failure_scores else 0.0,
    )


def save_histogram(table: HistogramTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# schema lo\thi\tsuccess\tfailure\n")
        for lo, hi, s, f in table.rows():
            fh.write(f"{lo!r}\t{hi!r}\t{s}\t{f}\n")
        fh.write(f"# success_mean {table.success_mean!r}\n")
        fh.write(f"# failure_mean {table.failure_mean!r}\n")


# -- aggregation ------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    experiment: str
    metric: str
    x: float
    mean: float
    std: float
    n_seeds: int


def summarize(records: list[MetricsRecord]) -> list[SummaryRow]:
    """Mean +- std over seeds per (experiment, metric, x) cell."""
    seen: set[tuple] = set()
    cells: dict[tuple, list[float]] = {}
    for record in records:
        key = (record.experiment, record.metric, record.x, record.seed)
        if key in seen:
            raise DataError(f"duplicate record for {key}")
        seen.add(key)
        cells.setdefault(key[:3], []).append(record.y)
    rows = []
    for (experiment, metric, x), values in sorted(cells.items()):
        arr = np.array(values)
        rows.append(
            SummaryRow(
                experiment=experiment,
                metric=metric,
                x=x,
                mean=float(arr.mean()),
                std=float(arr.std()),
                n_seeds=len(values),
            )
        )
    return rows


def render_summary(rows: list[SummaryRow]) -> str:
    header = f"{'experiment':<28} {'metric':<14} {'x':>8} {'mean':>10} {'std':>10} {'seeds':>5}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.experiment:<28} {row.metric:<14} {row.x:>8g} "
            f"{row.mean:>10.4f} {row.std:>10.4f} {row.n_seeds:>5}"
        )
    return "\n".join(lines)


def summary_csv(rows: list[SummaryRow]) -> str:
    lines = ["experiment,metric,x,mean,std,n_seeds"]
    for row in rows:
        lines.append(
            f"{row.experiment},{row.metric},{row.x!r},{row.mean!r},{row.std!r},{row.n_seeds}"
        )
    return "\n".join(lines) + "\n"
