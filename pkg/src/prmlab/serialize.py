"""Versioned on-disk formats.

Everything is line-oriented text. Checkpoints open with a version header
line followed by a JSON metadata line and sorted parameter entries, so
reruns with the same inputs produce byte-identical files. Trajectory files
store only what is needed to replay (task id, seed, actions, observations,
outcome); loading replays the actions through the environment and verifies
the recorded observations, which catches any drift between data and
environment.

Metrics files isolate the only non-deterministic bit (the generation
timestamp) in their first line; everything after it is reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .envs.core import Environment
from .errors import DataError
from .labeling import LabeledStep
from .policy import BasePolicy, LinearPolicy, TabularPolicy, Trajectory, replay_actions
from .rewards import RewardModel, RmConfig
from .features import FeatureMap

POLICY_HEADER = "prmlab/policy v1"
MODEL_HEADER = "prmlab/reward-model v1"


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -- policies -----------------------------------------------------------------


def save_policy(policy: BasePolicy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(POLICY_HEADER + "\n")
        if isinstance(policy, TabularPolicy):
            meta = {
                "kind": "tabular",
                "action_names": policy.action_names,
                "temperature": policy.temperature,
                "window": policy.window,
                "key_includes_task": policy.key_includes_task,
            }
            fh.write(_dump(meta) + "\n")
            for key in sorted(policy.logits):
                fh.write(_dump([key, list(policy.logits[key])]) + "\n")
        elif isinstance(policy, LinearPolicy):
            meta = {
                "kind": "linear",
                "action_names": policy.action_names,
                "temperature": policy.temperature,
                "window": policy.feature_map.window,
                "obs_buckets": policy.feature_map.obs_buckets,
                "task_buckets": policy.feature_map.task_buckets,
            }
            fh.write(_dump(meta) + "\n")
            fh.write(_dump(policy.weights.tolist()) + "\n")
        else:
            raise DataError(f"cannot serialize policy type {type(policy).__name__}")


def load_policy(path) -> BasePolicy:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != POLICY_HEADER:
            raise DataError(f"unexpected policy header {header!r}")
        meta = json.loads(fh.readline())
        if meta["kind"] == "tabular":
            policy = TabularPolicy(
                meta["action_names"],
                temperature=meta["temperature"],
                window=meta["window"],
                key_includes_task=meta["key_includes_task"],
            )
            for line in fh:
                if not line.strip():
                    continue
                key, logits = json.loads(line)
                policy.logits[key] = np.array(logits)
            return policy
        if meta["kind"] == "linear":
            feature_map = FeatureMap(
                meta["action_names"],
                window=meta["window"],
                obs_buckets=meta["obs_buckets"],
                task_buckets=meta["task_buckets"],
            )
            policy = LinearPolicy(
                meta["action_names"], feature_map, temperature=meta["temperature"]
            )
            policy.weights = np.array(json.loads(fh.readline()))
            return policy
        raise DataError(f"unknown policy kind {meta['kind']!r}")


# -- reward models ----------------------------------------------------------------


def save_model(model: RewardModel, path) -> None:
    cfg = model.config
    meta = {
        "variant": cfg.variant,
        "backend": cfg.backend,
        "window": cfg.window,
        "obs_buckets": cfg.obs_buckets,
        "task_buckets": cfg.task_buckets,
        "hidden": cfg.hidden,
        "seed": cfg.seed,
        "default_value": cfg.default_value,
        "key_includes_task": cfg.key_includes_task,
        "action_names": model.action_names,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MODEL_HEADER + "\n")
        fh.write(_dump(meta) + "\n")
        if model.backend_kind == "tabular":
            for key in sorted(model.backend.values):
                fh.write(_dump([key, model.backend.values[key]]) + "\n")
        else:
            params = {k: v.tolist() for k, v in model.backend.params.items()}
            fh.write(_dump(params) + "\n")


def load_model(path) -> RewardModel:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != MODEL_HEADER:
            raise DataError(f"unexpected model header {header!r}")
        meta = json.loads(fh.readline())
        config = RmConfig(
            variant=meta["variant"],
            backend=meta["backend"],
            window=meta["window"],
            obs_buckets=meta["obs_buckets"],
            task_buckets=meta["task_buckets"],
            hidden=meta["hidden"],
            seed=meta["seed"],
            default_value=meta["default_value"],
            key_includes_task=meta["key_includes_task"],
        )
        model = RewardModel(config, meta["action_names"])
        if config.backend == "tabular":
            for line in fh:
                if not line.strip():
                    continue
                key, value = json.loads(line)
                model.backend.values[key] = value
        else:
            params = json.loads(fh.readline())
            for name, value in params.items():
                model.backend.params[name] = np.array(value)
        return model


# -- trajectories -----------------------------------------------------------------


def save_trajectories(trajectories: list[Trajectory], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            record = {
                "task_id": traj.task.id,
                "seed": traj.seed,
                "actions": traj.action_payloads,
                "observations": traj.observation_payloads,
                "outcome": traj.outcome.value,
            }
            fh.write(_dump(record) + "\n")


def load_trajectories(path, env: Environment) -> list[Trajectory]:
    """Replay each record through ``env``; observation drift raises DataError."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            task = env.get_task(record["task_id"])
            traj = replay_actions(
                env,
                task,
                record["seed"],
                record["actions"],
                expected_observations=record["observations"],
            )
            if traj.outcome.value != record["outcome"]:
                raise DataError(
                    f"replayed outcome {traj.outcome.value} != stored {record['outcome']}"
                )
            out.append(traj)
    return out


# -- labeled steps ----------------------------------------------------------------


def save_labeled_steps(steps: list[LabeledStep], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for step in steps:
            fh.write(
                _dump(
                    {
                        "traj": step.traj_index,
                        "step": step.step_index,
                        "q": step.q_target,
                        "adv": step.adv_target,
                        "source": step.source,
                    }
                )
                + "\n"
            )


def load_labeled_steps(path) -> list[LabeledStep]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(
                LabeledStep(rec["traj"], rec["step"], rec["q"], rec["adv"], rec["source"])
            )
    return out


# -- metrics ------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRecord:
    experiment: str
    metric: str
    x: float
    y: float
    seed: int


class MetricsWriter:
    """Append-only metrics file; the timestamp lives alone on line one."""

    def __init__(self, path):
        self.path = path
        self._records: set[tuple] = set()
        with open(path, "w", encoding="utf-8") as fh:
            stamp = datetime.now(timezone.utc).isoformat()
            fh.write(f"# generated-at {stamp}\n")
            fh.write("# schema experiment\tmetric\tx\ty\tseed\n")

    def add(self, record: MetricsRecord) -> None:
        key = (record.experiment, record.metric, record.x, record.seed)
        if key in self._records:
            raise DataError(f"duplicate metrics record {key}")
        self._records.add(key)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(
                f"{record.experiment}\t{record.metric}\t{record.x!r}\t{record.y!r}"
                f"\t{record.seed}\n"
            )


def read_metrics(path) -> list[MetricsRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            experiment, metric, x, y, seed = line.rstrip("\n").split("\t")
            out.append(MetricsRecord(experiment, metric, float(x), float(y), int(seed)))
    return out


def metrics_body(path) -> list[str]:
    """File content minus the timestamp line; the byte-reproducible part."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    return [line for line in lines if not line.startswith("# generated-at")]


# -- jsonl helpers ----------------------------------------------------------------


def append_jsonl(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(_dump(record) + "\n")


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(_dump(record) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out
