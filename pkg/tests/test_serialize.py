import json

import numpy as np
import pytest

from prmlab.errors import DataError
from prmlab.features import FeatureMap
from prmlab.labeling import LabeledStep, TdConfig, estimate_td_gae
from prmlab.policy import LinearPolicy, TabularPolicy, behavior_clone, rollout_batch
from prmlab.rewards import RmConfig, make_reward_model
from prmlab.serialize import (
    MetricsRecord,
    MetricsWriter,
    load_labeled_steps,
    load_model,
    load_policy,
    load_trajectories,
    metrics_body,
    read_metrics,
    save_labeled_steps,
    save_model,
    save_policy,
    save_trajectories,
)
from prmlab.training import TrainConfig, train
from prmlab.labeling import CostLedger
from prmlab.seeding import rng_from


def _trained_policy(env, seed=0):
    policy = TabularPolicy(env.action_names, window=2)
    behavior_clone(policy, env, env.task_list(), n_trajectories=8, seed=seed)
    return policy


def test_tabular_policy_roundtrip(tmp_path, small_grid):
    policy = _trained_policy(small_grid)
    path = tmp_path / "policy.txt"
    save_policy(policy, path)
    restored = load_policy(path)
    assert restored.window == policy.window
    assert set(restored.logits) == set(policy.logits)
    for key in policy.logits:
        assert np.array_equal(restored.logits[key], policy.logits[key])
    state = small_grid.reset(small_grid.task_list()[0], 0)
    assert np.array_equal(
        restored.action_distribution(state), policy.action_distribution(state)
    )


def test_linear_policy_roundtrip(tmp_path, small_grid):
    fmap = FeatureMap(small_grid.action_names, window=2)
    policy = LinearPolicy(small_grid.action_names, fmap)
    rng = rng_from("lin")
    policy.weights = rng.normal(size=policy.weights.shape)
    path = tmp_path / "linear.txt"
    save_policy(policy, path)
    restored = load_policy(path)
    assert np.array_equal(restored.weights, policy.weights)


def test_model_roundtrip_both_backends(tmp_path, small_grid):
    policy = _trained_policy(small_grid)
    trajectories = rollout_batch(policy, small_grid, small_grid.task_list()[:2], 2, seed=1)
    for backend in ("tabular", "mlp"):
        model = make_reward_model(small_grid, RmConfig(backend=backend, hidden=6))
        train(
            model,
            trajectories,
            TrainConfig(epochs=2, batch_size=2, seed=0),
            "agentprm",
            CostLedger(),
        )
        path = tmp_path / f"model_{backend}.txt"
        save_model(model, path)
        restored = load_model(path)
        assert restored.variant == model.variant
        for traj in trajectories:
            a = [s.q for s in model.score_trajectory(traj)]
            b = [s.q for s in restored.score_trajectory(traj)]
            assert a == b  # exact float roundtrip


def test_checkpoint_headers_are_versioned(tmp_path, small_grid):
    policy = _trained_policy(small_grid)
    path = tmp_path / "policy.txt"
    save_policy(policy, path)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "prmlab/policy v1"
    with pytest.raises(DataError):
        load_model(path)  # policy file is not a model file


def test_trajectories_roundtrip_and_replay_guard(tmp_path, small_grid):
    policy = _trained_policy(small_grid)
    trajectories = rollout_batch(policy, small_grid, small_grid.task_list()[:2], 3, seed=5)
    path = tmp_path / "trajs.jsonl"
    save_trajectories(trajectories, path)
    restored = load_trajectories(path, small_grid)
    assert len(restored) == len(trajectories)
    for a, b in zip(trajectories, restored):
        assert a.action_payloads == b.action_payloads
        assert a.outcome.value == b.outcome.value
        assert a.steps[0].state == b.steps[0].state
    # corrupt one observation: replay verification must catch it
    lines = path.read_text(encoding="utf-8").splitlines()
    record = json.loads(lines[0])
    record["observations"][0] = "tampered"
    lines[0] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(DataError):
        load_trajectories(path, small_grid)


def test_labeled_steps_roundtrip(tmp_path, small_grid):
    policy = _trained_policy(small_grid)
    trajectories = rollout_batch(policy, small_grid, small_grid.task_list()[:1], 2, seed=2)
    model = make_reward_model(small_grid, RmConfig())
    labeled = estimate_td_gae(model, trajectories, TdConfig())
    path = tmp_path / "labeled.jsonl"
    save_labeled_steps(labeled, path)
    restored = load_labeled_steps(path)
    assert restored == labeled


def test_metrics_writer_reader_and_duplicate_guard(tmp_path):
    path = tmp_path / "metrics.txt"
    writer = MetricsWriter(path)
    writer.add(MetricsRecord("exp", "bon", 8.0, 0.5, 0))
    writer.add(MetricsRecord("exp", "bon", 16.0, 0.625, 0))
    with pytest.raises(DataError):
        writer.add(MetricsRecord("exp", "bon", 8.0, 0.9, 0))
    records = read_metrics(path)
    assert records == [
        MetricsRecord("exp", "bon", 8.0, 0.5, 0),
        MetricsRecord("exp", "bon", 16.0, 0.625, 0),
    ]
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# generated-at ")
    assert lines[1].startswith("# schema ")


def test_metrics_body_identical_across_reruns(tmp_path):
    bodies = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.txt"
        writer = MetricsWriter(path)
        writer.add(MetricsRecord("exp", "greedy", 0.0, 1 / 3, 1))
        writer.add(MetricsRecord("exp", "bon", 4.0, 0.1234567890123456789, 1))
        bodies.append(metrics_body(path))
    assert bodies[0] == bodies[1]
    # float fidelity through repr round-trip
    value = read_metrics(tmp_path / "a.txt")[0].y
    assert value == 1 / 3
