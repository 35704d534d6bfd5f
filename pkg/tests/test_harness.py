import warnings

import numpy as np
import pytest

from prmlab.envs import make_env
from prmlab.errors import ConfigurationError, DataError
from prmlab.harness import (
    ExperimentSpec,
    evaluate_stage,
    export_value_histogram,
    render_summary,
    run_experiment,
    split_tasks,
    summarize,
    summary_csv,
)
from prmlab.labeling import CostLedger
from prmlab.policy import TabularPolicy, behavior_clone, rollout_batch
from prmlab.rewards import RmConfig, make_reward_model
from prmlab.serialize import MetricsRecord, load_model, load_policy, metrics_body, read_metrics
from prmlab.training import TrainConfig, train

ENV_CFG = {
    "family": "gridnav",
    "width": 4,
    "height": 4,
    "horizon": 6,
    "tasks": 10,
    "seed": 21,
}


def _tiny_spec(name="tiny", **overrides):
    base = dict(
        name=name,
        env=ENV_CFG,
        train=TrainConfig(epochs=2, batch_size=4, seed=0),
        bon_ns=(1, 2),
        beam_points=((2, 2),),
        seeds=(0,),
        n_eval_tasks=4,
        n_per_task=2,
        bc_trajectories=8,
    )
    base.update(overrides)
    return ExperimentSpec(**base)


def test_spec_defaults_match_operating_points():
    spec = ExperimentSpec(name="x", env=ENV_CFG)
    assert spec.bon_ns == (1, 2, 4, 8, 16, 32, 64)
    assert spec.beam_points == ((2, 2), (4, 4), (8, 8))
    assert spec.n_per_task == 16
    assert spec.n_mc == 16
    assert spec.eval_temperature == 0.7
    assert spec.bc_trajectories == 32


def test_split_tasks_disjoint_and_stable():
    env = make_env(ENV_CFG)
    train_a, eval_a = split_tasks(env.task_list(), 4)
    train_b, eval_b = split_tasks(env.task_list(), 4)
    assert [t.id for t in train_a] == [t.id for t in train_b]
    assert [t.id for t in eval_a] == [t.id for t in eval_b]
    assert not {t.id for t in train_a} & {t.id for t in eval_a}
    assert len(eval_a) == 4
    with pytest.raises(ConfigurationError):
        split_tasks(env.task_list(), len(env.task_list()))


def test_run_experiment_writes_expected_metrics(tmp_path):
    spec = _tiny_spec()
    path = run_experiment(spec, tmp_path)
    records = read_metrics(path)
    metrics = {r.metric for r in records}
    assert {"greedy", "bon", "beam@2x2", "env_steps_total"} <= metrics
    bon_xs = sorted(r.x for r in records if r.metric == "bon")
    assert bon_xs == [1.0, 2.0]
    # budget bookkeeping: total equals the sum of the stage ledgers
    by_metric = {r.metric: r.y for r in records}
    assert by_metric["env_steps_total"] == (
        by_metric["env_steps_collect"]
        + by_metric["env_steps_label"]
        + by_metric["env_steps_eval"]
    )


def test_run_experiment_reproducible_byte_for_byte(tmp_path):
    spec = _tiny_spec()
    a = run_experiment(spec, tmp_path / "a")
    b = run_experiment(spec, tmp_path / "b")
    assert metrics_body(a) == metrics_body(b)


def test_stage_isolation_reevaluate_from_checkpoints(tmp_path):
    spec = _tiny_spec()
    path = run_experiment(spec, tmp_path)
    env = make_env(spec.env)
    _, eval_tasks = split_tasks(env.task_list(), spec.n_eval_tasks)
    policy = load_policy(tmp_path / "tiny.policy.seed0.txt")
    model = load_model(tmp_path / "tiny.model.seed0.txt")
    records = evaluate_stage(spec, env, policy, model, eval_tasks, 0, CostLedger())
    stored = [
        r for r in read_metrics(path) if r.metric in {"greedy", "bon", "beam@2x2"}
    ]
    assert records == stored


def test_random_selector_skips_training(tmp_path):
    spec = _tiny_spec(name="rand", selector="random")
    path = run_experiment(spec, tmp_path)
    records = read_metrics(path)
    assert not (tmp_path / "rand.model.seed0.txt").exists()
    assert {r.metric for r in records if r.metric.startswith("beam")} == set()
    assert any(r.metric == "bon" for r in records)


def _trained_model_with_data(env):
    tasks = env.task_list()
    policy = TabularPolicy(env.action_names, window=2)
    behavior_clone(policy, env, tasks, n_trajectories=8, seed=0)
    trajectories = rollout_batch(policy, env, tasks[:4], 4, seed=2)
    model = make_reward_model(env, RmConfig())
    train(model, trajectories, TrainConfig(epochs=5, batch_size=4, seed=0), "agentprm", CostLedger())
    return model, trajectories


def test_histogram_point_mass():
    env = make_env(ENV_CFG)
    model = make_reward_model(env, RmConfig())  # untouched: every score 0.5
    policy = TabularPolicy(env.action_names, window=2)
    trajectories = rollout_batch(policy, env, env.task_list()[:2], 2, seed=0)
    table = export_value_histogram(model, trajectories, buckets=10)
    combined = table.success_counts + table.failure_counts
    assert (combined > 0).sum() == 1  # single populated bucket
    assert combined.sum() == sum(len(t) for t in trajectories)


def test_histogram_separates_success_from_failure():
    env = make_env(ENV_CFG)
    model, trajectories = _trained_model_with_data(env)
    outcomes = {t.outcome.value for t in trajectories}
    assert outcomes == {0.0, 1.0}
    table = export_value_histogram(model, trajectories, buckets=10)
    assert table.success_mean > table.failure_mean


def test_histogram_warnings_and_errors():
    env = make_env(ENV_CFG)
    model = make_reward_model(env, RmConfig())
    policy = TabularPolicy(env.action_names, window=2)
    failures = [
        t
        for t in rollout_batch(policy, env, env.task_list()[:3], 3, seed=1)
        if t.outcome.value == 0.0
    ]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = export_value_histogram(model, failures, buckets=5)
    assert any("success partition" in str(w.message) for w in caught)
    assert table.success_counts.sum() == 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        empty = export_value_histogram(model, [], buckets=5)
    assert any("no trajectories" in str(w.message) for w in caught)
    assert empty.success_counts.sum() == 0 and empty.failure_counts.sum() == 0
    with pytest.raises(ConfigurationError):
        export_value_histogram(model, failures, buckets=1)


def test_summarize_means_and_stddev():
    records = [
        MetricsRecord("e", "bon", 8.0, 0.4, 0),
        MetricsRecord("e", "bon", 8.0, 0.6, 1),
        MetricsRecord("e", "bon", 8.0, 0.5, 2),
        MetricsRecord("e", "greedy", 0.0, 0.3, 0),
    ]
    rows = summarize(records)
    bon = next(r for r in rows if r.metric == "bon")
    assert bon.mean == pytest.approx(0.5)
    assert bon.std == pytest.approx(np.std([0.4, 0.6, 0.5]))
    assert bon.n_seeds == 3
    single = next(r for r in rows if r.metric == "greedy")
    assert single.std == 0.0 and single.n_seeds == 1
    # missing cells are absent, not zero
    assert {(r.metric, r.x) for r in rows} == {("bon", 8.0), ("greedy", 0.0)}
    text = render_summary(rows)
    assert "bon" in text and "greedy" in text
    csv = summary_csv(rows)
    assert csv.splitlines()[0] == "experiment,metric,x,mean,std,n_seeds"


def test_summarize_rejects_duplicates():
    records = [
        MetricsRecord("e", "bon", 8.0, 0.4, 0),
        MetricsRecord("e", "bon", 8.0, 0.7, 0),
    ]
    with pytest.raises(DataError):
        summarize(records)
