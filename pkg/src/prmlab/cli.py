"""Command-line pipeline: collect, label, train, eval-bon, eval-beam, rl,
histogram, summarize.

Every verb is a pure function of (--config, --seed): re-running one with
the same inputs rewrites its outputs byte-for-byte, except for the
timestamp line at the top of metrics files. On failure a machine-readable
error record is printed to stderr and the exit code is nonzero.

See README.md for the JSON config schema and a worked end-to-end example.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .envs import make_env, write_task_manifest
from .errors import ConfigurationError, PrmLabError
from .labeling import CostLedger, TdConfig, estimate_mc, estimate_td_gae
from .policy import TabularPolicy, behavior_clone, rollout_batch
from .ppo import PpoConfig, ppo_train
from .rewards import RmConfig, make_reward_model
from .search import SearchConfig, beam_search, best_of_n
from .seeding import derive_seed
from .serialize import (
    MetricsRecord,
    MetricsWriter,
    load_model,
    load_policy,
    load_trajectories,
    save_labeled_steps,
    load_labeled_steps,
    save_model,
    save_policy,
    save_trajectories,
    write_jsonl,
)
from .training import TrainConfig, train


def _load_config(path) -> dict:
    if path is None:
        raise ConfigurationError("--config is required for this verb")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _run_name(cfg: dict) -> str:
    return cfg.get("name", "run")


def _td_config(cfg: dict) -> TdConfig:
    label = cfg.get("label", {})
    return TdConfig(
        gamma=label.get("gamma", 1.0),
        lam=label.get("lambda", 0.95),
        v0_mode=label.get("v0_mode", "learned-begin-token"),
    )


def _build_env(cfg: dict):
    return make_env(cfg["env"])


def _splits(cfg: dict, env):
    n_eval = cfg.get("collect", {}).get("n_eval_tasks", 50)
    return harness.split_tasks(env.task_list(), n_eval)


def _build_policy(cfg: dict, env, train_tasks, seed: int):
    pcfg = cfg.get("policy", {})
    policy = TabularPolicy(
        env.action_names,
        temperature=pcfg.get("temperature", 1.0),
        window=pcfg.get("window", 3),
    )
    behavior_clone(
        policy,
        env,
        train_tasks,
        n_trajectories=pcfg.get("bc_trajectories", 32),
        seed=derive_seed("bc", _run_name(cfg), seed),
    )
    return policy


def _ledger_records(name: str, verb: str, ledger: CostLedger, seed: int):
    for counter, value in ledger.as_dict().items():
        yield MetricsRecord(name, f"{verb}_{counter}", 0.0, float(value), seed)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- verbs ---------------------------------------------------------------------


def cmd_collect(args) -> int:
    cfg = _load_config(args.config)
    env = _build_env(cfg)
    out = _out_dir(args)
    train_tasks, eval_tasks = _splits(cfg, env)
    policy = _build_policy(cfg, env, train_tasks, args.seed)
    ledger = CostLedger()
    trajectories = rollout_batch(
        policy,
        env,
        train_tasks,
        cfg.get("collect", {}).get("n_per_task", 16),
        derive_seed("collect", _run_name(cfg), args.seed),
        ledger,
    )
    save_trajectories(trajectories, out / "trajectories.jsonl")
    save_policy(policy, out / "policy.txt")
    write_task_manifest(env, out / "tasks.tsv")
    (out / "eval_tasks.txt").write_text(
        "".join(t.id + "\n" for t in eval_tasks), encoding="utf-8"
    )
    writer = MetricsWriter(out / "collect.metrics.txt")
    for record in _ledger_records(_run_name(cfg), "collect", ledger, args.seed):
        writer.add(record)
    n_success = sum(1 for t in trajectories if t.outcome.value >= 1.0)
    writer.add(
        MetricsRecord(
            _run_name(cfg), "collect_success_rate", 0.0,
            n_success / len(trajectories), args.seed,
        )
    )
    return 0


def cmd_label(args) -> int:
    cfg = _load_config(args.config)
    env = _build_env(cfg)
    out = _out_dir(args)
    trajectories = load_trajectories(out / "trajectories.jsonl", env)
    ledger = CostLedger()
    label_cfg = cfg.get("label", {})
    if args.method == "mc":
        policy = load_policy(out / "policy.txt")
        labeled = estimate_mc(
            policy,
            env,
            trajectories,
            label_cfg.get("n_mc", 16),
            label_cfg.get("success_threshold", 1.0),
            ledger,
            seed=derive_seed("mc", _run_name(cfg), args.seed),
        )
    else:
        if args.model:
            model = load_model(args.model)
        else:
            model = make_reward_model(
                env, _rm_config(cfg, "agentprm", args.seed)
            )
        labeled = estimate_td_gae(model, trajectories, _td_config(cfg), ledger)
    save_labeled_steps(labeled, out / f"labeled_{args.method}.jsonl")
    writer = MetricsWriter(out / f"label_{args.method}.metrics.txt")
    for record in _ledger_records(_run_name(cfg), f"label_{args.method}", ledger, args.seed):
        writer.add(record)
    return 0


def _rm_config(cfg: dict, variant: str, seed: int) -> RmConfig:
    tcfg = cfg.get("train", {})
    return RmConfig(
        variant=variant,
        backend=tcfg.get("backend", "tabular"),
        window=tcfg.get("window", 3),
        obs_buckets=tcfg.get("obs_buckets", 32),
        task_buckets=tcfg.get("task_buckets", 8),
        hidden=tcfg.get("hidden", 32),
        seed=seed,
    )


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    env = _build_env(cfg)
    out = _out_dir(args)
    trajectories = load_trajectories(out / "trajectories.jsonl", env)
    tcfg = cfg.get("train", {})
    config = TrainConfig(
        beta=args.beta if args.beta is not None else tcfg.get("beta", 1.0),
        epochs=tcfg.get("epochs", 5),
        batch_size=tcfg.get("batch_size", 8),
        learning_rate=tcfg.get("learning_rate"),
        seed=derive_seed("train", _run_name(cfg), args.seed),
        td=_td_config(cfg),
        optimizer=tcfg.get("optimizer", "sgd"),
        adv_on_fixed_labels=tcfg.get("adv_on_fixed_labels", False),
    )
    model = make_reward_model(env, _rm_config(cfg, args.variant, args.seed))
    labels = load_labeled_steps(args.labels) if args.labels else None
    ledger = CostLedger()
    model, reports = train(
        model, trajectories, config, args.variant, ledger, labels=labels
    )
    save_model(model, out / "model.txt")
    write_jsonl(
        out / "loss_log.jsonl",
        (
            {"epoch": r.epoch, "batch": r.batch, "l_q": r.l_q, "l_a": r.l_a, "total": r.total}
            for r in reports
        ),
    )
    writer = MetricsWriter(out / "train.metrics.txt")
    for record in _ledger_records(_run_name(cfg), "train", ledger, args.seed):
        writer.add(record)
    writer.add(
        MetricsRecord(_run_name(cfg), "final_loss", 0.0, reports[-1].total, args.seed)
    )
    return 0


def _eval_setup(cfg: dict, args):
    env = _build_env(cfg)
    out = _out_dir(args)
    policy = load_policy(out / "policy.txt")
    model = load_model(out / "model.txt")
    ids = (out / "eval_tasks.txt").read_text(encoding="utf-8").split()
    eval_tasks = [env.get_task(i) for i in ids]
    return env, out, policy, model, eval_tasks


def cmd_eval_bon(args) -> int:
    cfg = _load_config(args.config)
    env, out, policy, model, eval_tasks = _eval_setup(cfg, args)
    ns = [int(x) for x in args.n.split(",")]
    temperature = cfg.get("search", {}).get("temperature", 0.7)
    ledger = CostLedger()
    writer = MetricsWriter(out / "bon.metrics.txt")
    name = _run_name(cfg)
    for n in ns:
        score = 0.0
        for task in eval_tasks:
            result = best_of_n(
                policy,
                model,
                env,
                task,
                n,
                derive_seed("bon", name, args.seed, task.id),
                temperature=temperature,
                ledger=ledger,
            )
            score += result.best.outcome.value
        writer.add(MetricsRecord(name, "bon", float(n), score / len(eval_tasks), args.seed))
    for record in _ledger_records(name, "eval_bon", ledger, args.seed):
        writer.add(record)
    return 0


def cmd_eval_beam(args) -> int:
    cfg = _load_config(args.config)
    env, out, policy, model, eval_tasks = _eval_setup(cfg, args)
    scfg = cfg.get("search", {})
    config = SearchConfig(
        beam_n=args.beam,
        expand_m=args.expand,
        max_steps=scfg.get("max_steps", 64),
        sample_temperature=scfg.get("temperature", 0.7),
    )
    ledger = CostLedger()
    writer = MetricsWriter(out / "beam.metrics.txt")
    name = _run_name(cfg)
    score = 0.0
    traces = []
    for task in eval_tasks:
        result = beam_search(
            policy,
            model,
            env,
            task,
            config,
            derive_seed("beam", name, args.seed, task.id),
            ledger=ledger,
        )
        score += result.best.outcome.value
        traces.append({"task": task.id, "trace": result.trace})
    writer.add(
        MetricsRecord(
            name,
            f"beam@{args.beam}x{args.expand}",
            float(args.beam * args.expand),
            score / len(eval_tasks),
            args.seed,
        )
    )
    for record in _ledger_records(name, "eval_beam", ledger, args.seed):
        writer.add(record)
    write_jsonl(out / "beam_trace.jsonl", traces)
    return 0


def cmd_rl(args) -> int:
    cfg = _load_config(args.config)
    env = _build_env(cfg)
    out = _out_dir(args)
    policy = load_policy(out / "policy.txt")
    model = None
    if args.reward_source != "env-oracle":
        model = load_model(out / "model.txt")
    train_tasks, eval_tasks = _splits(cfg, env)
    pcfg = cfg.get("ppo", {})
    config = PpoConfig(
        batch_size=pcfg.get("batch_size", 16),
        learning_rate=pcfg.get("learning_rate", 0.1),
        kl_coeff=pcfg.get("kl_coeff", 1e-3),
        temperature=pcfg.get("temperature", 1.0),
        horizon=pcfg.get("horizon", 20),
        iterations=pcfg.get("iterations", 200),
        clip_ratio=pcfg.get("clip_ratio", 0.2),
        reward_source=args.reward_source,
        epochs_per_batch=pcfg.get("epochs_per_batch", 4),
        value_lr=pcfg.get("value_lr", 0.5),
        gae=_td_config(cfg),
    )
    ledger = CostLedger()
    name = _run_name(cfg)
    policy, reports = ppo_train(
        policy,
        model,
        env,
        train_tasks,
        config,
        derive_seed("rl", name, args.seed),
        eval_tasks=eval_tasks,
        ledger=ledger,
    )
    save_policy(policy, out / "rl_policy.txt")
    write_jsonl(
        out / "rl_reports.jsonl",
        (
            {
                "iteration": r.iteration,
                "mean_task_score": r.mean_task_score,
                "mean_rm_reward": r.mean_rm_reward,
                "kl_to_reference": r.kl_to_reference,
            }
            for r in reports
        ),
    )
    writer = MetricsWriter(out / "rl.metrics.txt")
    for r in reports:
        writer.add(
            MetricsRecord(name, "rl_task_score", float(r.iteration), r.mean_task_score, args.seed)
        )
    for record in _ledger_records(name, "rl", ledger, args.seed):
        writer.add(record)
    return 0


def cmd_histogram(args) -> int:
    cfg = _load_config(args.config)
    env = _build_env(cfg)
    out = _out_dir(args)
    model = load_model(out / "model.txt")
    trajectories = load_trajectories(out / "trajectories.jsonl", env)
    table = harness.export_value_histogram(
        model,
        trajectories,
        args.buckets,
        cfg.get("label", {}).get("success_threshold", 1.0),
    )
    harness.save_histogram(table, out / "histogram.tsv")
    return 0


def cmd_summarize(args) -> int:
    from .serialize import read_metrics

    records = []
    for path in args.metrics:
        records.extend(read_metrics(path))
    rows = harness.summarize(records)
    print(harness.render_summary(rows))
    if args.out:
        out = _out_dir(args)
        (out / "summary.csv").write_text(harness.summary_csv(rows), encoding="utf-8")
    return 0


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prmlab",
        description="Process-reward-model pipeline for synthetic agent tasks",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/default", help="output directory")
    sub = parser.add_subparsers(dest="verb", required=True)

    sub.add_parser("collect", help="clone a base policy and sample trajectories")

    p_label = sub.add_parser("label", help="estimate step labels")
    p_label.add_argument("--method", choices=["mc", "td"], required=True)
    p_label.add_argument("--model", help="model checkpoint for td labels")

    p_train = sub.add_parser("train", help="train a reward model")
    p_train.add_argument(
        "--variant", choices=["agentprm", "pvm", "orm"], default="agentprm"
    )
    p_train.add_argument("--beta", type=float, default=None)
    p_train.add_argument("--labels", help="labeled-steps file for fixed-label training")

    p_bon = sub.add_parser("eval-bon", help="Best-of-N evaluation")
    p_bon.add_argument("--n", default="1,2,4,8,16,32,64", help="comma-separated budgets")

    p_beam = sub.add_parser("eval-beam", help="beam-search evaluation")
    p_beam.add_argument("--beam", type=int, required=True)
    p_beam.add_argument("--expand", type=int, required=True)

    p_rl = sub.add_parser("rl", help="PPO fine-tuning of the policy")
    p_rl.add_argument(
        "--reward-source",
        choices=["agentprm", "pvm", "orm", "env-oracle"],
        default="env-oracle",
    )

    p_hist = sub.add_parser("histogram", help="value distribution export")
    p_hist.add_argument("--buckets", type=int, default=10)

    p_sum = sub.add_parser("summarize", help="aggregate metrics files")
    p_sum.add_argument("metrics", nargs="+", help="metrics files")

    return parser


_COMMANDS = {
    "collect": cmd_collect,
    "label": cmd_label,
    "train": cmd_train,
    "eval-bon": cmd_eval_bon,
    "eval-beam": cmd_eval_beam,
    "rl": cmd_rl,
    "histogram": cmd_histogram,
    "summarize": cmd_summarize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except PrmLabError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    except OSError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
