"""Reward model training on the combined value + advantage-difference loss.

The objective is L_Q + beta * L_A where L_Q regresses each step's score
onto its Q target and L_A regresses the *difference* between consecutive
step scores onto the difference of their targets (both with the 1/2
factor). For the flagship variant, targets are re-estimated from the
frozen current model before every gradient step; the value and progress
estimates therefore co-evolve with the model, batch by batch.

Training is single-writer over the model parameters. Everything is
deterministic given (initial parameters, trajectories, config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs.core import BEGIN_ACTION
from .errors import ConfigurationError, DataError, TrainingDivergedError
from .labeling import CostLedger, LabeledStep, TdConfig, estimate_td_gae
from .policy import Trajectory
from .rewards import RewardModel, make_targets_orm, make_targets_pvm

DEFAULT_LEARNING_RATES = {"tabular": 0.5, "mlp": 0.1}


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    epochs: int = 5
    batch_size: int = 8  # trajectories per batch
    learning_rate: float | None = None  # None: backend default
    seed: int = 0
    td: TdConfig = field(default_factory=TdConfig)
    optimizer: str = "sgd"  # or "adam"
    reestimate: str = "batch"  # or "epoch"
    adv_on_fixed_labels: bool = False

    def __post_init__(self) -> None:
        if self.beta < 0.0:
            raise ConfigurationError("beta must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.reestimate not in ("batch", "epoch"):
            raise ConfigurationError(f"unknown reestimate mode {self.reestimate!r}")

    def resolved_lr(self, backend_kind: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATES[backend_kind]


@dataclass(frozen=True)
class LossReport:
    epoch: int
    batch: int
    l_q: float
    l_a: float
    total: float


# -- losses -----------------------------------------------------------------


def loss_q(predictions, targets) -> float:
    """Mean over items of 1/2 (prediction - target)^2."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or len(p) == 0:
        raise DataError("predictions and targets must be equal-length, non-empty 1-d")
    with np.errstate(over="ignore"):  # inf is caught by the divergence check
        return float(np.mean(0.5 * (p - t) ** 2))


def _grouped(steps: list[LabeledStep]) -> dict[int, list[int]]:
    """Positions per trajectory; enforces contiguous, 0-based, ordered groups."""
    groups: dict[int, list[int]] = {}
    closed: set[int] = set()
    current = None
    for pos, step in enumerate(steps):
        if step.traj_index != current:
            if step.traj_index in closed:
                raise DataError("steps of one trajectory are not contiguous")
            if current is not None:
                closed.add(current)
            current = step.traj_index
            groups[current] = []
        if step.step_index != len(groups[current]):
            raise DataError(
                f"trajectory {step.traj_index}: steps out of order at {step.step_index}"
            )
        groups[current].append(pos)
    return groups


def _adv_pair_errors(
    predictions: np.ndarray,
    steps: list[LabeledStep],
    v0_predictions: dict[int, float] | None,
    v0_targets: dict[int, float] | None,
) -> list[tuple[int, int, float]]:
    """(position, predecessor position or -1 for v0, raw error) per pair."""
    groups = _grouped(steps)
    v0_predictions = v0_predictions or {}
    v0_targets = v0_targets or {}
    pairs: list[tuple[int, int, float]] = []
    for traj_index, positions in groups.items():
        v0_pred = v0_predictions.get(traj_index, 0.0)
        v0_tgt = v0_targets.get(traj_index, 0.0)
        for rank, pos in enumerate(positions):
            if rank == 0:
                dpred = predictions[pos] - v0_pred
                dtgt = steps[pos].q_target - v0_tgt
                pairs.append((pos, -1, float(dpred - dtgt)))
            else:
                prev = positions[rank - 1]
                dpred = predictions[pos] - predictions[prev]
                dtgt = steps[pos].q_target - steps[prev].q_target
                pairs.append((pos, prev, float(dpred - dtgt)))
    return pairs


def loss_a(
    predictions,
    steps: list[LabeledStep],
    v0_predictions: dict[int, float] | None = None,
    v0_targets: dict[int, float] | None = None,
) -> float:
    """Mean over adjacent-step pairs of 1/2 (delta-prediction - delta-target)^2.

    The t=0 pair compares against v0 on both sides (0.0 when not supplied).
    """
    p = np.asarray(predictions, dtype=float)
    if len(p) != len(steps):
        raise DataError("predictions and steps must align")
    if len(steps) == 0:
        raise DataError("no steps")
    pairs = _adv_pair_errors(p, steps, v0_predictions, v0_targets)
    return float(np.mean([0.5 * e * e for _, _, e in pairs]))


# -- optimizers ----------------------------------------------------------------


class SgdOptimizer:
    def delta(self, grads, lr: float):
        return {k: lr * g for k, g in grads.items()}


class AdamOptimizer:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def delta(self, grads, lr: float):
        self.t += 1
        out = {}
        for key, g in grads.items():
            m = self.m.get(key, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(key, 0.0) * self.beta2 + (1 - self.beta2) * (g * g)
            self.m[key], self.v[key] = m, v
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            out[key] = lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def make_optimizer(name: str):
    return AdamOptimizer() if name == "adam" else SgdOptimizer()


# -- gradient assembly -----------------------------------------------------------


def batch_gradients(
    model: RewardModel,
    batch: list[Trajectory],
    labeled: list[LabeledStep],
    beta: float,
    v0_mode: str,
    include_adv: bool = True,
    v0_targets: dict[int, float] | None = None,
):
    """Loss values and parameter gradients of L_Q + beta*L_A on one batch.

    ``labeled`` must be aligned with ``batch`` (traj_index = position in
    batch). Targets are constants, including the frozen begin-token values
    ``v0_targets`` (defaulting to the model's current begin scores, which
    equal the values frozen at estimation time inside the train loop).
    Returns (l_q, l_a, grads); the advantage term contributes no gradient
    when beta == 0 or ``include_adv`` is false, but l_a is still reported.
    """
    if not labeled:
        raise DataError("empty batch")
    step_pairs = []
    for step in labeled:
        traj = batch[step.traj_index]
        ts = traj.steps[step.step_index]
        step_pairs.append((ts.state, ts.action))
    predictions = model.predict_pairs(step_pairs)

    targets = np.array([s.q_target for s in labeled])
    if model.backend_kind == "tabular":
        # tabular entries live on the success-probability scale
        targets = np.clip(targets, 0.0, 1.0)
    clamped = [
        LabeledStep(s.traj_index, s.step_index, float(t), s.adv_target, s.source)
        for s, t in zip(labeled, targets)
    ]

    l_q = loss_q(predictions, targets)
    dloss = (predictions - targets) / len(labeled)

    if not include_adv:
        return l_q, 0.0, model.grads_for(step_pairs, dloss)

    use_begin = v0_mode == "learned-begin-token" and any(
        s.source == "td_gae" for s in labeled
    )
    v0_predictions: dict[int, float] = {}
    begin_pairs: dict[int, tuple] = {}
    if use_begin:
        for traj_index, traj in enumerate(batch):
            pair = (traj.steps[0].state, BEGIN_ACTION)
            begin_pairs[traj_index] = pair
            v0_predictions[traj_index] = float(model.predict_pairs([pair])[0])
    if v0_targets is None:
        v0_targets = dict(v0_predictions)  # frozen at estimation time

    l_a = loss_a(predictions, clamped, v0_predictions, v0_targets)

    if beta > 0.0:
        pairs = _adv_pair_errors(predictions, clamped, v0_predictions, v0_targets)
        dadv = np.zeros(len(labeled))
        dbegin: dict[int, float] = {}
        for pos, prev, err in pairs:
            err /= len(pairs)
            dadv[pos] += err
            if prev >= 0:
                dadv[prev] -= err
            elif use_begin:
                traj_index = labeled[pos].traj_index
                dbegin[traj_index] = dbegin.get(traj_index, 0.0) - err
        dloss = dloss + beta * dadv
        all_pairs = list(step_pairs)
        dpred = list(dloss)
        for traj_index, err in dbegin.items():
            all_pairs.append(begin_pairs[traj_index])
            dpred.append(beta * err)
        grads = model.grads_for(all_pairs, np.array(dpred))
    else:
        grads = model.grads_for(step_pairs, dloss)
    return l_q, l_a, grads


def _orm_gradients(model: RewardModel, batch: list[Trajectory]):
    pairs = [(t.steps[-1].state, t.steps[-1].action) for t in batch]
    targets = np.array([value for _, value in make_targets_orm(batch)])
    predictions = model.predict_pairs(pairs)
    l_q = loss_q(predictions, targets)
    grads = model.grads_for(pairs, (predictions - targets) / len(batch))
    return l_q, grads


# -- training loop -----------------------------------------------------------------


def train(
    model: RewardModel,
    trajectories: list[Trajectory],
    config: TrainConfig,
    variant: str | None = None,
    ledger: CostLedger | None = None,
    labels: list[LabeledStep] | None = None,
    on_epoch_end=None,
) -> tuple[RewardModel, list[LossReport]]:
    """Gradient descent on the variant's objective; mutates ``model``.

    * agentprm -- per batch, re-estimate (Qhat, Ahat) from the frozen
      current model, then one step on L_Q + beta*L_A. Passing ``labels``
      (e.g. Monte-Carlo estimates) trains on those fixed targets instead,
      with the advantage term only if config.adv_on_fixed_labels.
    * pvm -- L_Q against outcome-per-step targets.
    * orm -- L_Q on the final step against the trajectory outcome.
    """
    variant = variant or model.variant
    if variant not in ("agentprm", "pvm", "orm"):
        raise ConfigurationError(f"unknown training variant {variant!r}")
    for traj in trajectories:
        if len(traj) == 0:
            raise DataError("cannot train on an empty trajectory")
    lr = config.resolved_lr(model.backend_kind)
    optimizer = make_optimizer(config.optimizer)
    rng = np.random.default_rng(config.seed)
    reports: list[LossReport] = []

    labels_by_traj: dict[int, list[LabeledStep]] = {}
    if labels is not None:
        for step in labels:
            labels_by_traj.setdefault(step.traj_index, []).append(step)
        for group in labels_by_traj.values():
            group.sort(key=lambda s: s.step_index)

    for epoch in range(config.epochs):
        order = [int(i) for i in rng.permutation(len(trajectories))]
        epoch_cache: dict[int, list[LabeledStep]] | None = None
        if variant == "agentprm" and labels is None and config.reestimate == "epoch":
            epoch_cache = {}
            for step in estimate_td_gae(model, trajectories, config.td, ledger):
                epoch_cache.setdefault(step.traj_index, []).append(step)
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            batch_idx = order[start : start + config.batch_size]
            batch = [trajectories[i] for i in batch_idx]
            if variant == "orm":
                l_q, grads = _orm_gradients(model, batch)
                l_a = 0.0
            else:
                if variant == "pvm":
                    batch_labels = make_targets_pvm(batch)
                    include_adv = False
                elif labels is not None:
                    batch_labels = _relabel(labels_by_traj, batch_idx)
                    include_adv = config.adv_on_fixed_labels
                elif epoch_cache is not None:
                    batch_labels = _relabel(epoch_cache, batch_idx)
                    include_adv = True
                else:
                    batch_labels = estimate_td_gae(model, batch, config.td, ledger)
                    include_adv = True
                l_q, l_a, grads = batch_gradients(
                    model,
                    batch,
                    batch_labels,
                    config.beta,
                    config.td.v0_mode,
                    include_adv=include_adv,
                )
            total = l_q + config.beta * l_a
            report = LossReport(epoch=epoch, batch=batch_no, l_q=l_q, l_a=l_a, total=total)
            reports.append(report)
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {batch_no}", reports
                )
            model.apply_delta(optimizer.delta(grads, lr))
        if on_epoch_end is not None:
            on_epoch_end(epoch, model)
    return model, reports


def _relabel(
    by_traj: dict[int, list[LabeledStep]], batch_idx: list[int]
) -> list[LabeledStep]:
    """Re-home labels of the selected trajectories to batch-local indices."""
    out = []
    for local, global_index in enumerate(batch_idx):
        try:
            group = by_traj[global_index]
        except KeyError:
            raise DataError(f"no labels for trajectory {global_index}") from None
        for step in group:
            out.append(
                LabeledStep(local, step.step_index, step.q_target, step.adv_target, step.source)
            )
    return out
