"""Training loop: noised positive and negative-centroid branches, AdamW,
validation-driven early stopping."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import Batch, make_batches
from .evaluation import evaluate
from .model import ItemEmbeddingTable, ModelParams, drop_condition, denoise, encode_sequence
from .numerics import Tape, Tensor
from .objective import LossConfig, measure, bpr_diff_c
from .sampler import SamplerConfig
from .schedule import DiffusionSchedule


class NumericalAbort(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_update(opt: OptimizerState, named_params, grads: dict[str, np.ndarray]) -> None:
    """One decoupled-weight-decay Adam step; parameters get fresh arrays."""
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for name, p in named_params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = opt.m.get(name)
        v = opt.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
        opt.m[name], opt.v[name] = m, v
        decayed = p.data * (1.0 - opt.lr * opt.weight_decay) if opt.weight_decay else p.data
        p.data = decayed - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def trainable(params: ModelParams, table: ItemEmbeddingTable) -> list[tuple[str, Tensor]]:
    named = [] if table.frozen else [("table", table.weight)]
    return named + params.named()


def batch_loss(
    params: ModelParams,
    table: ItemEmbeddingTable,
    batch: Batch,
    schedule: DiffusionSchedule,
    loss_cfg: LossConfig,
    p_u: float,
    rng: np.random.Generator,
):
    """Mean PreferDiff loss over the batch plus the per-example values.

    Each example gets its own t; the positive and the negative centroid share
    it but draw independent noise.
    """
    B = len(batch)
    d = params.config.dim
    cond = encode_sequence(params, table, batch.histories)
    cond = drop_condition(params, cond, p_u, rng)
    t = rng.integers(1, schedule.T + 1, size=B)
    eps_pos = rng.standard_normal((B, d))
    eps_neg = rng.standard_normal((B, d))

    e0_pos = nx.take(table.weight, batch.targets)
    e0_neg = nx.mean(nx.take(table.weight, batch.negatives), axis=1)
    ab = schedule.alpha_bar(t)[:, None]
    a, b = Tensor(np.sqrt(ab)), Tensor(np.sqrt(1.0 - ab))
    e_t = nx.concat([e0_pos * a + Tensor(eps_pos * b.data), e0_neg * a + Tensor(eps_neg * b.data)], axis=0)
    c2 = nx.concat([cond.vector, cond.vector], axis=0)
    pred = denoise(params, e_t, np.concatenate([t, t]), c2)
    scores = nx.reshape(measure(loss_cfg.measure, pred, nx.concat([e0_pos, e0_neg], axis=0)), (2, B))
    s_pos, s_neg = nx.select(scores, 0, axis=0), nx.select(scores, 1, axis=0)
    per_example = s_pos * loss_cfg.lam + bpr_diff_c(s_pos, s_neg, loss_cfg.negatives) * (1.0 - loss_cfg.lam)
    return nx.mean(per_example), per_example


def train_step(
    params: ModelParams,
    table: ItemEmbeddingTable,
    opt: OptimizerState,
    batch: Batch,
    schedule: DiffusionSchedule,
    loss_cfg: LossConfig,
    p_u: float,
    rng: np.random.Generator,
) -> float:
    named = trainable(params, table)
    with Tape() as tape:
        loss, per_example = batch_loss(params, table, batch, schedule, loss_cfg, p_u, rng)
    bad = ~np.isfinite(per_example.data)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalAbort(f"non-finite loss at batch example {i} (user {int(batch.users[i])})")
    grads = tape.backward(loss, wrt=[p for _, p in named])
    adamw_update(opt, named, {name: grads[p].data for name, p in named})
    return loss.item()


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    patience: int = 20
    seed: int = 0
    lr: float = 1e-4
    weight_decay: float = 0.0
    p_u: float = 0.1
    valid_ddim_steps: int = 4
    threads: int = 1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def train_epoch(params, table, opt, examples, schedule, loss_cfg, train_cfg, rng) -> float:
    losses, sizes = [], []
    for batch in make_batches(
        examples, train_cfg.batch_size, loss_cfg.negatives, rng,
        n_items=table.count, max_len=params.config.max_len,
    ):
        losses.append(train_step(params, table, opt, batch, schedule, loss_cfg, train_cfg.p_u, rng))
        sizes.append(len(batch))
    return float(np.average(losses, weights=sizes))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_recall5: float
    valid_ndcg5: float
    wall_time: float


@dataclass
class FitResult:
    best_epoch: int
    best_recall5: float
    history: list[EpochRecord]
    stopped_early: bool
    opt: OptimizerState


def should_stop(metric_history, patience: int) -> bool:
    """True once the last ``patience`` epochs all failed to beat the best before them."""
    best = -np.inf
    since = 0
    for value in metric_history:
        if value > best:
            best, since = value, 0
        else:
            since += 1
    return since >= patience


def fit(
    params: ModelParams,
    table: ItemEmbeddingTable,
    schedule: DiffusionSchedule,
    train,
    valid,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    sampler_cfg: SamplerConfig,
    opt: OptimizerState | None = None,
    log_path=None,
    time_path=None,
) -> FitResult:
    """Train until ``patience`` epochs pass without a better validation Recall@5.

    On return ``params`` and ``table`` hold the best epoch's weights.
    """
    if not train or not valid:
        raise ValueError("fit needs non-empty training and validation sets")
    opt = opt or OptimizerState(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    valid_cfg = SamplerConfig(
        min(train_cfg.valid_ddim_steps, sampler_cfg.ddim_steps), sampler_cfg.guidance_weight, sampler_cfg.seed
    )
    history: list[EpochRecord] = []
    best_epoch, best, best_state = 0, -np.inf, None
    stopped = False
    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(params, table, opt, train, schedule, loss_cfg, train_cfg, rng)
        res = evaluate(params, table, schedule, valid, valid_cfg, threads=train_cfg.threads)
        rec = EpochRecord(epoch, loss, res.metrics["recall@5"], res.metrics["ndcg@5"], time.perf_counter() - t0)
        history.append(rec)
        if rec.valid_recall5 > best:
            best, best_epoch = rec.valid_recall5, epoch
            best_state = (params.snapshot(), table.weight.data.copy())
        if should_stop([r.valid_recall5 for r in history], train_cfg.patience):
            stopped = True
            break
    params.restore(best_state[0])
    table.weight.data = best_state[1]
    if log_path is not None:
        write_train_log(log_path, history)
    if time_path is not None:
        with Path(time_path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "wall_time_s"])
            w.writerows([r.epoch, f"{r.wall_time:.3f}"] for r in history)
    return FitResult(best_epoch, float(best), history, stopped, opt)


def write_train_log(path, history) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_recall@5", "valid_ndcg@5"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.valid_recall5), repr(r.valid_ndcg5)])
