"""Glue shared by the CLI, the experiment scripts and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import import_text_embeddings, load_interactions, user_split
from .evaluation import RankedResult, evaluate
from .model import ItemEmbeddingTable, ModelConfig, ModelParams, init_params
from .objective import LossConfig
from .sampler import SamplerConfig
from .schedule import DiffusionSchedule, build_linear_schedule
from .trainer import FitResult, TrainConfig, fit


@dataclass
class Splits:
    train: list
    valid: list
    test: list
    n_items: int


def schedule_of(cfg: RunConfig) -> DiffusionSchedule:
    return build_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)


def loss_of(cfg: RunConfig) -> LossConfig:
    return LossConfig(cfg.lam, cfg.measure, cfg.negatives)


def sampler_of(cfg: RunConfig, ddim_steps: int | None = None) -> SamplerConfig:
    return SamplerConfig(ddim_steps or cfg.ddim_steps, cfg.guidance_w, cfg.seed)


def train_cfg_of(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, patience=cfg.patience, seed=cfg.seed,
        lr=cfg.lr, weight_decay=cfg.weight_decay, p_u=cfg.p_u,
        valid_ddim_steps=cfg.valid_ddim_steps, threads=cfg.threads,
    )


def model_config_of(cfg: RunConfig, n_items: int) -> ModelConfig:
    return ModelConfig(
        n_items=n_items, dim=cfg.dim, cond_dim=cfg.resolved_cond_dim, time_dim=cfg.time_dim,
        encoder=cfg.encoder, max_len=cfg.max_len, heads=cfg.heads,
    )


def load_splits(cfg: RunConfig) -> Splits:
    log = load_interactions(cfg.interactions, cfg.min_count)
    train, valid, test = user_split(log, cfg.split_ratios, cfg.max_len)
    return Splits(train, valid, test, log.n_items)


def build_model(cfg: RunConfig, n_items: int) -> tuple[ModelParams, ItemEmbeddingTable]:
    rng = np.random.default_rng(cfg.seed)
    if cfg.embedding_mode == "text":
        table = import_text_embeddings(cfg.embeddings, n_items)
        if table.dim != cfg.dim:
            from .config import ConfigError

            raise ConfigError(f"dim={cfg.dim} but the embedding file has d={table.dim}")
    else:
        table = ItemEmbeddingTable.standard_normal(n_items, cfg.dim, rng, cfg.init_scale)
    return init_params(model_config_of(cfg, n_items), rng), table


def train_model(cfg: RunConfig, splits: Splits, log_path=None, time_path=None):
    params, table = build_model(cfg, splits.n_items)
    schedule = schedule_of(cfg)
    result: FitResult = fit(
        params, table, schedule, splits.train, splits.valid,
        loss_of(cfg), train_cfg_of(cfg), sampler_of(cfg), log_path=log_path, time_path=time_path,
    )
    return params, table, result


def evaluate_model(cfg: RunConfig, params, table, examples, ddim_steps: int | None = None) -> RankedResult:
    return evaluate(
        params, table, schedule_of(cfg), examples, sampler_of(cfg, ddim_steps),
        threads=cfg.threads, mask_history=cfg.mask_history,
    )


@dataclass
class SyntheticRun:
    cfg: RunConfig
    fit: FitResult
    test: RankedResult


def synthetic_run(cfg: RunConfig) -> SyntheticRun:
    """Generate the synthetic catalog in memory, train on it, score the test split."""
    from .data import gen_synthetic

    data = gen_synthetic(cfg.n_users, cfg.n_items, cfg.d_latent, cfg.noise, cfg.seed, cfg.n_clusters)
    train, valid, test = user_split(data.log, cfg.split_ratios, cfg.max_len)
    splits = Splits(train, valid, test, data.log.n_items)
    params, table, result = train_model(cfg, splits)
    return SyntheticRun(cfg, result, evaluate_model(cfg, params, table, splits.test))
