"""Measure functions and the preference-aware diffusion losses.

Every function here works row-wise: 1-d inputs give a scalar, (B, d) inputs
give one value per row. Scalars may be Tensors (on the tape) or floats.
``-log σ(x)`` is always evaluated as ``softplus(-x)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

HUBER_DELTA = 1.0


class MeasureKind(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    HUBER = "huber"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value) -> "MeasureKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown measure {value!r}; expected one of l1, l2, huber, cosine") from None


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.4
    measure: MeasureKind = MeasureKind.COSINE
    negatives: int = 8

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if int(self.negatives) < 1:
            raise ValueError(f"negatives must be >= 1, got {self.negatives}")
        object.__setattr__(self, "measure", MeasureKind.parse(self.measure))


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def measure(kind, pred, target):
    kind = MeasureKind.parse(kind)
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise nx.ShapeError(f"measure: shapes {pred.shape} and {target.shape} do not conform")
    if kind is MeasureKind.COSINE:
        return 1.0 - nx.cosine(pred, target, axis=-1)
    diff = pred - target
    if kind is MeasureKind.L2:
        return nx.mean(nx.square(diff), axis=-1)
    if kind is MeasureKind.L1:
        return nx.mean(nx.tabs(diff), axis=-1)
    return nx.mean(nx.huber(diff, HUBER_DELTA), axis=-1)


def simple_loss(pred_pos, e0_pos, kind=MeasureKind.L2):
    return measure(kind, pred_pos, e0_pos)


def pairwise_upper(s_pos, s_neg):
    """softplus(s_pos − s_neg): the single-negative variational bound."""
    return nx.softplus(_t(s_pos) - _t(s_neg))


def centroid(negatives, axis: int = 0):
    """Mean of the negative embeddings, from a list of vectors or a stacked tensor."""
    if isinstance(negatives, (list, tuple)):
        if not negatives:
            raise ValueError("centroid of an empty negative set")
        stacked = nx.concat([nx.reshape(_t(v), (1,) + _t(v).shape) for v in negatives], axis=0)
        return nx.mean(stacked, axis=0)
    negatives = _t(negatives)
    if negatives.shape[axis] == 0:
        raise ValueError("centroid of an empty negative set")
    return nx.mean(negatives, axis=axis)


def bpr_diff_c(s_pos, s_negcent, n_neg: int):
    """softplus(|H|·(s_pos − s_negcent)) with the centroid standing in for all negatives."""
    if int(n_neg) < 1:
        raise ValueError(f"negative count must be >= 1, got {n_neg}")
    return nx.softplus((_t(s_pos) - _t(s_negcent)) * float(n_neg))


def bpr_diff_v(s_pos, s_negs):
    """softplus(|H|·(s_pos − mean(s_negs))); every negative denoised separately."""
    if isinstance(s_negs, (list, tuple)):
        if not s_negs:
            raise ValueError("bpr_diff_v needs at least one negative score")
        s_negs = nx.concat([nx.reshape(_t(s), (1,)) for s in s_negs], axis=0)
    s_negs = _t(s_negs)
    if s_negs.ndim == 0:
        s_negs = nx.reshape(s_negs, (1,))
    n = s_negs.shape[-1]
    return nx.softplus((_t(s_pos) - nx.mean(s_negs, axis=-1)) * float(n))


def preferdiff_loss(cfg: LossConfig, pred_pos, e0_pos, pred_negcent, e0_negcent):
    """λ·L_simple + (1−λ)·centroid preference term, per row."""
    s_pos = measure(cfg.measure, pred_pos, e0_pos)
    s_neg = measure(cfg.measure, pred_negcent, e0_negcent)
    return s_pos * cfg.lam + bpr_diff_c(s_pos, s_neg, cfg.negatives) * (1.0 - cfg.lam)


def gradient_weight(logp_pos, logp_neg):
    """1 − σ(log p⁺ − log p⁻): how hard the pair pushes on the parameters."""
    x = np.asarray(logp_pos, dtype=np.float64) - np.asarray(logp_neg, dtype=np.float64)
    # 1 - sigmoid(x) == sigmoid(-x), evaluated without cancellation
    out = np.where(x >= 0, np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))), 1.0 / (1.0 + np.exp(-np.abs(x))))
    return float(out) if out.ndim == 0 else out
