"""Item embeddings, the sequence encoder, and the x0-predicting denoiser.

Histories are left-padded with the reserved id ``N`` (one past the last
real item). Padding positions never touch the encoder state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass
class ModelConfig:
    n_items: int
    dim: int = 64
    cond_dim: int | None = None
    time_dim: int = 64
    hidden_mult: int = 4
    encoder: str = "gru"
    max_len: int = 10
    heads: int = 2

    def __post_init__(self):
        if self.cond_dim is None:
            self.cond_dim = self.dim
        if self.encoder not in ("gru", "transformer"):
            raise ValueError(f"unknown encoder {self.encoder!r}; expected 'gru' or 'transformer'")
        if self.encoder == "transformer" and (self.cond_dim != self.dim or self.dim % self.heads):
            raise ValueError("transformer encoder needs cond_dim == dim and dim divisible by heads")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")


class ItemEmbeddingTable:
    """N x d item vectors; row ``i`` embeds item ``i``."""

    def __init__(self, matrix, frozen: bool = False):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"embedding table must be 2-d, got shape {matrix.shape}")
        self.weight = Tensor(matrix, requires_grad=not frozen)
        self.frozen = frozen

    @classmethod
    def standard_normal(cls, count: int, dim: int, rng: np.random.Generator, scale: float = 1.0):
        return cls(scale * rng.standard_normal((count, dim)))

    @property
    def count(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @property
    def mode(self) -> str:
        return "frozen" if self.frozen else "trainable"

    @property
    def pad_id(self) -> int:
        return self.count

    @property
    def matrix(self) -> np.ndarray:
        return self.weight.data


@dataclass
class Condition:
    vector: Tensor
    is_unconditional: np.ndarray  # bool per row (0-d for a single condition)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    @property
    def phi(self) -> Tensor:
        return self.tensors["phi"]

    @property
    def time_basis(self) -> np.ndarray:
        half = self.config.time_dim // 2
        return np.exp(-np.log(10000.0) * np.arange(half) / half)

    def named(self):
        return list(self.tensors.items())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        for k, arr in arrays.items():
            self.tensors[k].data = np.array(arr, dtype=np.float64)


def _dense(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    d, dc, dt = config.dim, config.cond_dim, config.time_dim
    hid = config.hidden_mult * d
    arrays: dict[str, np.ndarray] = {}
    if config.encoder == "gru":
        for gate in ("z", "r", "n"):
            arrays[f"gru.W_{gate}"] = _dense(rng, d, dc)
            arrays[f"gru.U_{gate}"] = _dense(rng, dc, dc)
            arrays[f"gru.b_{gate}"] = np.zeros(dc)
    else:
        arrays["tf.pos"] = 0.1 * rng.standard_normal((config.max_len, d))
        for name in ("q", "k", "v", "o"):
            arrays[f"tf.W_{name}"] = _dense(rng, d, d)
        arrays["tf.W_f1"] = _dense(rng, d, d)
        arrays["tf.b_f1"] = np.zeros(d)
        arrays["tf.W_f2"] = _dense(rng, d, d)
    arrays["den.W1"] = _dense(rng, d + dc + dt, hid)
    arrays["den.b1"] = np.zeros(hid)
    arrays["den.W2"] = _dense(rng, hid, hid)
    arrays["den.b2"] = np.zeros(hid)
    arrays["den.W3"] = _dense(rng, hid, d)
    arrays["phi"] = rng.standard_normal(dc) / np.sqrt(dc)
    return ModelParams(config, {k: Tensor(v, requires_grad=True) for k, v in arrays.items()})


def time_embedding(params: ModelParams, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    ang = t[:, None] * params.time_basis[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def pad_histories(histories, pad_id: int, max_len: int) -> np.ndarray:
    """Left-pad a list of id lists into a (B, max_len) int array."""
    out = np.full((len(histories), max_len), pad_id, dtype=np.int64)
    for i, h in enumerate(histories):
        h = [x for x in h if x != pad_id]
        if len(h) > max_len:
            raise ValueError(f"history of length {len(h)} exceeds max_len={max_len}")
        if h:
            out[i, max_len - len(h):] = h
    return out


def _gru(params: ModelParams, table: ItemEmbeddingTable, ids: np.ndarray) -> Tensor:
    B, L = ids.shape
    p = params.tensors
    valid = ids != table.pad_id
    safe = np.where(valid, ids, 0)
    h = Tensor(np.zeros((B, params.config.cond_dim)))
    for step in range(L):
        m = valid[:, step]
        if not m.any():
            continue
        x = nx.take(table.weight, safe[:, step])
        z = nx.sigmoid(x @ p["gru.W_z"] + h @ p["gru.U_z"] + p["gru.b_z"])
        r = nx.sigmoid(x @ p["gru.W_r"] + h @ p["gru.U_r"] + p["gru.b_r"])
        n = nx.tanh(x @ p["gru.W_n"] + (r * h) @ p["gru.U_n"] + p["gru.b_n"])
        h_new = n + z * (h - n)  # (1 - z) * n + z * h
        if m.all():
            h = h_new
        else:
            keep = Tensor(m[:, None].astype(np.float64))
            h = h + keep * (h_new - h)
    return h


def _layer(x):
    mu = nx.mean(x, axis=-1)
    xc = x - nx.reshape(mu, mu.shape + (1,))
    var = nx.mean(nx.square(xc), axis=-1)
    return xc / nx.reshape(nx.sqrt(var + 1e-5), var.shape + (1,))


def _transformer(params: ModelParams, table: ItemEmbeddingTable, ids: np.ndarray) -> Tensor:
    B, L = ids.shape
    cfg = params.config
    p = params.tensors
    H, dh = cfg.heads, cfg.dim // cfg.heads
    valid = ids != table.pad_id
    safe = np.where(valid, ids, 0)
    x = nx.take(table.weight, safe) + p["tf.pos"]
    x = x * Tensor(valid[..., None].astype(np.float64))

    def heads(t):
        return nx.transpose(nx.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))

    q, k, v = heads(x @ p["tf.W_q"]), heads(x @ p["tf.W_k"]), heads(x @ p["tf.W_v"])
    scores = (q @ nx.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    # causal + key-padding mask
    allowed = np.tril(np.ones((L, L), dtype=bool))[None, None] & valid[:, None, None, :]
    scores = scores + Tensor(np.where(allowed, 0.0, -1e9))
    attn = nx.softmax(scores, axis=-1) @ v
    attn = nx.reshape(nx.transpose(attn, (0, 2, 1, 3)), (B, L, cfg.dim))
    h = _layer(x + attn @ p["tf.W_o"])
    h = _layer(h + nx.tanh(h @ p["tf.W_f1"] + p["tf.b_f1"]) @ p["tf.W_f2"])
    return nx.select(h, L - 1, axis=1)


def encode_sequence(params: ModelParams, table: ItemEmbeddingTable, item_ids) -> Condition:
    """Condition vector for one history (1-d ids) or a batch (2-d, left-padded).

    Empty histories come back as the unconditional token.
    """
    cfg = params.config
    single = np.ndim(item_ids) == 1 or (isinstance(item_ids, list) and not item_ids)
    if single:
        ids = pad_histories([list(np.asarray(item_ids, dtype=np.int64))], table.pad_id, cfg.max_len)
    else:
        ids = np.asarray(item_ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] > cfg.max_len:
            raise ValueError(f"history batch must be (B, <= {cfg.max_len}), got {ids.shape}")
        if ids.shape[1] < cfg.max_len:
            fill = np.full((ids.shape[0], cfg.max_len - ids.shape[1]), table.pad_id, dtype=np.int64)
            ids = np.concatenate([fill, ids], axis=1)
    bad = (ids < 0) | (ids > table.pad_id)
    if bad.any():
        raise IndexError(f"unknown item {int(ids[bad][0])} (catalog has {table.count} items)")

    empty = (ids == table.pad_id).all(axis=1)
    if empty.all():
        vec = nx.reshape(params.phi, (1, cfg.cond_dim)) * Tensor(np.ones((ids.shape[0], 1)))
    else:
        h = _gru(params, table, ids) if cfg.encoder == "gru" else _transformer(params, table, ids)
        vec = _mix_phi(h, params.phi, empty)
    if single:
        return Condition(nx.reshape(vec, (cfg.cond_dim,)), np.asarray(bool(empty[0])))
    return Condition(vec, empty)


def _mix_phi(h: Tensor, phi: Tensor, mask: np.ndarray) -> Tensor:
    if not mask.any():
        return h
    m = mask[:, None].astype(np.float64)
    return h * Tensor(1.0 - m) + phi * Tensor(m)


def unconditional(params: ModelParams, batch: int | None = None) -> Condition:
    if batch is None:
        return Condition(params.phi, np.asarray(True))
    vec = nx.reshape(params.phi, (1, params.config.cond_dim)) * Tensor(np.ones((batch, 1)))
    return Condition(vec, np.ones(batch, dtype=bool))


def drop_condition(params: ModelParams, cond: Condition, p_u: float, rng: np.random.Generator) -> Condition:
    """Replace each row's condition by the unconditional token with probability ``p_u``."""
    if not 0.0 <= p_u <= 1.0:
        raise ValueError(f"p_u must lie in [0, 1], got {p_u}")
    single = cond.vector.ndim == 1
    n = 1 if single else cond.vector.shape[0]
    drop = rng.random(n) < p_u
    if single:
        return unconditional(params) if drop[0] else cond
    if not drop.any():
        return cond
    return Condition(_mix_phi(cond.vector, params.phi, drop), cond.is_unconditional | drop)


def denoise(params: ModelParams, e_t, t, cond) -> Tensor:
    """Predicted clean embedding from [e_t ‖ condition ‖ time embedding]."""
    cfg = params.config
    p = params.tensors
    e_t = e_t if isinstance(e_t, Tensor) else Tensor(e_t)
    c = cond.vector if isinstance(cond, Condition) else cond
    c = c if isinstance(c, Tensor) else Tensor(c)
    single = e_t.ndim == 1
    if single:
        e_t = nx.reshape(e_t, (1, -1))
    if c.ndim == 1:
        c = nx.reshape(c, (1, -1))
    B = e_t.shape[0]
    if e_t.shape[1] != cfg.dim or c.shape[1] != cfg.cond_dim:
        raise nx.ShapeError(
            f"denoise: expected e_t dim {cfg.dim} and condition dim {cfg.cond_dim}, "
            f"got {e_t.shape} and {c.shape}"
        )
    if c.shape[0] != B:
        if c.shape[0] != 1:
            raise nx.ShapeError(f"denoise: batch mismatch {e_t.shape} vs {c.shape}")
        c = c * Tensor(np.ones((B, 1)))
    t_arr = np.broadcast_to(np.asarray(t), (B,))
    temb = Tensor(time_embedding(params, t_arr))
    x = nx.concat([e_t, c, temb], axis=-1)
    h = nx.tanh(x @ p["den.W1"] + p["den.b1"])
    h = nx.tanh(h @ p["den.W2"] + p["den.b2"])
    out = h @ p["den.W3"]
    if single:
        out = nx.reshape(out, (cfg.dim,))
    return out
