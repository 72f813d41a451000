"""Checkpoint files: ``<prefix>.manifest`` plus one ``<prefix>.<name>.bin`` per tensor.

Blobs are little-endian float32, row-major, written in manifest order.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ItemEmbeddingTable, ModelConfig, ModelParams
from .numerics import Tensor
from .trainer import OptimizerState

FORMAT = "preferdiff-checkpoint-1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    table: ItemEmbeddingTable
    opt: OptimizerState
    manifest: dict[str, str]


def _blob(prefix: Path, name: str) -> Path:
    return prefix.with_name(f"{prefix.name}.{name}.bin")


def manifest_path(prefix) -> Path:
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".manifest")


def save_checkpoint(prefix, params: ModelParams, table: ItemEmbeddingTable, opt: OptimizerState,
                    extra: dict | None = None) -> Path:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    cfg = params.config
    tensors: list[tuple[str, np.ndarray]] = [("table", table.matrix)]
    tensors += [(k, v.data) for k, v in params.tensors.items()]
    for k in sorted(opt.m):
        tensors.append((f"opt.m.{k}", opt.m[k]))
        tensors.append((f"opt.v.{k}", opt.v[k]))

    lines = {
        "format": FORMAT,
        "n_items": cfg.n_items,
        "dim": cfg.dim,
        "cond_dim": cfg.cond_dim,
        "time_dim": cfg.time_dim,
        "hidden_mult": cfg.hidden_mult,
        "encoder": cfg.encoder,
        "max_len": cfg.max_len,
        "heads": cfg.heads,
        "table_mode": table.mode,
        "opt_step": opt.step,
        "opt_lr": repr(opt.lr),
        "opt_weight_decay": repr(opt.weight_decay),
        "opt_beta1": repr(opt.beta1),
        "opt_beta2": repr(opt.beta2),
        "opt_eps": repr(opt.eps),
    }
    lines.update(extra or {})
    with manifest_path(prefix).open("w", encoding="utf-8", newline="\n") as fh:
        for k, v in lines.items():
            fh.write(f"{k}={v}\n")
        for name, arr in tensors:
            fh.write(f"tensor={name} {','.join(str(n) for n in arr.shape)}\n")
    for name, arr in tensors:
        _blob(prefix, name).write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return manifest_path(prefix)


def read_manifest(prefix) -> tuple[dict[str, str], list[tuple[str, tuple[int, ...]]]]:
    path = manifest_path(prefix)
    if not path.exists():
        raise CheckpointError(f"checkpoint manifest not found: {path}")
    meta: dict[str, str] = {}
    tensors = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "tensor":
            name, _, shape = value.partition(" ")
            tensors.append((name, tuple(int(n) for n in shape.split(",") if n)))
        else:
            meta[key] = value
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return meta, tensors


def load_checkpoint(prefix, expected_hash: str | None = None) -> Checkpoint:
    prefix = Path(prefix)
    meta, tensors = read_manifest(prefix)
    if expected_hash is not None and meta.get("config_hash") != expected_hash:
        raise CheckpointError(
            f"checkpoint {prefix} was written for config hash {meta.get('config_hash')}, "
            f"current config hashes to {expected_hash}"
        )
    arrays = {}
    for name, shape in tensors:
        path = _blob(prefix, name)
        if not path.exists():
            raise CheckpointError(f"missing blob for tensor {name!r}: {path}")
        raw = path.read_bytes()
        want = int(np.prod(shape, dtype=np.int64)) * 4
        if len(raw) != want:
            raise CheckpointError(f"blob for tensor {name!r} has {len(raw)} bytes, expected {want}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    cfg = ModelConfig(
        n_items=int(meta["n_items"]), dim=int(meta["dim"]), cond_dim=int(meta["cond_dim"]),
        time_dim=int(meta["time_dim"]), hidden_mult=int(meta["hidden_mult"]), encoder=meta["encoder"],
        max_len=int(meta["max_len"]), heads=int(meta["heads"]),
    )
    table = ItemEmbeddingTable(arrays.pop("table"), frozen=meta["table_mode"] == "frozen")
    opt = OptimizerState(
        lr=float(meta["opt_lr"]), weight_decay=float(meta["opt_weight_decay"]),
        beta1=float(meta["opt_beta1"]), beta2=float(meta["opt_beta2"]), eps=float(meta["opt_eps"]),
        step=int(meta["opt_step"]),
    )
    param_tensors = {}
    for name, arr in arrays.items():
        if name.startswith("opt.m."):
            opt.m[name[6:]] = arr
        elif name.startswith("opt.v."):
            opt.v[name[6:]] = arr
        else:
            param_tensors[name] = Tensor(arr, requires_grad=True)
    return Checkpoint(ModelParams(cfg, param_tensors), table, opt, meta)
