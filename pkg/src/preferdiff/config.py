"""Run configuration: ``key = value`` files plus ``--key value`` overrides.

Precedence, lowest first: built-in defaults, ``PREFERDIFF_SEED``, the file,
command-line overrides.
"""
from __future__ import annotations

import difflib
import hashlib
import os
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


_CHOICES = {
    "encoder": ("gru", "transformer"),
    "measure": ("l1", "l2", "huber", "cosine"),
    "embedding_mode": ("id", "text"),
}

# key -> (lower, upper, inclusive-lower); None means unbounded
_RANGES = {
    "T": (1, None, True),
    "beta_start": (0.0, 1.0, False),
    "beta_end": (0.0, 1.0, False),
    "dim": (1, None, True),
    "cond_dim": (0, None, True),
    "time_dim": (2, None, True),
    "max_len": (1, None, True),
    "heads": (1, None, True),
    "lambda": (0.0, 1.0, True),
    "negatives": (1, None, True),
    "p_u": (0.0, 1.0, True),
    "ddim_steps": (1, None, True),
    "valid_ddim_steps": (1, None, True),
    "guidance_w": (0.0, None, True),
    "lr": (0.0, None, False),
    "weight_decay": (0.0, None, True),
    "batch_size": (2, None, True),
    "epochs": (1, None, True),
    "patience": (1, None, True),
    "seed": (0, None, True),
    "init_scale": (0.0, None, False),
    "min_count": (1, None, True),
    "threads": (1, None, True),
    "n_users": (100, None, True),
    "n_items": (20, None, True),
    "n_clusters": (1, None, True),
    "noise": (0.0, 1.0, True),
    "d_latent": (1, None, True),
}

# keys that change tensor shapes or the noise chain; they feed the checkpoint hash
STRUCTURAL = ("T", "beta_start", "beta_end", "dim", "cond_dim", "time_dim", "encoder",
              "max_len", "heads", "embedding_mode")


@dataclass
class RunConfig:
    # schedule
    T: int = 2000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # model
    dim: int = 64
    cond_dim: int = 0  # 0 means "same as dim"
    time_dim: int = 64
    encoder: str = "gru"
    max_len: int = 10
    heads: int = 2
    init_scale: float = 1.0
    # objective
    lam: float = 0.4
    measure: str = "cosine"
    negatives: int = 8
    p_u: float = 0.1
    # sampler
    ddim_steps: int = 20
    guidance_w: float = 2.0
    valid_ddim_steps: int = 4
    # trainer
    lr: float = 1e-4
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 50
    patience: int = 20
    seed: int = 0
    threads: int = 1
    # data
    interactions: str = "run/interactions.tsv"
    embeddings: str = ""
    embedding_mode: str = "id"
    min_count: int = 5
    split: str = "8,1,1"
    mask_history: bool = False
    out: str = "run"
    # synthetic generator
    n_users: int = 2000
    n_items: int = 200
    n_clusters: int = 8
    noise: float = 0.2
    d_latent: int = 16

    @staticmethod
    def key_of(attr: str) -> str:
        return "lambda" if attr == "lam" else attr

    @staticmethod
    def attr_of(key: str) -> str:
        return "lam" if key == "lambda" else key

    @classmethod
    def keys(cls) -> list[str]:
        return [cls.key_of(f.name) for f in fields(cls)]

    def get(self, key: str):
        return getattr(self, self.attr_of(key))

    @property
    def split_ratios(self) -> tuple[float, float, float]:
        return tuple(float(x) for x in self.split.split(","))

    @property
    def resolved_cond_dim(self) -> int:
        return self.cond_dim or self.dim

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{self.key_of(f.name)} = {value}")
        return "\n".join(lines) + "\n"

    def structural_hash(self) -> str:
        text = ";".join(f"{k}={self.get(k) if k != 'cond_dim' else self.resolved_cond_dim}" for k in STRUCTURAL)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_TYPES = {RunConfig.key_of(f.name): f.type for f in fields(RunConfig)}


def _coerce(key: str, raw):
    kind = _TYPES[key]
    text = str(raw).strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    return text


def _check_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    if key == "lam":
        key = "lambda"
    if key not in _TYPES:
        near = difflib.get_close_matches(key, list(_TYPES), n=1, cutoff=0.0)
        hint = f"; did you mean {near[0]!r}?" if near else ""
        raise ConfigError(f"unknown config key {key!r}{hint}")
    return key


def validate(cfg: RunConfig) -> RunConfig:
    for key, (lo, hi, inclusive) in _RANGES.items():
        v = cfg.get(key)
        if lo is not None and (v < lo if inclusive else v <= lo):
            raise ConfigError(f"{key}={v} out of range (must be {'>=' if inclusive else '>'} {lo})")
        if hi is not None and (v > hi if inclusive else v >= hi):
            raise ConfigError(f"{key}={v} out of range (must be {'<=' if inclusive else '<'} {hi})")
    for key, allowed in _CHOICES.items():
        if cfg.get(key) not in allowed:
            raise ConfigError(f"{key}={cfg.get(key)!r} not one of {', '.join(allowed)}")
    if cfg.beta_start > cfg.beta_end:
        raise ConfigError(f"beta_start={cfg.beta_start} exceeds beta_end={cfg.beta_end}")
    if cfg.ddim_steps > cfg.T:
        raise ConfigError(f"ddim_steps={cfg.ddim_steps} exceeds T={cfg.T}")
    if cfg.valid_ddim_steps > cfg.T:
        raise ConfigError(f"valid_ddim_steps={cfg.valid_ddim_steps} exceeds T={cfg.T}")
    if cfg.negatives > cfg.batch_size - 1:
        raise ConfigError(f"negatives={cfg.negatives} needs batch_size >= {cfg.negatives + 1}")
    try:
        ratios = cfg.split_ratios
    except ValueError:
        raise ConfigError(f"split={cfg.split!r} must be three comma-separated numbers") from None
    if len(ratios) != 3 or min(ratios) <= 0:
        raise ConfigError(f"split={cfg.split!r} must be three positive numbers")
    if cfg.time_dim % 2:
        raise ConfigError(f"time_dim={cfg.time_dim} must be even")
    if cfg.encoder == "transformer" and (cfg.resolved_cond_dim != cfg.dim or cfg.dim % cfg.heads):
        raise ConfigError("transformer encoder needs cond_dim == dim and dim divisible by heads")
    return cfg


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[_check_key(key)] = value.strip()
    return out


def parse_overrides(tokens) -> dict[str, str]:
    """``['--lambda', '0.6', '--ddim-steps=8']`` -> ``{'lambda': '0.6', 'ddim_steps': '8'}``."""
    out = {}
    tokens = list(tokens)
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}; overrides look like --key value")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok} is missing a value")
            key, value = body, tokens[i + 1]
            i += 2
        out[_check_key(key)] = value
    return out


def parse_config(path=None, overrides=None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    cfg = RunConfig()
    layers = []
    if env.get("PREFERDIFF_SEED"):
        layers.append({"seed": env["PREFERDIFF_SEED"]})
    if path:
        layers.append(read_config_file(path))
    if overrides:
        layers.append(overrides if isinstance(overrides, dict) else parse_overrides(overrides))
    for layer in layers:
        for key, raw in layer.items():
            key = _check_key(key)
            setattr(cfg, RunConfig.attr_of(key), _coerce(key, raw))
    return validate(cfg)
