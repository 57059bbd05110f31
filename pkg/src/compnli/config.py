"""Model and training configuration as a flat ``key=value`` record."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

LABELS = ("entailment", "neutral", "contradiction")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    # reference architecture sizes
    embed_dim: int = 300
    seq_len: int = 64
    bilstm_hidden: int = 300
    btree_hidden: int = 300
    operators: int = 11
    batch_size: int = 40
    bn_gamma_init: float = 0.001

    encoder: str = "btree"  # btree | bilstm
    op_hidden: int = 300
    op_out: int = 300
    agg_hidden: int = 300
    attention: str = "softmax"  # softmax | literal
    bn_placement: str = "task"  # task | none
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    btree_internal_input: str = "zero"  # zero | children_mean
    share_encoder: bool = True
    share_transform: bool = True
    forget_bias: float = 1.0
    oov_std: float = 0.06
    oov_scale: str = "std"  # std | variance
    oov_seed: int = 1234

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 20
    patience: int = 3
    init_seed: int = 0
    shuffle_seed: int = 0
    dtype: str = "float32"
    label_order: str = ",".join(LABELS)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        choices = {
            "encoder": ("btree", "bilstm"),
            "attention": ("softmax", "literal"),
            "bn_placement": ("task", "none"),
            "btree_internal_input": ("zero", "children_mean"),
            "oov_scale": ("std", "variance"),
            "dtype": ("float32", "float64"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.operators < 1:
            raise ConfigError("operators must be >= 1")
        if self.label_order != ",".join(LABELS):
            raise ConfigError(f"unsupported label order {self.label_order!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def oov_sigma(self) -> float:
        return self.oov_std if self.oov_scale == "std" else float(np.sqrt(self.oov_std))

    @property
    def encoding_dim(self) -> int:
        if self.encoder == "bilstm":
            return self.embed_dim + 2 * self.bilstm_hidden
        return self.btree_hidden

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls(**parse_key_values(text, known=True))

    @classmethod
    def from_file(cls, path: str | Path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def parse_key_values(text: str, known: bool = False) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not known:
            out[key] = value
            continue
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _convert(_TYPES[key], value, lineno)
    return out


def _convert(kind: str, value: str, lineno: int):
    try:
        if kind == "bool":
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(value)
            return value.lower() in ("true", "1")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"line {lineno}: bad {kind} value {value!r}") from None


__all__ = ["LABELS", "ConfigError", "ModelConfig", "parse_key_values"]
