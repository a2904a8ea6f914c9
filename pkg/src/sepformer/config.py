"""Model and training hyperparameters, plus the flat key=value config format.

Config files hold one ``key = value`` pair per line (``#`` starts a comment).
Keys must be field names of :class:`ModelConfig` or :class:`TrainConfig`;
anything else is rejected by name.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults follow the full-size recipe."""

    n_filters: int = 256  # encoder basis size F
    kernel_size: int = 16  # encoder/decoder kernel, in samples
    stride: int = 8  # encoder/decoder hop, in samples
    chunk_size: int = 250  # frames per chunk C
    overlap: float = 0.5  # chunk overlap fraction; the pipeline assumes 0.5
    n_repeats: int = 2  # dual-path block repeats N
    n_intra_layers: int = 8
    n_inter_layers: int = 8
    n_heads: int = 8
    ffn_dim: int = 1024
    n_sources: int = 2
    sample_rate: int = 8000
    use_positional_encoding: bool = True
    dtype: str = "float64"  # float32 available for benchmarking

    def __post_init__(self) -> None:
        positive = (
            "n_filters", "kernel_size", "stride", "chunk_size", "n_repeats",
            "n_intra_layers", "n_inter_layers", "n_heads", "ffn_dim",
            "n_sources", "sample_rate",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_sources < 2:
            raise ConfigurationError(f"n_sources must be >= 2, got {self.n_sources}")
        if self.n_filters % self.n_heads != 0:
            raise ConfigurationError(
                f"n_filters ({self.n_filters}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.chunk_size % 2 != 0:
            raise ConfigurationError(f"chunk_size must be even, got {self.chunk_size}")
        if self.overlap != 0.5:
            raise ConfigurationError("only 50% chunk overlap is supported")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def hop(self) -> int:
        return self.chunk_size // 2

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class TrainConfig:
    """Optimization hyperparameters.

    The plateau schedule defaults depend on dynamic mixing: annealing starts
    at epoch 65 with patience 3 normally, epoch 100 with patience 5 when
    dynamic mixing is on. Leave the two fields unset to get those defaults.
    """

    lr: float = 15e-5
    anneal_start_epoch: Optional[int] = None
    plateau_patience: Optional[int] = None
    lr_factor: float = 0.5
    grad_clip_norm: float = 5.0
    batch_size: int = 1
    max_epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dynamic_mixing: bool = False
    steps_per_epoch: int = 50  # mixtures per epoch for generated data
    val_size: int = 20  # held-out mixtures for validation
    max_signal_len: Optional[int] = None  # optional truncation, in samples

    def __post_init__(self) -> None:
        if self.anneal_start_epoch is None:
            self.anneal_start_epoch = 100 if self.dynamic_mixing else 65
        if self.plateau_patience is None:
            self.plateau_patience = 5 if self.dynamic_mixing else 3
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if not 0 < self.lr_factor < 1:
            raise ConfigurationError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.plateau_patience < 1:
            raise ConfigurationError("plateau_patience must be >= 1")
        if self.batch_size != 1:
            raise ConfigurationError("only batch_size=1 is supported")
        if self.max_epochs < 0:
            raise ConfigurationError("max_epochs must be >= 0")
        if self.steps_per_epoch < 1 or self.val_size < 1:
            raise ConfigurationError("steps_per_epoch and val_size must be >= 1")


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _convert(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() not in _BOOL_WORDS:
            raise ConfigurationError(f"config key {key}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    if target_type is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"config key {key}: expected an integer, got {raw!r}") from exc
    if target_type is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"config key {key}: expected a number, got {raw!r}") from exc
    return raw


def _field_types(cls) -> dict:
    out = {}
    for f in fields(cls):
        t = f.type
        if isinstance(t, str):
            # Optional[int] fields hold ints in files; strings stay strings
            t = {"int": int, "float": float, "bool": bool, "str": str,
                 "Optional[int]": int}.get(t, str)
        out[f.name] = t
    return out


def parse_config_text(
    text: str, source: str = "<config>", train_overrides: Optional[dict] = None
) -> tuple[ModelConfig, TrainConfig]:
    """Parse flat key=value text into a (ModelConfig, TrainConfig) pair.

    Unknown keys are configuration errors that name the offending key.
    ``train_overrides`` seeds TrainConfig fields (e.g. dynamic_mixing from a
    CLI flag); explicit file keys win over overrides.
    """
    model_types = _field_types(ModelConfig)
    train_types = _field_types(TrainConfig)
    model_kwargs: dict = {}
    train_kwargs: dict = dict(train_overrides or {})
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in model_types:
            model_kwargs[key] = _convert(raw, model_types[key], key)
        elif key in train_types:
            train_kwargs[key] = _convert(raw, train_types[key], key)
        else:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
    return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)


def load_config_file(path, train_overrides: Optional[dict] = None) -> tuple[ModelConfig, TrainConfig]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path), train_overrides=train_overrides)


def write_config_file(path, model: ModelConfig, train: Optional[TrainConfig] = None) -> None:
    lines = [f"{f.name} = {getattr(model, f.name)}" for f in fields(ModelConfig)]
    if train is not None:
        lines += [f"{f.name} = {getattr(train, f.name)}"
                  for f in fields(TrainConfig) if getattr(train, f.name) is not None]
    Path(path).write_text("\n".join(lines) + "\n")
