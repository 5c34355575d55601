"""Run configuration and the packaged defaults."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

VARIANTS = ("full", "wo_structure", "wo_semantic", "wo_fusion", "wo_multitask")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # model architecture
    d_model: int = 128          # branch / fusion width d'
    d_k: int = 256              # contextualized width
    gat_layers: int = 2
    stmt_heads: int = 8
    max_seq: int = 512
    node_dim: int = 128         # node embedding width d
    embed_dim: int = 128        # shared token embedding width d_h
    gat_heads: int = 4
    gat_negative_slope: float = 0.2
    gat_undirected: bool = True
    ctx_layers: int = 2
    ctx_heads: int = 4
    ctx_hidden: int = 128
    dropout: float = 0.1
    variant: str = "full"

    # training
    optimizer: str = "adamw"
    lr: float = 2e-5
    weight_decay: float = 0.01
    scheduler: str = "cosine_with_restarts"
    lr_cycles: int = 3
    warmup_steps: int = 500
    batch_size: int = 32
    epochs: int = 50
    alpha: float = 0.4
    beta: float = 0.1
    tau: float = 0.07
    symmetric_align: bool = False
    grad_clip: float = 1.0
    seed: int = 42

    # data / evaluation
    threshold: float = 0.5
    split_ratios: tuple = (0.8, 0.1, 0.1)
    vocab_min_freq: int = 1
    vocab_max_size: int = 50000
    skip_unparseable: bool = False

    # explanation provider
    provider: str = "fixture"
    provider_base_url: str = "https://api.openai.com/v1"
    provider_model: str = "gpt-4o-mini-2024-07-18"
    cache_dir: str | None = None
    cache_only: bool = False

    overrides: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.split_ratios = tuple(self.split_ratios)
        self.validate()

    def validate(self) -> None:
        positive = ["d_model", "d_k", "gat_layers", "stmt_heads", "max_seq", "node_dim", "embed_dim",
                    "gat_heads", "ctx_layers", "ctx_heads", "ctx_hidden", "batch_size", "epochs", "lr_cycles"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0 or self.tau <= 0:
            raise ConfigError("lr and tau must be positive")
        if self.warmup_steps < 0 or self.beta < 0:
            raise ConfigError("warmup_steps and beta must be non-negative")
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.d_k % self.stmt_heads:
            raise ConfigError("d_k must be divisible by stmt_heads")
        if self.ctx_hidden % self.ctx_heads:
            raise ConfigError("ctx_hidden must be divisible by ctx_heads")
        if self.provider not in ("fixture", "live"):
            raise ConfigError(f"unknown provider {self.provider!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        d.update(changes)
        return TrainConfig.from_dict(d)

    def with_overrides(self, pairs: dict[str, Any]) -> "TrainConfig":
        """Apply CLI-style overrides and remember them for report headers."""
        cfg = self.replace(**pairs)
        cfg.overrides = {**self.overrides, **pairs}
        return cfg


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    names = {f.name for f in fields(TrainConfig)}
    if key not in names:
        raise ConfigError(f"unknown config key {key!r}")
    return key, yaml.safe_load(raw)


def default_config_text() -> str:
    return resources.files("dcvd").joinpath("default.yaml").read_text()


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> TrainConfig:
    text = Path(path).read_text() if path is not None else default_config_text()
    data = yaml.safe_load(text) or {}
    cfg = TrainConfig.from_dict(data)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
