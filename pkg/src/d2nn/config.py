"""Run configuration: dataclasses with the published defaults, strict JSON
loading and variant-string parsing."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .data import SyntheticConfig
from .errors import ConfigError

VALID_HEAD_COUNTS = (3, 5, 10, 16)

_FLAG_NAMES = {
    "no_snippet": ("no_snippet",),
    "no_snippet_taxonomy": ("no_snippet", "no_taxonomy"),
    "no_word_attn": ("no_word_attn",),
    "no_news_attn": ("no_news_attn",),
    "no_reader_attn": ("no_reader_attn",),
}


@dataclass(frozen=True)
class Variant:
    """A model variant: one base plus composable ablation flags."""

    base: str = "d2nn"  # d2nn | lti | sti
    no_snippet: bool = False
    no_taxonomy: bool = False
    no_word_attn: bool = False
    no_news_attn: bool = False
    no_reader_attn: bool = False
    heads: int = 0  # 0 = convolutional contextualization

    def label(self) -> str:
        parts = [self.base]
        if self.no_snippet and self.no_taxonomy:
            parts.append("no_snippet_taxonomy")
        elif self.no_snippet:
            parts.append("no_snippet")
        elif self.no_taxonomy:
            parts.append("no_taxonomy")
        for flag in ("no_word_attn", "no_news_attn", "no_reader_attn"):
            if getattr(self, flag):
                parts.append(flag)
        if self.heads:
            parts.append(f"multihead:{self.heads}")
        return "+".join(parts)


def parse_variant(spec: str) -> Variant:
    """Parse a variant string such as ``sti+no_snippet`` or ``multihead:5``.

    A bare flag implies the default base. Exactly one base is allowed.
    """
    base: Optional[str] = None
    flags: dict[str, Any] = {}
    for token in spec.split("+"):
        token = token.strip()
        if token in ("d2nn", "lti", "sti"):
            if base is not None:
                raise ConfigError(f"variant {spec!r} names more than one base")
            base = token
        elif token in _FLAG_NAMES:
            for f in _FLAG_NAMES[token]:
                flags[f] = True
        elif token.startswith("multihead:"):
            try:
                heads = int(token.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad head count in variant token {token!r}")
            if heads not in VALID_HEAD_COUNTS:
                raise ConfigError(f"head count must be one of {VALID_HEAD_COUNTS}, got {heads}")
            flags["heads"] = heads
        else:
            raise ConfigError(f"unknown variant token {token!r}")
    return Variant(base=base or "d2nn", **flags)


@dataclass
class ModelConfig:
    embed_dim: int = 300  # D
    conv_filters: int = 200  # C / N_f
    filter_size: int = 3  # fs (odd)
    attn_hidden: int = 200
    dropout: float = 0.2  # dr, applied after embedding lookup
    recent_window: int = 100  # L
    max_headline: int = 30  # M_h
    max_snippet: int = 100  # M_s
    long_term_cap: int = 500
    reader_combine: str = "sum"  # sum | concat
    diversity_feature: str = "repr"  # repr | category

    def validate(self) -> None:
        if self.filter_size % 2 != 1:
            raise ConfigError(f"filter_size must be odd, got {self.filter_size}")
        if self.reader_combine not in ("sum", "concat"):
            raise ConfigError(f"reader_combine must be sum or concat, got {self.reader_combine!r}")
        if self.diversity_feature not in ("repr", "category"):
            raise ConfigError(
                f"diversity_feature must be repr or category, got {self.diversity_feature!r}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.001
    batch_size: int = 256
    neg_ratio: int = 5
    max_epochs: int = 10
    patience: int = 2
    grad_clip: float = 5.0

    def validate(self) -> None:
        if self.neg_ratio < 1:
            raise ConfigError(f"neg_ratio must be >= 1, got {self.neg_ratio}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")


@dataclass
class DataConfig:
    news_path: Optional[str] = None
    behaviors_path: Optional[str] = None
    embedding_path: Optional[str] = None
    min_count: int = 3
    synthetic: Optional[SyntheticConfig] = None

    def validate(self) -> None:
        has_files = self.news_path is not None and self.behaviors_path is not None
        if has_files == (self.synthetic is not None):
            raise ConfigError("config needs either news/behaviors paths or a synthetic block")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    variant: str = "d2nn"
    seed: int = 0
    metric_ks: tuple[int, ...] = (5, 10, 20, 50)

    def validate(self) -> "RunConfig":
        self.data.validate()
        self.model.validate()
        self.optimizer.validate()
        parse_variant(self.variant)
        if not self.metric_ks or any(k < 1 for k in self.metric_ks):
            raise ConfigError("metric_ks must be positive cutoffs")
        return self


def _from_dict(cls, payload: dict, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - set(names))
    if unknown:
        raise ConfigError(f"unknown config key {path + '.' if path else ''}{unknown[0]!r}")
    kwargs = {}
    for key, value in payload.items():
        if key == "data":
            kwargs[key] = _from_dict(DataConfig, value, "data")
        elif key == "model":
            kwargs[key] = _from_dict(ModelConfig, value, "model")
        elif key == "optimizer":
            kwargs[key] = _from_dict(OptimizerConfig, value, "optimizer")
        elif key == "synthetic":
            kwargs[key] = None if value is None else _from_dict(SyntheticConfig, value, "data.synthetic")
        elif key == "metric_ks":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(payload: dict) -> RunConfig:
    return _from_dict(RunConfig, payload, "").validate()


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return config_from_dict(payload)


def config_to_dict(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["metric_ks"] = list(cfg.metric_ks)
    return out


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
