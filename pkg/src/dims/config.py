"""Run configuration: every hyperparameter with its default, JSON round-trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Bad configuration key or value; the CLI maps this to exit code 2."""


@dataclass
class RunConfig:
    # model dimensions
    embed_dim: int = 128
    hidden_dim: int = 128
    encode_steps: int = 100          # article truncation length
    min_decode: int = 10
    max_decode: int = 30
    segment_len: int = 5             # frames per video segment
    attn_layers: int = 2             # conditional self-attention stack depth
    vocab_size: int = 50000
    feature_dim: int = 128           # precomputed frame-feature width (passthrough)

    # decoding
    beam_size: int = 4

    # optimization
    batch_size: int = 16
    lr: float = 0.15
    adagrad_eps: float = 1e-10
    clip_lo: float = -2.0
    clip_hi: float = 2.0
    clip_mode: str = "value"         # "value" | "norm"
    margin: float = 0.1
    hinge_negatives: int = 0         # 0 = use every negative candidate
    epochs: int = 10
    val_every: int = 50              # steps between validation passes
    keep_checkpoints: int = 5
    init_std: float = 0.05
    seed: int = 13

    # wiring switches
    frame_featurizer: str = "conv"   # "conv" | "passthrough"
    disable_conditional_self_attention: bool = False
    disable_global_attention: bool = False
    global_attention_normalize: str = "softmax"   # "softmax" | "raw"
    scale_position: str = "values"   # where the sqrt(d) division sits: "values" | "logits"
    editing_gate: str = "scalar"     # "scalar" | "vector"
    precision: str = "float64"       # "float64" | "float32"
    layer_norm_eps: float = 1e-5
    prob_floor: float = 1e-12

    _CHOICES = {
        "frame_featurizer": ("conv", "passthrough"),
        "global_attention_normalize": ("softmax", "raw"),
        "scale_position": ("values", "logits"),
        "editing_gate": ("scalar", "vector"),
        "clip_mode": ("value", "norm"),
        "precision": ("float64", "float32"),
    }

    def validate(self) -> None:
        for key, choices in self._CHOICES.items():
            if getattr(self, key) not in choices:
                raise ConfigError(f"{key}: must be one of {choices}, got {getattr(self, key)!r}")
        positive = ["embed_dim", "hidden_dim", "encode_steps", "max_decode", "segment_len",
                    "vocab_size", "feature_dim", "beam_size", "batch_size", "epochs",
                    "val_every", "keep_checkpoints"]
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        if self.hidden_dim % 2 != 0:
            raise ConfigError("hidden_dim: must be even (split across two recurrence directions)")
        if self.min_decode > self.max_decode:
            raise ConfigError("min_decode: must not exceed max_decode")
        if self.clip_lo >= self.clip_hi:
            raise ConfigError("clip_lo: must be below clip_hi")
        if not (0 <= self.attn_layers):
            raise ConfigError("attn_layers: must be >= 0")
        if self.vocab_size > 50000:
            raise ConfigError("vocab_size: capped at 50000")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = set(cls.field_names())
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a flat JSON object")
        return cls.from_dict(raw)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def override(self, **kwargs) -> "RunConfig":
        """New config with the given fields replaced; validates the result."""
        d = self.to_dict()
        for k, v in kwargs.items():
            if k not in d:
                raise ConfigError(f"unknown config key: {k}")
            if v is not None:
                d[k] = v
        return RunConfig.from_dict(d)
