"""The shared encoder with its pretraining decoder and classification head."""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import numerics as T
from .errors import ConfigError
from .heads import ClassifierHead, ReconstructionDecoder, aggregate_and_classify, reconstruct
from .numerics import LayerNorm, Module
from .patch_embed import PatchEmbedding
from .temporal import TemporalConfig, TemporalEncoder, temporal_forward
from .unifier import LatentState, Unifier

ENCODER_GROUPS = ("embed", "unifier", "temporal", "norm")


@dataclasses.dataclass
class EncoderConfig:
    d_model: int = 256
    num_queries: int = 4
    heads: int = 4
    unify_depth: int = 1
    temporal_layers: int = 5
    ffn_mult: int = 4
    conv_channels: tuple = (16, 16)
    decoder_heads: int = 4
    num_classes: int = 5
    dropout: float = 0.0
    rope_base: float = 10000.0
    lora_rank: int = 16
    lora_alpha: float = 16.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        if self.d_model % self.heads or self.d_model % self.decoder_heads:
            raise ConfigError("d_model must be divisible by the head counts")
        if (self.d_model // self.heads) % 2:
            raise ConfigError("head width must be even for rotary codes")
        if self.d_model < 6:
            raise ConfigError("d_model must be >= 6")
        if self.num_queries < 1 or self.unify_depth < 1 or self.temporal_layers < 0:
            raise ConfigError("invalid depth/query settings")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def ffn_dim(self):
        return self.ffn_mult * self.d_model

    def temporal_config(self):
        return TemporalConfig(
            layers=self.temporal_layers,
            heads=self.heads,
            d_model=self.d_model,
            ffn_dim=self.ffn_dim,
            dropout=self.dropout,
            rope_base=self.rope_base,
        )

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def tiny_config(**overrides):
    """Desk-scale configuration used by tests and quick runs."""
    base = dict(d_model=16, num_queries=4, heads=2, temporal_layers=1, ffn_mult=2,
                conv_channels=(4, 4), decoder_heads=2, num_classes=2)
    base.update(overrides)
    return EncoderConfig(**base)


class BiosignalModel(Module):
    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.seed)
        dtype = np.dtype(config.dtype).type
        d = config.d_model
        with T.default_dtype(dtype):
            self.embed = PatchEmbedding(d, rng, config.conv_channels, dtype=dtype)
            self.unifier = Unifier(d, config.num_queries, config.heads, config.ffn_dim, rng,
                                   depth=config.unify_depth, dtype=dtype)
            self.temporal = TemporalEncoder(config.temporal_config(), rng, dtype=dtype)
            self.norm = LayerNorm(d, dtype=dtype)
            self.decoder = ReconstructionDecoder(d, config.decoder_heads, config.ffn_dim, rng, dtype=dtype)
            self.head = ClassifierHead(d, config.num_classes, config.heads, rng, dtype=dtype)
        self.retain_attn = True
        self.dropout_rng = np.random.default_rng(config.seed + 1)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype).type

    def encode(self, values, meta, mask=None, position_offset=0):
        """Patches ``[B, C, P, 32]`` -> normalized latents ``[B, P, Q, D]``."""
        tokens = self.embed(values, meta, mask)
        state = self.unifier(tokens)
        rng = self.dropout_rng if self.training and self.config.dropout > 0 else None
        state = temporal_forward(state, self.temporal, position_offset, rng)
        attn = state.attn if self.retain_attn else None
        return LatentState(self.norm(state.values), attn)

    def reconstruct(self, values, meta, mask=None):
        state = self.encode(values, meta, mask)
        return reconstruct(state, meta, self.decoder)

    def logits(self, values, meta):
        return aggregate_and_classify(self.encode(values, meta), self.head)

    def forward(self, values, meta):
        return self.logits(values, meta)

    # -- parameter groups ------------------------------------------------
    @staticmethod
    def group_of(name):
        if ".lora." in name:
            return "lora"
        return name.split(".", 1)[0]

    def parameter_groups(self):
        groups = {}
        for name, p in self.named_parameters():
            groups.setdefault(self.group_of(name), []).append((name, p))
        return groups

    def encoder_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if self.group_of(n) in ENCODER_GROUPS]
