"""Patch-wise temporal Transformer with rotary position codes."""

from __future__ import annotations

import dataclasses

import numpy as np

from . import numerics as T
from .errors import ConfigError
from .numerics import FeedForward, LayerNorm, Module, MultiHeadAttention, Tensor
from .unifier import LatentState


@dataclasses.dataclass(frozen=True)
class RopeParams:
    dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.dim % 2:
            raise ConfigError(f"rotary dim must be even, got {self.dim}")

    def frequencies(self):
        return self.base ** (-2.0 * np.arange(self.dim // 2) / self.dim)


@dataclasses.dataclass
class TemporalConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    ffn_dim: int = 512
    dropout: float = 0.0
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")


def _rotate_pairs(x):
    # (x0, x1, x2, x3, ...) -> (-x1, x0, -x3, x2, ...)
    out = np.empty_like(x)
    out[..., 0::2] = -x[..., 1::2]
    out[..., 1::2] = x[..., 0::2]
    return out


def _rotate_pairs_t(g):
    # adjoint of _rotate_pairs
    out = np.empty_like(g)
    out[..., 0::2] = g[..., 1::2]
    out[..., 1::2] = -g[..., 0::2]
    return out


def rope_tables(positions, params, dtype=np.float64):
    positions = np.asarray(positions, dtype=np.float64)
    angle = positions[..., None] * params.frequencies()  # [..., dim/2]
    cos = np.repeat(np.cos(angle), 2, axis=-1).astype(dtype)
    sin = np.repeat(np.sin(angle), 2, axis=-1).astype(dtype)
    return cos, sin


def rope_rotate(x, position, params):
    """Rotate each pair ``(x[2i], x[2i+1])`` by ``position * theta_i``.

    ``position`` is a scalar or an array broadcasting against ``x``'s
    second-to-last axis (one position per row).
    """
    if x.shape[-1] != params.dim:
        raise ConfigError(f"rotary dim {params.dim} does not match input width {x.shape[-1]}")
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    pos = np.asarray(position)
    cos, sin = rope_tables(pos, params, x.dtype)
    if pos.ndim == 0:
        cos, sin = cos.reshape(-1), sin.reshape(-1)
    out = x.data * cos + _rotate_pairs(x.data) * sin

    def bw(g):
        return (g * cos + _rotate_pairs_t(g * sin),)

    return Tensor._make(out, (x,), bw)


class TemporalLayer(Module):
    def __init__(self, cfg, rng, dtype=None):
        self.cfg = cfg
        self.norm1 = LayerNorm(cfg.d_model, dtype=dtype)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(cfg.d_model, dtype=dtype)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, rng, dtype=dtype)
        self.rope = RopeParams(cfg.d_model // cfg.heads, cfg.rope_base)

    def forward(self, x, positions, rng=None):
        rot = lambda t: rope_rotate(t, positions, self.rope)  # noqa: E731
        h = self.norm1(x)
        a = self.attn(h, h, rotate_q=rot, rotate_k=rot)
        x = x + T.dropout(a, self.cfg.dropout, rng, self.training and rng is not None)
        f = self.ffn(self.norm2(x))
        return x + T.dropout(f, self.cfg.dropout, rng, self.training and rng is not None)


class TemporalEncoder(Module):
    def __init__(self, cfg, rng, dtype=None):
        self.cfg = cfg
        self.layers = [TemporalLayer(cfg, rng, dtype=dtype) for _ in range(cfg.layers)]


def temporal_forward(state, encoder, position_offset=0, rng=None):
    """Flatten latents patch-major to ``[B, P*Q, D]``, run the layer stack, reshape back.

    Every query of patch ``p`` shares rotary position ``p + position_offset``.
    """
    b, p, q, d = state.values.shape
    if not encoder.layers:
        return state
    x = T.reshape(state.values, (b, p * q, d))
    positions = np.repeat(np.arange(p) + position_offset, q)
    for layer in encoder.layers:
        x = layer(x, positions, rng)
    return LatentState(T.reshape(x, (b, p, q, d)), state.attn)
