"""Channel-modality unification: learned queries cross-attend over channel tokens."""

from __future__ import annotations

import dataclasses

import numpy as np

from . import numerics as T
from .errors import EmptyInputError
from .numerics import FeedForward, LayerNorm, Module, MultiHeadAttention, Parameter, Tensor


class QuerySet(Module):
    def __init__(self, num_queries, d_model, rng, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.queries = Parameter(rng.standard_normal((num_queries, d_model)).astype(dtype))

    @property
    def num_queries(self):
        return self.queries.shape[0]


@dataclasses.dataclass
class LatentState:
    """Unified latents ``values[B, P, Q, D]`` and, optionally, channel scores ``attn[B, P, Q, C]``."""

    values: Tensor
    attn: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape


class CrossAttentionBlock(Module):
    """Pre-norm cross-attention from latents to channel tokens, with residual."""

    def __init__(self, d_model, heads, rng, dtype=None):
        self.norm_q = LayerNorm(d_model, dtype=dtype)
        self.norm_kv = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)

    def forward(self, latents, tokens):
        # latents [B, P, Q, D], tokens [B, P, C, D]
        out, probs = self.attn(self.norm_q(latents), self.norm_kv(tokens), return_attn=True)
        return latents + out, probs


class SelfAttentionBlock(Module):
    """Pre-norm self-attention + feed-forward over the query axis."""

    def __init__(self, d_model, heads, ffn_dim, rng, dtype=None):
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, ffn_dim, rng, dtype=dtype)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ffn(self.norm2(x))


class Unifier(Module):
    def __init__(self, d_model, num_queries, heads, ffn_dim, rng, depth=1, dtype=None):
        self.query_set = QuerySet(num_queries, d_model, rng, dtype=dtype)
        self.cross = [CrossAttentionBlock(d_model, heads, rng, dtype=dtype) for _ in range(depth)]
        self.refine = [SelfAttentionBlock(d_model, heads, ffn_dim, rng, dtype=dtype) for _ in range(depth)]

    def forward(self, tokens):
        state = cross_attend_queries(tokens, self.query_set, self.cross[0])
        state = refine_queries(state, self.refine[0])
        kv = T.transpose(tokens, (0, 2, 1, 3))
        for cross, refine in zip(self.cross[1:], self.refine[1:]):
            values, attn = cross(state.values, kv)
            state = refine_queries(LatentState(values, attn), refine)
        return state


def cross_attend_queries(tokens, query_set, block):
    """Per patch, the query set attends over all ``C`` channel tokens.

    ``tokens`` is ``[B, C, P, D]``; returns a :class:`LatentState` of shape
    ``[B, P, Q, D]`` with head-averaged channel scores ``[B, P, Q, C]``.
    """
    if tokens.ndim == 3:
        tokens = T.reshape(tokens, (1,) + tokens.shape)
    b, c, p, d = tokens.shape
    if c == 0:
        raise EmptyInputError("cross-attention needs at least one channel")
    kv = T.transpose(tokens, (0, 2, 1, 3))  # [B, P, C, D]
    q = T.broadcast_to(query_set.queries, (b, p) + query_set.queries.shape)
    values, attn = block(q, kv)
    return LatentState(values, attn)


def refine_queries(state, block):
    return LatentState(block(state.values), state.attn)
