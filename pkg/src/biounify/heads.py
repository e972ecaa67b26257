"""Task heads: masked-patch decoder, aggregation-query classifier, low-rank adapters."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import numerics as T
from .errors import ConfigError, DimensionError, UndefinedLossError
from .numerics import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, Tensor
from .patch_embed import SensorTypeTable, channel_codes
from .sigproc import PATCH_LEN

LORA_RANK = 16
LORA_ALPHA = 16.0


# -- masking ---------------------------------------------------------------

@dataclasses.dataclass
class MaskPlan:
    mask: np.ndarray  # bool [C, P]
    ratio: float
    seed: object

    @property
    def density(self):
        return float(self.mask.mean())


def make_mask(n_channels, n_patches, ratio, seed):
    """Mask ``round(ratio * C * P)`` cells drawn uniformly without replacement."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}")
    cells = n_channels * n_patches
    rng = np.random.default_rng(seed)
    count = int(math.floor(ratio * cells + 0.5))
    mask = np.zeros(cells, dtype=bool)
    mask[rng.permutation(cells)[:count]] = True
    return MaskPlan(mask.reshape(n_channels, n_patches), ratio, seed)


def masked_mse(pred, target, mask):
    """Mean squared error over masked cells only.

    ``pred``/``target`` are ``[..., C, P, 32]``; ``mask`` (or a :class:`MaskPlan`)
    is ``[..., C, P]``.
    """
    if isinstance(mask, MaskPlan):
        mask = mask.mask
    if pred.shape != np.shape(target):
        raise DimensionError(f"prediction {pred.shape} vs target {np.shape(target)}")
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape[:-1])
    n = int(mask.sum())
    if n == 0:
        raise UndefinedLossError("mask selects no cells")
    weight = (mask[..., None] / float(n * pred.shape[-1])).astype(pred.dtype)
    diff = pred - Tensor(np.asarray(target, dtype=pred.dtype))
    return T.sum_(diff * diff * Tensor(weight))


# -- reconstruction decoder ------------------------------------------------

class ReconstructionDecoder(Module):
    """Channel-specific queries attend to the latents of their patch and emit 32 samples."""

    def __init__(self, d_model, heads, ffn_dim, rng, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.d_model = d_model
        self.sensor = SensorTypeTable(d_model, rng, dtype=dtype)
        self.query_bias = Parameter(np.zeros(d_model, dtype=dtype))
        self.norm_q = LayerNorm(d_model, dtype=dtype)
        self.norm_kv = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm_ff = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, ffn_dim, rng, dtype=dtype)
        self.out = Linear(d_model, PATCH_LEN, rng, dtype=dtype)

    def channel_queries(self, meta):
        pos = Tensor(channel_codes(meta, self.d_model, self.query_bias.dtype))
        return pos + self.sensor.lookup([m.modality for m in meta]) + self.query_bias


def reconstruct(state, meta, decoder, n_patches=None):
    """Decode ``[B, C, P, 32]`` patch estimates from latents ``[B, P, Q, D]``."""
    b, p, q, d = state.values.shape
    if n_patches is not None and n_patches != p:
        raise DimensionError(f"metadata describes {n_patches} patches, latents hold {p}")
    c = len(meta)
    dq = T.broadcast_to(decoder.channel_queries(meta), (b, p, c, d))
    h = dq + decoder.attn(decoder.norm_q(dq), decoder.norm_kv(state.values))
    h = h + decoder.ffn(decoder.norm_ff(h))
    out = decoder.out(h)  # [B, P, C, 32]
    return T.transpose(out, (0, 2, 1, 3))


# -- classification head ---------------------------------------------------

class ClassifierHead(Module):
    """A single aggregation query pools all latents; a linear layer emits logits."""

    def __init__(self, d_model, num_classes, heads, rng, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.num_classes = num_classes
        self.query = Parameter((0.02 * rng.standard_normal(d_model)).astype(dtype))
        self.norm_kv = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm_out = LayerNorm(d_model, dtype=dtype)
        self.fc = Linear(d_model, num_classes, rng, dtype=dtype)


def aggregate_and_classify(state, head, return_attn=False):
    """Pool the ``P*Q`` latents with the aggregation query; returns logits ``[B, K]``."""
    b, p, q, d = state.values.shape
    kv = head.norm_kv(T.reshape(state.values, (b, p * q, d)))
    query = T.broadcast_to(T.reshape(head.query, (1, 1, d)), (b, 1, d))
    pooled, probs = head.attn(query, kv, return_attn=True)
    pooled = T.reshape(pooled, (b, d))
    logits = head.fc(head.norm_out(pooled))
    if return_attn:
        return logits, pooled, probs[:, 0, :]
    return logits


# -- low-rank adaptation ---------------------------------------------------

class LoraAdapter(Module):
    """Low-rank update ``(alpha / r) * B A x`` with ``B`` starting at zero."""

    def __init__(self, d_in, d_out, rng, rank=LORA_RANK, alpha=LORA_ALPHA, dtype=None):
        dtype = dtype or T.get_default_dtype()
        if rank < 1:
            raise ConfigError("LoRA rank must be >= 1")
        self.rank, self.alpha = rank, float(alpha)
        self.A = Parameter(rng.uniform(-1, 1, (rank, d_in)).astype(dtype) / math.sqrt(d_in))
        self.B = Parameter(np.zeros((d_out, rank), dtype=dtype))

    @property
    def scale(self):
        return self.alpha / self.rank

    def forward(self, x):
        if self.A.shape[0] != self.B.shape[1]:
            raise ConfigError(f"adapter rank mismatch: A {self.A.shape}, B {self.B.shape}")
        h = T.matmul(x, T.transpose(self.A))
        return T.matmul(h, T.transpose(self.B)) * self.scale


def lora_apply(weight, adapter, x):
    """``y = x W^T + (alpha / r) (x A^T) B^T`` for row-vector inputs ``x``."""
    weight = weight if isinstance(weight, Tensor) else Tensor(np.asarray(weight))
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=weight.dtype))
    d_out, d_in = weight.shape
    if adapter.A.shape[1] != d_in or adapter.B.shape[0] != d_out or adapter.A.shape[0] != adapter.B.shape[1]:
        raise ConfigError("adapter shapes do not match the frozen weight")
    return T.matmul(x, T.transpose(weight)) + adapter(x)


def lora_targets(model):
    """Query/value projections of the unifier self-attention and every temporal layer."""
    names = []
    for i, _ in enumerate(model.unifier.refine):
        names += [f"unifier.refine.{i}.attn.q_proj", f"unifier.refine.{i}.attn.v_proj"]
    for i, _ in enumerate(model.temporal.layers):
        names += [f"temporal.layers.{i}.attn.q_proj", f"temporal.layers.{i}.attn.v_proj"]
    return names


def inject_lora(model, rng, rank=LORA_RANK, alpha=LORA_ALPHA, targets=None):
    """Attach adapters to the target linear layers; returns the target names."""
    modules = dict(model.named_modules())
    targets = lora_targets(model) if targets is None else targets
    for name in targets:
        layer = modules[name]
        if not isinstance(layer, Linear):
            raise ConfigError(f"{name} is not a linear layer")
        if layer.lora is None:
            layer.lora = LoraAdapter(layer.d_in, layer.d_out, rng, rank, alpha, dtype=layer.weight.dtype)
    return targets


def lora_param_count(model):
    return sum(p.size for name, p in model.named_parameters() if ".lora." in name)
