"""Layers built on :mod:`tensor`: linear, conv1d, layer norm, attention, feed-forward."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor owned by a module."""

    __slots__ = ()

    def __init__(self, data, requires_grad=True, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, child in self._children():
            yield from child.named_modules(prefix + name + ".")

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        unknown = sorted(set(state) - set(own))
        if unknown:
            raise KeyError(f"unknown tensor names: {unknown}")
        missing = sorted(set(own) - set(state))
        if strict and missing:
            raise KeyError(f"missing tensor names: {missing}")
        for name, value in state.items():
            p = own[name]
            value = np.asarray(value)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data = np.ascontiguousarray(value.astype(p.dtype))

    def train(self, mode=True):
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag):
        for p in self.parameters():
            p.requires_grad = flag
        return self


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """``y = x W^T + b`` with optional fake-quant hooks and low-rank adapter.

    ``act_quant`` and ``weight_quant`` are callables installed by the
    quantization layer; ``lora`` is an adapter module added to the output.
    """

    def __init__(self, d_in, d_out, rng, bias=True, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(_uniform(rng, (d_out, d_in), 1.0 / math.sqrt(d_in), dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None
        self.act_quant = None
        self.weight_quant = None
        self.lora = None

    def effective_weight(self):
        if self.weight_quant is not None:
            return self.weight_quant(self.weight)
        return self.weight

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"Linear expects width {self.d_in}, got {x.shape[-1]}")
        if self.act_quant is not None:
            x = self.act_quant(x)
        y = T.matmul(x, T.transpose(self.effective_weight()))
        if self.bias is not None:
            y = y + self.bias
        if self.lora is not None:
            y = y + self.lora(x)
        return y


def unfold1d(x, kernel, stride, padding):
    """Gather sliding windows of the last axis: ``[..., L] -> [..., L_out, kernel]``."""
    length = x.shape[-1]
    padded = length + 2 * padding
    l_out = (padded - kernel) // stride + 1
    xp = np.pad(x.data, [(0, 0)] * (x.ndim - 1) + [(padding, padding)])
    idx = np.arange(l_out)[:, None] * stride + np.arange(kernel)[None, :]
    out = np.ascontiguousarray(xp[..., idx])
    shape = x.shape

    def bw(g):
        full = np.zeros(shape[:-1] + (padded,), dtype=g.dtype)
        span = stride * (l_out - 1) + 1
        for k in range(kernel):
            full[..., k:k + span:stride] += g[..., k]
        return (full[..., padding:padding + length],)

    return Tensor._make(out, (x,), bw)


class Conv1d(Module):
    """1-D convolution computed as unfold + matmul (one gradient path)."""

    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.padding = stride, padding
        bound = 1.0 / math.sqrt(c_in * kernel)
        self.weight = Parameter(_uniform(rng, (c_out, c_in, kernel), bound, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.act_quant = None
        self.weight_quant = None
        self.lora = None

    def out_length(self, length):
        return (length + 2 * self.padding - self.kernel) // self.stride + 1

    def effective_weight(self):
        w = T.reshape(self.weight, (self.c_out, self.c_in * self.kernel))
        if self.weight_quant is not None:
            w = self.weight_quant(w)
        return w

    def forward(self, x):
        # x: [N, c_in, L] -> [N, c_out, L_out]
        if x.shape[-2] != self.c_in:
            raise DimensionError(f"Conv1d expects {self.c_in} input channels, got {x.shape[-2]}")
        if self.act_quant is not None:
            x = self.act_quant(x)
        cols = unfold1d(x, self.kernel, self.stride, self.padding)  # [N, c_in, L_out, K]
        n, _, l_out, _ = cols.shape
        cols = T.reshape(T.transpose(cols, (0, 2, 1, 3)), (n, l_out, self.c_in * self.kernel))
        y = T.matmul(cols, T.transpose(self.effective_weight())) + self.bias  # [N, L_out, c_out]
        return T.transpose(y, (0, 2, 1))


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.gamma = Parameter(np.ones(d, dtype=dtype))
        self.beta = Parameter(np.zeros(d, dtype=dtype))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    def __init__(self, d, hidden, rng, dtype=None):
        self.fc1 = Linear(d, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, d, rng, dtype=dtype)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


def split_heads(x, heads):
    *lead, n, d = x.shape
    x = T.reshape(x, tuple(lead) + (n, heads, d // heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return T.transpose(x, axes)


def merge_heads(x):
    *lead, h, n, dh = x.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return T.reshape(T.transpose(x, axes), tuple(lead) + (n, h * dh))


class MultiHeadAttention(Module):
    """Multi-head attention over the second-to-last axis.

    ``rotate_q`` / ``rotate_k`` are optional callables applied to the
    per-head queries/keys (shape ``[..., H, N, dh]``), used for rotary
    position codes.
    """

    def __init__(self, d_model, heads, rng, d_kv=None, dtype=None):
        if d_model % heads:
            raise DimensionError(f"d_model={d_model} not divisible by heads={heads}")
        d_kv = d_kv or d_model
        self.heads = heads
        self.d_model = d_model
        self.q_proj = Linear(d_model, d_model, rng, dtype=dtype)
        self.k_proj = Linear(d_kv, d_model, rng, dtype=dtype)
        self.v_proj = Linear(d_kv, d_model, rng, dtype=dtype)
        self.o_proj = Linear(d_model, d_model, rng, dtype=dtype)

    def forward(self, xq, xkv, rotate_q=None, rotate_k=None, return_attn=False):
        q = split_heads(self.q_proj(xq), self.heads)
        k = split_heads(self.k_proj(xkv), self.heads)
        v = split_heads(self.v_proj(xkv), self.heads)
        if rotate_q is not None:
            q = rotate_q(q)
        if rotate_k is not None:
            k = rotate_k(k)
        scale = 1.0 / math.sqrt(self.d_model // self.heads)
        scores = T.matmul(q, T.swapaxes_(k)) * scale
        probs = T.softmax(scores, axis=-1)
        out = self.o_proj(merge_heads(T.matmul(probs, v)))
        if return_attn:
            return out, probs.data.mean(axis=-3)
        return out
