"""Uniform fake quantization for post-training (PTQ) and quantization-aware training (QAT).

Weights: symmetric, per output channel, integer grid ``[-(2^(b-1)-1), 2^(b-1)-1]``.
Activations: asymmetric, per tensor, grid ``[0, 2^b - 1]``, range from the
calibration pass clipped at the 99.9th percentile of ``|x|``.
"""

from __future__ import annotations

import copy
import dataclasses
import math

import numpy as np

from . import kernels
from . import numerics as T
from .errors import CalibrationError, ConfigError
from .numerics import Conv1d, Linear, Tensor

ALLOWED_CONFIGS = ((8, 8), (4, 8), (2, 8), (4, 4))
SCALE_FLOOR = 1e-8
CLIP_PERCENTILE = 99.9
MAX_SAMPLES_PER_SITE = 1 << 20


@dataclasses.dataclass(frozen=True)
class QuantSpec:
    weight_bits: int = 8
    act_bits: int = 8
    mode: str = "PTQ"

    def __post_init__(self):
        if (self.weight_bits, self.act_bits) not in ALLOWED_CONFIGS:
            raise ConfigError(
                f"(weights={self.weight_bits}, acts={self.act_bits}) not in {list(ALLOWED_CONFIGS)}"
            )
        if self.mode.upper() not in ("PTQ", "QAT"):
            raise ConfigError(f"unknown quantization mode {self.mode!r}")
        object.__setattr__(self, "mode", self.mode.upper())

    def to_dict(self):
        return {"weight_bits": self.weight_bits, "act_bits": self.act_bits, "mode": self.mode,
                "weight_granularity": "per_channel_symmetric", "act_granularity": "per_tensor_asymmetric"}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["weight_bits"]), int(d["act_bits"]), d.get("mode", "PTQ"))


def grid(bits, symmetric=True):
    if symmetric:
        top = 2 ** (bits - 1) - 1
        return -top, top
    return 0, 2 ** bits - 1


def qdq(x, bits, scale, zero_point=0, symmetric=True):
    """Quantize-dequantize with a straight-through gradient.

    ``scale``/``zero_point`` are scalars or per-row arrays along axis 0.
    Rounding is half-to-even. The gradient is 1 where ``x / scale + zp``
    lies inside the integer grid and 0 outside.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
    if np.any(~(scale > 0)):
        raise CalibrationError("quantization scale must be positive")
    zp = np.broadcast_to(np.atleast_1d(np.asarray(zero_point, dtype=np.float64)), scale.shape)
    qmin, qmax = grid(bits, symmetric)
    rows = scale.shape[0]
    flat = x.data.reshape(rows, -1) if x.ndim else x.data.reshape(1, 1)
    y, inside = kernels.fake_quant(flat, scale, zp, qmin, qmax)
    y = y.reshape(x.shape).astype(x.dtype)
    inside = inside.reshape(x.shape)
    return Tensor._make(y, (x,), lambda g: (g * inside,))


def weight_scales(w, bits):
    """Per-output-channel symmetric scales: ``max|w_row| / qmax``, floored."""
    _, qmax = grid(bits, True)
    w = np.asarray(w, dtype=np.float64).reshape(np.shape(w)[0], -1)
    return np.maximum(np.abs(w).max(axis=1) / qmax, SCALE_FLOOR)


def act_params(lo, hi, bits):
    """Asymmetric scale and integer zero point for the range ``[lo, hi]`` (widened to include 0)."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    _, qmax = grid(bits, False)
    scale = max((hi - lo) / qmax, SCALE_FLOOR)
    zp = float(np.clip(np.rint(-lo / scale), 0, qmax))
    return scale, zp


class WeightFakeQuant:
    def __init__(self, bits):
        self.bits = bits

    def __call__(self, w):
        return qdq(w, self.bits, weight_scales(w.data, self.bits), 0.0, symmetric=True)


class ActFakeQuant:
    def __init__(self, bits, lo, hi):
        self.bits = bits
        self.lo, self.hi = float(lo), float(hi)
        self.scale, self.zero_point = act_params(lo, hi, bits)

    def __call__(self, x):
        return qdq(x, self.bits, self.scale, self.zero_point, symmetric=False)


# -- calibration -----------------------------------------------------------

@dataclasses.dataclass
class SiteStats:
    min: float = math.inf
    max: float = -math.inf
    samples: list = dataclasses.field(default_factory=list)
    count: int = 0
    percentile: float | None = None

    def update(self, x):
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size == 0:
            return
        self.min = min(self.min, float(x.min()))
        self.max = max(self.max, float(x.max()))
        stride = max(1, x.size // (MAX_SAMPLES_PER_SITE // 16))
        self.samples.append(np.abs(x[::stride]))
        self.count += x.size

    def finalize(self, q=CLIP_PERCENTILE):
        if self.samples:
            self.percentile = float(np.percentile(np.concatenate(self.samples), q))
            self.samples = []
        return self

    def clip_range(self):
        p = self.percentile if self.percentile is not None else max(abs(self.min), abs(self.max))
        return max(self.min, -p), min(self.max, p)


@dataclasses.dataclass
class CalibStats:
    sites: dict

    def __getitem__(self, name):
        return self.sites[name]

    def __contains__(self, name):
        return name in self.sites


class _Recorder:
    def __init__(self, stats):
        self.stats = stats

    def __call__(self, x):
        self.stats.update(x.data)
        return x


def quant_sites(model, exclude=("decoder",)):
    """Linear/conv layers eligible for fake quantization, by name."""
    sites = {}
    for name, mod in model.named_modules():
        if isinstance(mod, (Linear, Conv1d)) and not any(name.startswith(p) for p in exclude):
            sites[name] = mod
    return sites


def _forward_batch(model, batch):
    if callable(batch):
        return batch(model)
    values, meta = batch[0], batch[1]
    return model.logits(values, meta)


def calibrate(model, batches, percentile=CLIP_PERCENTILE):
    """Record per-site activation min/max and ``|x|`` percentile over the batches.

    ``batches`` yields ``(values, meta, ...)`` tuples or callables taking the model.
    """
    sites = quant_sites(model)
    stats = {name: SiteStats() for name in sites}
    saved = {name: mod.act_quant for name, mod in sites.items()}
    was_training = model.training
    model.eval()
    n = 0
    try:
        for name, mod in sites.items():
            mod.act_quant = _Recorder(stats[name])
        with T.no_grad():
            for batch in batches:
                _forward_batch(model, batch)
                n += 1
    finally:
        for name, mod in sites.items():
            mod.act_quant = saved[name]
        model.train(was_training)
    if n == 0:
        raise CalibrationError("calibration needs at least one batch")
    for s in stats.values():
        s.finalize(percentile)
    return CalibStats(stats)


def apply_ptq(model, spec, stats, inplace=False):
    """Install weight and activation fake quantizers on every eligible site."""
    if not inplace:
        model = copy.deepcopy(model)
    sites = quant_sites(model)
    missing = [name for name in sites if name not in stats]
    if missing:
        raise CalibrationError(f"no calibration statistics for sites: {missing[:5]}")
    for name, mod in sites.items():
        lo, hi = stats[name].clip_range()
        mod.weight_quant = WeightFakeQuant(spec.weight_bits)
        mod.act_quant = ActFakeQuant(spec.act_bits, lo, hi)
    model.quant_spec = spec
    return model


def remove_quant(model):
    for mod in quant_sites(model).values():
        mod.weight_quant = None
        mod.act_quant = None
    model.quant_spec = None
    return model


def qat_finetune(model, spec, train, val, stats=None, epochs=15, lr=1e-4, batch_size=32,
                 seed=0, mode="FF", select_metric="balanced_accuracy", log=None):
    """Fine-tune with fake quantization in the forward pass and straight-through gradients.

    Starts from the PTQ model (same calibrated activation ranges). The epoch
    with the best validation score is returned; epoch 0 is the untouched
    PTQ model, so zero epochs returns exactly the PTQ model.
    """
    from .trainer import TrainConfig, fit_classifier, set_trainable

    if stats is None:
        stats = calibrate(model, [(train.values[:batch_size], train.meta)])
    qmodel = apply_ptq(model, QuantSpec(spec.weight_bits, spec.act_bits, "QAT"), stats)
    cfg = TrainConfig(mode=mode, lr=lr, epochs=epochs, batch_size=batch_size, seed=seed,
                      patience=epochs + 1, select_metric=select_metric)
    set_trainable(qmodel, mode, seed)
    fit_classifier(qmodel, train, val, cfg, log=log)
    return qmodel


# -- storage accounting ----------------------------------------------------

@dataclasses.dataclass
class PackedSize:
    fp32_bytes: int
    packed_weight_bytes: int
    quantized_fp32_bytes: int
    overhead_bytes: int
    unquantized_bytes: int

    @property
    def total(self):
        return self.packed_weight_bytes + self.overhead_bytes + self.unquantized_bytes


def packed_size_report(model, spec=None, exclude=("decoder",)):
    """Theoretical storage: ``ceil(bits * count / 8)`` per quantized weight
    tensor, one FP32 scale per output channel, FP32 scale + zero point per
    activation site, and 4 bytes per remaining parameter."""
    sites = quant_sites(model, exclude)
    qweights = {f"{name}.weight": mod for name, mod in sites.items()}
    fp32 = packed = qfp32 = overhead = rest = 0
    for name, p in model.named_parameters():
        if any(name.startswith(x) for x in exclude):
            continue
        fp32 += 4 * p.size
        if spec is not None and name in qweights:
            packed += math.ceil(spec.weight_bits * p.size / 8)
            qfp32 += 4 * p.size
            overhead += 4 * p.shape[0]
        else:
            rest += 4 * p.size
    if spec is not None:
        overhead += 8 * len(sites)
    return PackedSize(fp32, packed, qfp32, overhead, rest)


def packed_size_bytes(model, spec=None):
    return packed_size_report(model, spec).total
