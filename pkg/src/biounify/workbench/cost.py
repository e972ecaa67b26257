"""Parameter, MAC, storage, latency and battery accounting."""

from __future__ import annotations

import dataclasses

from ..model import BiosignalModel, EncoderConfig
from ..quant import packed_size_bytes
from ..sigproc import PATCH_LEN, TARGET_FS

BATTERY_J = 4000.0  # 300 mAh at 3.7 V
REFERENCE_COMPUTE_MS = 325.6  # measured 12-lead, 10 s ECG inference
REFERENCE_ENERGY_MJ = 18.8


@dataclasses.dataclass
class ParamCount:
    by_group: dict
    trainable: int
    frozen: int
    total: int
    deployed: int  # everything except the pretraining decoder


def count_params(model):
    by_group, trainable, frozen = {}, 0, 0
    for name, p in model.named_parameters():
        g = model.group_of(name) if hasattr(model, "group_of") else name.split(".", 1)[0]
        by_group[g] = by_group.get(g, 0) + p.size
        if p.requires_grad:
            trainable += p.size
        else:
            frozen += p.size
    total = trainable + frozen
    return ParamCount(by_group, trainable, frozen, total, total - by_group.get("decoder", 0))


def linear_macs(rows, d_in, d_out):
    return rows * d_in * d_out


def _attention_macs(n_q, n_k, d):
    # q/o projections on queries, k/v on keys, scores and weighted sum across all heads
    return 2 * n_q * d * d + 2 * n_k * d * d + 2 * n_q * n_k * d


def count_macs(model_or_config, n_channels, n_patches):
    """Analytic multiply-accumulates of one inference (encoder + classifier head).

    Covers every matrix product: patch conv/projection, unification,
    temporal layers and the pooling head. Elementwise work and the FFT are
    not counted.
    """
    if isinstance(model_or_config, BiosignalModel):
        cfg = model_or_config.config
        adapters = [m.lora for _, m in model_or_config.named_modules() if getattr(m, "lora", None) is not None]
    else:
        cfg = model_or_config
        adapters = []
    d, q, f = cfg.d_model, cfg.num_queries, cfg.ffn_dim
    c, p = n_channels, n_patches
    c1, c2 = cfg.conv_channels
    l1 = (PATCH_LEN + 2 * (7 // 2) - 7) // 2 + 1
    l2 = (l1 + 2 * (5 // 2) - 5) // 2 + 1
    per_patch = l1 * c1 * 7 + l2 * c2 * c1 * 5 + (c2 * l2 + PATCH_LEN // 2 + 1) * d
    embed = c * p * per_patch

    cross = p * _attention_macs(q, c, d)
    refine = p * (_attention_macs(q, q, d) + 2 * q * d * f)
    unify = cfg.unify_depth * (cross + refine)

    s = p * q
    temporal = cfg.temporal_layers * (_attention_macs(s, s, d) + 2 * s * d * f)

    head = _attention_macs(1, s, d) + d * cfg.num_classes

    # adapters sit on unifier self-attention and temporal projections: P*Q rows each
    lora = sum(p * q * a.A.shape[0] * (a.A.shape[1] + a.B.shape[0]) for a in adapters)
    return embed + unify + temporal + head + lora


def patch_duration_ms(patch_len=PATCH_LEN, fs=TARGET_FS):
    return 1000.0 * patch_len / fs


def streaming_latency_ms(compute_ms, patch_ms=None):
    """Acquisition of one patch plus one inference."""
    patch_ms = patch_duration_ms() if patch_ms is None else patch_ms
    if compute_ms < 0 or patch_ms < 0:
        raise ValueError("latencies must be non-negative")
    return patch_ms + compute_ms


def battery_days(energy_mJ_per_window, window_s, battery_J=BATTERY_J):
    """Days of back-to-back window inferences on one battery charge."""
    if energy_mJ_per_window <= 0 or window_s <= 0 or battery_J <= 0:
        raise ValueError("inputs must be positive")
    windows = battery_J * 1000.0 / energy_mJ_per_window
    return windows * window_s / 86400.0


@dataclasses.dataclass
class CostReport:
    params: int
    macs: int
    packed_bytes: int
    streaming_latency_ms: float
    battery_days: float
    channels: int
    window_s: float
    patches: int
    weight_bits: int | None = None

    def as_dict(self):
        return dataclasses.asdict(self)


def cost_report(config, n_channels, window_s, spec=None, compute_ms=REFERENCE_COMPUTE_MS,
                energy_mJ=REFERENCE_ENERGY_MJ):
    """Cost summary for a config and input shape. Latency and battery life come
    from the supplied per-inference compute time and energy."""
    if not isinstance(config, EncoderConfig):
        config = EncoderConfig.from_dict(config)
    model = BiosignalModel(config)
    patches = int(round(window_s * TARGET_FS)) // PATCH_LEN
    return CostReport(
        params=count_params(model).deployed,
        macs=count_macs(config, n_channels, patches),
        packed_bytes=packed_size_bytes(model, spec),
        streaming_latency_ms=streaming_latency_ms(compute_ms),
        battery_days=battery_days(energy_mJ, window_s),
        channels=n_channels,
        window_s=float(window_s),
        patches=patches,
        weight_bits=None if spec is None else spec.weight_bits,
    )
