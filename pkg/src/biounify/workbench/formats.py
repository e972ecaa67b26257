"""On-disk formats.

BSR record: ``<name>.bsr`` holds little-endian float32 samples, channel-major
(all samples of channel 0, then channel 1, ...). The sidecar
``<name>.bsr.json`` holds ``{"format", "version", "fs", "n_samples",
"duration_s", "channels": [{"label", "modality", "coords"}]}``.

Checkpoint: ``<name>.ckpt`` is a JSON manifest ``{"format", "version",
"config", "tensors": {name: {"shape", "dtype", "offset", "nbytes"}},
"lora", "quant"}``; ``<name>.blob`` concatenates the little-endian tensor
bytes in manifest order.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from ..errors import ConfigError, DimensionError
from ..heads import inject_lora
from ..model import BiosignalModel, EncoderConfig
from ..quant import QuantSpec, SiteStats, CalibStats, apply_ptq, quant_sites
from ..sigproc import Channel, MultimodalRecord

BSR_VERSION = 1
CKPT_VERSION = 1


def atomic_write(path, data):
    """Write bytes via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj):
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


def sidecar_path(path):
    return os.fspath(path) + ".json"


def write_bsr(path, record):
    record.validate()
    data = np.ascontiguousarray(record.data, dtype="<f4")
    side = {
        "format": "bsr",
        "version": BSR_VERSION,
        "fs": float(record.sample_rate_hz),
        "n_samples": int(data.shape[1]),
        "duration_s": float(data.shape[1] / record.sample_rate_hz),
        "channels": [
            {"label": ch.label, "modality": ch.modality, "coords": [float(c) for c in ch.coords]}
            for ch in record.channels
        ],
    }
    atomic_write(path, data.tobytes())
    atomic_write(sidecar_path(path), _dumps(side))


def read_bsr(path):
    with open(sidecar_path(path)) as fh:
        side = json.load(fh)
    if side.get("format") != "bsr":
        raise ConfigError(f"{path}: not a BSR sidecar")
    with open(path, "rb") as fh:
        payload = fh.read()
    n_ch, n = len(side["channels"]), int(side["n_samples"])
    if n_ch * n != len(payload) // 4 or len(payload) % 4:
        raise DimensionError(f"{path}: payload holds {len(payload) // 4} values, sidecar expects {n_ch * n}")
    data = np.frombuffer(payload, dtype="<f4").reshape(n_ch, n).astype(np.float32)
    chans = [
        Channel(c["modality"], c["label"], np.array(c["coords"], dtype=np.float64), data[i].copy())
        for i, c in enumerate(side["channels"])
    ]
    return MultimodalRecord(chans, float(side["fs"]))


# -- checkpoints -------------------------------------------------------------

def blob_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".blob"


def _lora_layout(model):
    targets = []
    rank = alpha = None
    for name, mod in model.named_modules():
        lora = getattr(mod, "lora", None)
        if lora is not None:
            targets.append(name)
            rank, alpha = lora.rank, lora.alpha
    if not targets:
        return None
    return {"rank": rank, "alpha": alpha, "targets": targets}


def _quant_layout(model):
    spec = getattr(model, "quant_spec", None)
    if spec is None:
        return None
    ranges = {}
    for name, mod in quant_sites(model).items():
        aq = mod.act_quant
        ranges[name] = [aq.lo, aq.hi]
    return {"spec": spec.to_dict(), "act_ranges": ranges}


def save_checkpoint(path, model, extra=None):
    tensors, chunks, offset = {}, [], 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype=p.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        tensors[name] = {"shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": "biounify-ckpt",
        "version": CKPT_VERSION,
        "config": model.config.to_dict(),
        "tensors": tensors,
        "lora": _lora_layout(model),
        "quant": _quant_layout(model),
    }
    if extra:
        manifest["extra"] = extra
    atomic_write(blob_path(path), b"".join(chunks))
    atomic_write(path, _dumps(manifest))


def read_checkpoint(path):
    """Return ``(manifest, {name: array})`` without building a model."""
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "biounify-ckpt":
        raise ConfigError(f"{path}: not a checkpoint manifest")
    with open(blob_path(path), "rb") as fh:
        blob = fh.read()
    arrays = {}
    for name, info in manifest["tensors"].items():
        start, nbytes = info["offset"], info["nbytes"]
        if start + nbytes > len(blob):
            raise DimensionError(f"{name}: blob too short")
        arr = np.frombuffer(blob[start:start + nbytes], dtype=np.dtype(info["dtype"]))
        arrays[name] = arr.reshape(info["shape"]).copy()
    return manifest, arrays


def load_checkpoint(path):
    manifest, arrays = read_checkpoint(path)
    model = BiosignalModel(EncoderConfig.from_dict(manifest["config"]))
    lora = manifest.get("lora")
    if lora:
        inject_lora(model, np.random.default_rng(0), lora["rank"], lora["alpha"], lora["targets"])
    model.load_state_dict(arrays)
    quant = manifest.get("quant")
    if quant:
        spec = QuantSpec.from_dict(quant["spec"])
        stats = {}
        for name, (lo, hi) in quant["act_ranges"].items():
            s = SiteStats(min=lo, max=hi)
            s.percentile = max(abs(lo), abs(hi))
            stats[name] = s
        model = apply_ptq(model, spec, CalibStats(stats), inplace=True)
    model.eval()
    return model
