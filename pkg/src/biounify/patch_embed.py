"""Patch tokens: conv + spectral features, channel position codes, sensor-type rows."""

from __future__ import annotations

import dataclasses
import json
import math
from importlib import resources

import numpy as np

from . import numerics as T
from .errors import ConfigError, DimensionError, UnknownLeadError
from .numerics import Conv1d, Linear, Module, Parameter, Tensor
from .sigproc import MODALITIES, PATCH_LEN

MODALITY_INDEX = {m: i for i, m in enumerate(MODALITIES)}
STANDARD_LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")


def modality_index(modality):
    try:
        return MODALITY_INDEX[modality.upper()]
    except KeyError:
        raise ConfigError(f"unknown modality {modality!r}") from None


class SensorTypeTable(Module):
    """Learned per-modality row added to every token of that modality."""

    def __init__(self, d_model, rng, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.embeddings = Parameter((0.02 * rng.standard_normal((len(MODALITIES), d_model))).astype(dtype))

    def lookup(self, modalities):
        idx = np.array([modality_index(m) for m in modalities])
        return self.embeddings[idx]


@dataclasses.dataclass
class LeadAngleTable:
    """ECG lead angles in degrees, with an optional ring radius per lead."""

    angles: dict
    radius: dict

    @classmethod
    def from_mapping(cls, mapping):
        angles, radius = {}, {}
        for lead, value in mapping.items():
            if lead.startswith("_"):
                continue
            if isinstance(value, dict):
                angles[lead] = float(value["deg"])
                radius[lead] = float(value.get("radius", 1.0))
            else:
                angles[lead] = float(value)
                radius[lead] = 1.0
        for lead, deg in angles.items():
            if not -180.0 <= deg < 180.0:
                raise ConfigError(f"lead {lead} angle {deg} outside [-180, 180)")
        return cls(angles, radius)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_mapping(json.load(fh))

    @classmethod
    def default(cls):
        text = resources.files("biounify").joinpath("data/lead_angles.json").read_text()
        return cls.from_mapping(json.loads(text))

    def coords(self, lead):
        if lead not in self.angles:
            raise UnknownLeadError(lead)
        theta = math.radians(self.angles[lead])
        r = self.radius[lead]
        return np.array([r * math.cos(theta), r * math.sin(theta), 0.0])


_DEFAULT_LEADS = None


def ecg_lead_coordinates(lead, table=None):
    global _DEFAULT_LEADS
    if table is None:
        if _DEFAULT_LEADS is None:
            _DEFAULT_LEADS = LeadAngleTable.default()
        table = _DEFAULT_LEADS
    return table.coords(lead)


def positional_frequencies(d_model):
    bands = d_model // 6
    if bands < 1:
        raise ConfigError("d_model must be at least 6 for 3-D sinusoidal codes")
    return math.pi * 100.0 ** (np.arange(bands) / bands)


def positional_encoding(coords, d_model):
    """Fixed sinusoidal code of 3-D coordinates.

    ``d_model // 6`` frequency bands per axis; for each axis and band the
    pair ``(sin, cos)`` is interleaved. Leftover dimensions are zero.
    Accepts ``[3]`` or ``[C, 3]`` and returns ``[D]`` or ``[C, D]``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    single = coords.ndim == 1
    coords = coords.reshape(-1, 3)
    freqs = positional_frequencies(d_model)
    angle = coords[:, :, None] * freqs[None, None, :]  # [C, 3, bands]
    code = np.stack([np.sin(angle), np.cos(angle)], axis=-1).reshape(coords.shape[0], -1)
    out = np.zeros((coords.shape[0], d_model))
    out[:, :code.shape[1]] = code
    return out[0] if single else out


class PatchEncoder(Module):
    """Two strided conv layers (GELU) flattened, concatenated with the
    32-point real-FFT magnitude, then projected to ``d_model``."""

    def __init__(self, d_model, rng, conv_channels=(16, 16), kernels=(7, 5), dtype=None):
        c1, c2 = conv_channels
        k1, k2 = kernels
        self.conv1 = Conv1d(1, c1, k1, rng, stride=2, padding=k1 // 2, dtype=dtype)
        self.conv2 = Conv1d(c1, c2, k2, rng, stride=2, padding=k2 // 2, dtype=dtype)
        self.conv_len = self.conv2.out_length(self.conv1.out_length(PATCH_LEN))
        self.conv_width = c2 * self.conv_len
        self.fft_width = PATCH_LEN // 2 + 1
        self.proj = Linear(self.conv_width + self.fft_width, d_model, rng, dtype=dtype)

    def branches(self, patches):
        if patches.shape[-1] != PATCH_LEN:
            raise DimensionError(f"patch length must be {PATCH_LEN}, got {patches.shape[-1]}")
        lead = patches.shape[:-1]
        flat = T.reshape(patches, (-1, 1, PATCH_LEN))
        h = T.gelu(self.conv1(flat))
        h = T.gelu(self.conv2(h))
        conv = T.reshape(h, lead + (self.conv_width,))
        spec = T.rfft_mag(patches)
        return conv, spec

    def forward(self, patches):
        conv, spec = self.branches(patches)
        return self.proj(T.concat([conv, spec], axis=-1))


def encode_patch(patch, encoder):
    """Feature vector ``[D]`` of one patch ``[32]`` (leading axes are passed through)."""
    patch = patch if isinstance(patch, Tensor) else Tensor(np.asarray(patch, dtype=encoder.proj.weight.dtype))
    if patch.ndim == 1:
        return T.reshape(encoder(T.reshape(patch, (1, -1))), (-1,))
    return encoder(patch)


@dataclasses.dataclass
class PatchToken:
    vector: Tensor
    channel_index: int
    patch_index: int
    modality: str


def compose_token(patch, coords, modality, encoder, sensor_table, channel_index=0, patch_index=0):
    """Token = patch features + positional code + sensor-type row."""
    feat = encode_patch(patch, encoder)
    d = feat.shape[-1]
    pos = Tensor(positional_encoding(coords, d).astype(feat.dtype))
    sensor = sensor_table.embeddings[modality_index(modality)]
    return PatchToken(feat + pos + sensor, channel_index, patch_index, modality.upper())


def channel_codes(meta, d_model, dtype):
    """Positional codes ``[C, D]`` for channel metadata; PPG channels get the neutral code."""
    coords = np.stack([
        np.zeros(3) if m.modality == "PPG" else np.asarray(m.coords, dtype=np.float64)
        for m in meta
    ])
    return positional_encoding(coords, d_model).astype(dtype)


class PatchEmbedding(Module):
    """Maps ``[B, C, P, 32]`` patches to ``[B, C, P, D]`` tokens.

    Masked cells have their patch features replaced by a learned mask token
    before the positional and sensor-type terms are added.
    """

    def __init__(self, d_model, rng, conv_channels=(16, 16), dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.d_model = d_model
        self.encoder = PatchEncoder(d_model, rng, conv_channels, dtype=dtype)
        self.sensor = SensorTypeTable(d_model, rng, dtype=dtype)
        self.mask_token = Parameter((0.02 * rng.standard_normal(d_model)).astype(dtype))

    def forward(self, values, meta, mask=None):
        values = values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=self.mask_token.dtype))
        if values.ndim == 3:
            values = T.reshape(values, (1,) + values.shape)
        if values.shape[1] != len(meta):
            raise DimensionError(f"{values.shape[1]} channels but {len(meta)} metadata entries")
        feat = self.encoder(values)  # [B, C, P, D]
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), feat.shape[:3])
            feat = T.where(mask[..., None], self.mask_token, feat)
        pos = Tensor(channel_codes(meta, self.d_model, feat.dtype)[:, None, :])
        sensor = T.reshape(self.sensor.lookup([m.modality for m in meta]), (len(meta), 1, self.d_model))
        return feat + pos + sensor
