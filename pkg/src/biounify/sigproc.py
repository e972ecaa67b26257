"""Signal conditioning: bandpass, notch, resample, z-score, windowing and patching."""

from __future__ import annotations

import dataclasses
import math
import warnings
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from . import kernels
from .errors import InvalidSpecError, InvalidWindowError

MODALITIES = ("EEG", "ECG", "PPG")
TARGET_FS = 256.0
PATCH_LEN = 32
ZSCORE_EPS = 1e-8
NOTCH_Q = 30.0

# Passbands per modality, Hz.
MODALITY_BANDS = {
    "EEG": (0.1, 75.0),
    "ECG": (0.5, 120.0),
    "PPG": (0.5, 8.0),
}


@dataclasses.dataclass
class FilterSpec:
    kind: str
    sample_rate_hz: float
    order: int = 4
    low_hz: float = 0.0
    high_hz: float = 0.0
    notch_hz: float = 0.0
    q: float = NOTCH_Q

    def validate(self):
        nyq = self.sample_rate_hz / 2.0
        if self.sample_rate_hz <= 0:
            raise InvalidSpecError("sample rate must be positive")
        if self.kind == "bandpass":
            if self.order < 1:
                raise InvalidSpecError("filter order must be >= 1")
            if not 0.0 < self.low_hz < self.high_hz < nyq:
                raise InvalidSpecError(
                    f"need 0 < low < high < Nyquist, got {self.low_hz}, {self.high_hz}, nyquist {nyq}"
                )
        elif self.kind == "notch":
            if not 0.0 < self.notch_hz < nyq:
                raise InvalidSpecError(f"notch {self.notch_hz} Hz not below Nyquist {nyq} Hz")
            if self.q <= 0:
                raise InvalidSpecError("notch Q must be positive")
        else:
            raise InvalidSpecError(f"unknown filter kind {self.kind!r}")
        return self

    @classmethod
    def for_modality(cls, modality, sample_rate_hz, clamp=True):
        low, high = MODALITY_BANDS[modality]
        nyq = sample_rate_hz / 2.0
        if high >= nyq:
            if not clamp:
                raise InvalidSpecError(f"{modality} high cutoff {high} Hz >= Nyquist {nyq} Hz")
            warnings.warn(
                f"{modality} high cutoff {high} Hz >= Nyquist {nyq} Hz; clamped to {0.99 * nyq:.3f} Hz",
                stacklevel=2,
            )
            high = 0.99 * nyq
        return cls("bandpass", sample_rate_hz, low_hz=low, high_hz=high).validate()


@dataclasses.dataclass
class Channel:
    modality: str
    label: str
    coords: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        self.modality = self.modality.upper()
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(3)
        self.samples = np.asarray(self.samples)


@dataclasses.dataclass
class MultimodalRecord:
    channels: list
    sample_rate_hz: float

    def validate(self):
        if not self.channels:
            raise ValueError("record has no channels")
        n = len(self.channels[0].samples)
        for ch in self.channels:
            if ch.modality not in MODALITIES:
                raise ValueError(f"unknown modality {ch.modality!r}")
            if len(ch.samples) != n:
                raise ValueError("channels differ in length")
            if ch.modality == "EEG" and np.any(np.abs(ch.coords) > 1.0):
                raise ValueError(f"EEG channel {ch.label} coordinates outside unit cube")
            if ch.modality == "PPG" and np.any(ch.coords != 0):
                raise ValueError(f"PPG channel {ch.label} must sit at the neutral coordinate")
        return self

    @property
    def n_samples(self):
        return len(self.channels[0].samples)

    @property
    def data(self):
        return np.stack([ch.samples for ch in self.channels])

    @property
    def modalities(self):
        return [ch.modality for ch in self.channels]

    def subset(self, modalities):
        keep = [ch for ch in self.channels if ch.modality in modalities]
        return MultimodalRecord(keep, self.sample_rate_hz)

    def with_data(self, data, sample_rate_hz=None):
        chans = [
            Channel(ch.modality, ch.label, ch.coords, row)
            for ch, row in zip(self.channels, np.asarray(data))
        ]
        return MultimodalRecord(chans, sample_rate_hz or self.sample_rate_hz)


@dataclasses.dataclass
class ChannelMeta:
    modality: str
    label: str
    coords: np.ndarray


@dataclasses.dataclass
class PatchGrid:
    """One window cut into ``[C, P, 32]`` patches, plus per-channel metadata."""

    values: np.ndarray
    meta: list
    window_s: float
    fs: float = TARGET_FS

    @property
    def n_channels(self):
        return self.values.shape[0]

    @property
    def n_patches(self):
        return self.values.shape[1]

    def signal(self):
        """Concatenate patches back into the ``[C, P * 32]`` window."""
        return self.values.reshape(self.values.shape[0], -1)


# -- filter design ---------------------------------------------------------

def butter_bandpass_sos(order, low_hz, high_hz, fs):
    """Butterworth bandpass as second-order sections.

    Analog lowpass prototype of the given order, lowpass-to-bandpass
    transform at pre-warped edges, then bilinear transform. The resulting
    digital filter has ``2 * order`` poles.
    """
    fs2 = 2.0 * fs
    wl = fs2 * math.tan(math.pi * low_hz / fs)
    wh = fs2 * math.tan(math.pi * high_hz / fs)
    bw, w0 = wh - wl, math.sqrt(wl * wh)

    k = np.arange(order)
    proto = np.exp(1j * math.pi * (2 * k + order + 1) / (2 * order))
    half = proto * bw / 2.0
    root = np.sqrt(half * half - w0 * w0)
    poles_a = np.concatenate([half + root, half - root])
    gain_a = bw ** order

    # Analog zeros: `order` at the origin -> z = +1; the remaining `order` go to z = -1.
    poles_d = (fs2 + poles_a) / (fs2 - poles_a)
    gain_d = gain_a * np.real(fs2 ** order / np.prod(fs2 - poles_a))

    upper = poles_d[poles_d.imag > 0]
    if len(upper) != order:
        raise InvalidSpecError("bandpass poles did not form conjugate pairs")
    upper = upper[np.argsort(np.abs(upper))]
    sos = np.zeros((order, 6))
    for i, p in enumerate(upper):
        sos[i, :3] = [1.0, 0.0, -1.0]  # (1 - z^-1)(1 + z^-1)
        sos[i, 3:] = [1.0, -2.0 * p.real, abs(p) ** 2]
    sos[0, :3] *= gain_d
    return sos


def notch_sos(notch_hz, fs, q=NOTCH_Q):
    """Second-order IIR notch (bilinear transform of the analog notch)."""
    w0 = 2.0 * notch_hz / fs
    bw = w0 / q
    beta = math.tan(math.pi * bw / 2.0)
    gain = 1.0 / (1.0 + beta)
    c = math.cos(math.pi * w0)
    return np.array([[gain, -2.0 * gain * c, gain, 1.0, -2.0 * gain * c, 2.0 * gain - 1.0]])


def sos_freq_response(sos, freqs_hz, fs):
    """Complex response of the digital cascade at the given frequencies."""
    z = np.exp(-1j * 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / fs)
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 * z + b2 * z * z) / (a0 + a1 * z + a2 * z * z)
    return h


# -- filtering -------------------------------------------------------------

def _lfilter_zi(b, a):
    n = max(len(a), len(b))
    companion = np.zeros((n - 1, n - 1))
    companion[0, :] = -a[1:] / a[0]
    companion[1:, :-1] = np.eye(n - 2)
    i_minus_a = np.eye(n - 1) - companion.T
    rhs = b[1:] - a[1:] * b[0]
    return np.linalg.solve(i_minus_a, rhs)


def sosfilt_zi(sos):
    """Initial section states giving a step-response steady state."""
    zi = np.empty((sos.shape[0], 2))
    scale = 1.0
    for s, row in enumerate(sos):
        b, a = row[:3], row[3:]
        zi[s] = scale * _lfilter_zi(b, a)
        scale *= b.sum() / a.sum()
    return zi


def sosfilt(sos, x, zi=None):
    """Causal cascade filter along the last axis of a 1-D or 2-D array."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    if zi is None:
        zi = np.zeros((flat.shape[0], sos.shape[0], 2))
    y, zf = kernels.sosfilt(sos, flat, zi)
    return y.reshape(x.shape), zf


def sosfiltfilt(sos, x):
    """Zero-phase forward-backward filtering with odd-extension padding."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    n = flat.shape[-1]
    ntaps = 2 * sos.shape[0] + 1
    ntaps -= min(int((sos[:, 2] == 0).sum()), int((sos[:, 5] == 0).sum()))
    padlen = min(3 * ntaps, n - 1)
    if padlen > 0:
        left = 2 * flat[:, :1] - flat[:, padlen:0:-1]
        right = 2 * flat[:, -1:] - flat[:, -2:-(padlen + 2):-1]
        ext = np.concatenate([left, flat, right], axis=1)
    else:
        ext = flat
    zi = sosfilt_zi(sos)
    y, _ = kernels.sosfilt(sos, ext, zi[None] * ext[:, :1, None])
    y = y[:, ::-1]
    y, _ = kernels.sosfilt(sos, y, zi[None] * y[:, :1, None])
    y = y[:, ::-1]
    if padlen > 0:
        y = y[:, padlen:-padlen]
    return np.ascontiguousarray(y).reshape(x.shape)


def bandpass_filter(x, spec):
    """Zero-phase Butterworth bandpass per ``spec``; output length equals input length."""
    spec.validate()
    if spec.kind != "bandpass":
        raise InvalidSpecError("bandpass_filter needs a bandpass spec")
    sos = butter_bandpass_sos(spec.order, spec.low_hz, spec.high_hz, spec.sample_rate_hz)
    return sosfiltfilt(sos, x)


def notch_filter(x, notch_hz, fs, q=NOTCH_Q):
    FilterSpec("notch", fs, notch_hz=notch_hz, q=q).validate()
    return sosfiltfilt(notch_sos(notch_hz, fs, q), x)


def resample(x, from_hz, to_hz=TARGET_FS):
    """Polyphase rational resampling along the last axis.

    Output length is ``round(len * to_hz / from_hz)``.
    """
    if from_hz <= 0 or to_hz <= 0:
        raise ValueError("sample rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    n_out = int(math.floor(n * to_hz / from_hz + 0.5))
    if from_hz == to_hz:
        return x.copy()
    ratio = Fraction(str(to_hz)) / Fraction(str(from_hz))
    y = resample_poly(x, ratio.numerator, ratio.denominator, axis=-1)
    if y.shape[-1] >= n_out:
        return np.ascontiguousarray(y[..., :n_out])
    pad = [(0, 0)] * (y.ndim - 1) + [(0, n_out - y.shape[-1])]
    return np.pad(y, pad, mode="edge")


def zscore_normalize(x):
    """Per-channel ``(x - mean) / (std + 1e-8)`` with population std, over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    out = (x - mu) / (sd + ZSCORE_EPS)
    # the float mean of a flat channel can miss its value by an ulp
    flat = np.ptp(x, axis=-1, keepdims=True) == 0
    return np.where(flat, 0.0, out)


def preprocess_record(rec, notch_hz=50.0, target_fs=TARGET_FS, clamp=True):
    """Bandpass per modality, notch, resample to ``target_fs`` and z-score each channel."""
    rec.validate()
    fs = rec.sample_rate_hz
    out = []
    for ch in rec.channels:
        x = np.asarray(ch.samples, dtype=np.float64)
        x = bandpass_filter(x, FilterSpec.for_modality(ch.modality, fs, clamp=clamp))
        if notch_hz:
            x = notch_filter(x, notch_hz, fs)
        x = resample(x, fs, target_fs)
        out.append(zscore_normalize(x))
    return rec.with_data(np.stack(out), target_fs)


def segment_and_patch(rec, window_s=5.0, patch_len=PATCH_LEN):
    """Cut a conditioned record into non-overlapping windows of ``[C, P, patch_len]`` patches.

    The trailing partial window is dropped.
    """
    fs = rec.sample_rate_hz
    win = int(round(window_s * fs))
    if win < patch_len:
        raise InvalidWindowError(f"window of {win} samples is shorter than one patch")
    if win % patch_len:
        raise InvalidWindowError(f"window of {win} samples is not a whole number of {patch_len}-sample patches")
    data = rec.data
    meta = [ChannelMeta(ch.modality, ch.label, ch.coords.copy()) for ch in rec.channels]
    grids = []
    for w in range(data.shape[1] // win):
        seg = data[:, w * win:(w + 1) * win]
        values = np.ascontiguousarray(seg.reshape(data.shape[0], win // patch_len, patch_len))
        grids.append(PatchGrid(values, meta, window_s, fs))
    return grids
