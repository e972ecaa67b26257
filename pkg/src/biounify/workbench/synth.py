"""Synthetic EEG/ECG/PPG surrogates and labeled toy tasks."""

from __future__ import annotations

import numpy as np

from ..patch_embed import STANDARD_LEADS, ecg_lead_coordinates
from ..sigproc import TARGET_FS, Channel, MultimodalRecord, segment_and_patch, zscore_normalize
from ..trainer import Dataset

# Approximate unit-sphere positions of a few 10-20 electrodes (x: right, y: nasion, z: vertex).
EEG_ELECTRODES = {
    "Fp1": (-0.31, 0.95, -0.03), "Fp2": (0.31, 0.95, -0.03),
    "F3": (-0.55, 0.67, 0.50), "F4": (0.55, 0.67, 0.50),
    "C3": (-0.72, 0.0, 0.69), "C4": (0.72, 0.0, 0.69),
    "P3": (-0.55, -0.67, 0.50), "P4": (0.55, -0.67, 0.50),
    "O1": (-0.31, -0.95, -0.03), "O2": (0.31, -0.95, -0.03),
    "Fz": (0.0, 0.72, 0.69), "Cz": (0.0, 0.0, 1.0), "Pz": (0.0, -0.72, 0.69),
}
EEG_ORDER = ("C3", "C4", "O1", "O2", "F3", "F4", "P3", "P4", "Fp1", "Fp2", "Fz", "Cz", "Pz")
ECG_ORDER = ("II",) + tuple(lead for lead in STANDARD_LEADS if lead != "II")


def pink_noise(n, rng):
    """1/f noise via spectral shaping of white noise, unit variance."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    return x / (x.std() + 1e-12)


def eeg_surrogate(n, fs, rng, rhythm_hz=10.0, burst_prob=0.7):
    """Pink background plus bursts of a narrowband rhythm (10 Hz alpha by default)."""
    t = np.arange(n) / fs
    x = pink_noise(n, rng)
    envelope = np.zeros(n)
    seg = int(fs)
    for start in range(0, n, seg):
        if rng.random() < burst_prob:
            w = np.hanning(min(seg, n - start))
            envelope[start:start + len(w)] = w
    phase = rng.uniform(0, 2 * np.pi)
    return x + 2.0 * envelope * np.sin(2 * np.pi * rhythm_hz * t + phase)


def beat_times(n, fs, rate_hz, rng, jitter=0.0):
    period = 1.0 / rate_hz
    t0 = rng.uniform(0, period)
    times = np.arange(t0, n / fs + period, period)
    if jitter:
        times = times + rng.normal(0, jitter * period, size=len(times))
    return times


def ecg_surrogate(n, fs, rng, rate_hz=1.0, jitter=0.0, wander=0.15):
    """Sharp biphasic spikes (QRS surrogate) at ``rate_hz`` plus slow baseline wander."""
    t = np.arange(n) / fs
    x = np.zeros(n)
    sigma = 0.012
    for tk in beat_times(n, fs, rate_hz, rng, jitter):
        d = t - tk
        near = np.abs(d) < 8 * sigma
        x[near] += -(d[near] / sigma) * np.exp(0.5 - 0.5 * (d[near] / sigma) ** 2)
    x += wander * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    return x + 0.02 * rng.standard_normal(n)


def ppg_surrogate(n, fs, rng, rate_hz=1.0, jitter=0.0, width_s=0.6):
    """Raised-cosine pulse per beat."""
    t = np.arange(n) / fs
    x = np.zeros(n)
    for tk in beat_times(n, fs, rate_hz, rng, jitter):
        d = t - tk
        inside = (d >= 0) & (d < width_s)
        x[inside] += 0.5 * (1.0 - np.cos(2 * np.pi * d[inside] / width_s))
    return x + 0.02 * rng.standard_normal(n)


def _channels_for(modality, count, seed_rng, n, fs, params):
    modality = modality.upper()
    chans = []
    for i in range(count):
        rng = np.random.default_rng(seed_rng.integers(2 ** 63))
        if modality == "EEG":
            label = EEG_ORDER[i % len(EEG_ORDER)]
            coords = np.array(EEG_ELECTRODES[label])
            x = eeg_surrogate(n, fs, rng, params.get("rhythm_hz", 10.0), params.get("burst_prob", 0.7))
        elif modality == "ECG":
            label = ECG_ORDER[i % len(ECG_ORDER)]
            coords = ecg_lead_coordinates(label)
            x = ecg_surrogate(n, fs, rng, params.get("rate_hz", 1.0), params.get("jitter", 0.0))
        elif modality == "PPG":
            label = f"PPG{i}"
            coords = np.zeros(3)
            x = ppg_surrogate(n, fs, rng, params.get("rate_hz", 1.0), params.get("jitter", 0.0))
        else:
            raise ValueError(f"unknown modality {modality!r}")
        noise = params.get("noise", 0.0)
        if noise:
            x = x + noise * x.std() * rng.standard_normal(n)
        chans.append(Channel(modality, label, coords, x))
    return chans


def generate_synthetic(modality, seconds, fs=TARGET_FS, seed=0, channels=1, **params):
    """Deterministic surrogate record for one modality."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * fs))
    rng = np.random.default_rng(seed)
    return MultimodalRecord(_channels_for(modality, channels, rng, n, fs, params), fs).validate()


def generate_multimodal(layout, seconds, fs=TARGET_FS, seed=0, **params):
    """Record with several modalities, e.g. ``layout={"EEG": 2, "ECG": 1, "PPG": 1}``."""
    n = int(round(seconds * fs))
    rng = np.random.default_rng(seed)
    chans = []
    for modality, count in layout.items():
        chans += _channels_for(modality, count, rng, n, fs, params)
    return MultimodalRecord(chans, fs).validate()


def task_class_params(k, num_classes):
    """Class ``k`` sets the EEG rhythm frequency and the cardiac rate."""
    frac = k / max(1, num_classes - 1)
    return {"rhythm_hz": 4.0 + 14.0 * frac, "rate_hz": 0.9 + 1.2 * frac}


def make_task(n, num_classes=2, layout=None, window_s=2.0, seed=0, noise=0.5, jitter=0.05):
    """Labeled windows where each class has its own EEG rhythm and heart rate.

    Returns a :class:`~biounify.trainer.Dataset` of z-scored ``[N, C, P, 32]`` windows.
    """
    layout = layout or {"EEG": 2, "ECG": 1, "PPG": 1}
    rng = np.random.default_rng(seed)
    labels = rng.integers(num_classes, size=n)
    values, meta = [], None
    for i, k in enumerate(labels):
        params = task_class_params(int(k), num_classes)
        params["rhythm_hz"] *= 1.0 + rng.uniform(-0.08, 0.08)
        params["rate_hz"] *= 1.0 + rng.uniform(-0.08, 0.08)
        rec = generate_multimodal(layout, window_s, seed=rng.integers(2 ** 63), noise=noise,
                                  jitter=jitter, **params)
        rec = rec.with_data(zscore_normalize(rec.data))
        grid = segment_and_patch(rec, window_s)[0]
        values.append(grid.values)
        meta = grid.meta
    return Dataset(np.stack(values).astype(np.float32), labels, meta)


def make_pretrain_set(n, layout=None, window_s=2.0, seed=0):
    """Unlabeled z-scored windows for masked-reconstruction pretraining."""
    layout = layout or {"EEG": 2, "ECG": 1, "PPG": 1}
    rng = np.random.default_rng(seed)
    values, meta = [], None
    for _ in range(n):
        params = task_class_params(int(rng.integers(5)), 5)
        rec = generate_multimodal(layout, window_s, seed=rng.integers(2 ** 63), noise=0.1, **params)
        rec = rec.with_data(zscore_normalize(rec.data))
        grid = segment_and_patch(rec, window_s)[0]
        values.append(grid.values)
        meta = grid.meta
    return Dataset(np.stack(values).astype(np.float32), None, meta)
