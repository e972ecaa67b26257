"""Independent reference implementations used by the tests.

Nothing here imports the package's own numerics: finite differences,
the O(N^2) DFT, analog transfer functions and enumeration-based metrics
are written from their definitions.
"""

import itertools
import math

import numpy as np

FD_STEP = 1e-5
FD_TOL = 1e-4


def numeric_grad(f, x, eps=FD_STEP):
    """Central differences of scalar ``f`` w.r.t. the float64 array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a, b, floor=1e-5):
    """``||a - b|| / max(||a||, ||b||, floor)``.

    Central differences at step 1e-5 carry roundoff near 1e-10 per entry, so
    a gradient that is exactly zero (e.g. a key bias under softmax shift
    invariance) would otherwise compare noise against noise.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def naive_dft(x):
    """``X_k = sum_n x_n exp(-2 pi i k n / N)`` by explicit double loop, k = 0..N/2."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    out = np.zeros(n // 2 + 1, dtype=np.complex128)
    for k in range(n // 2 + 1):
        acc = 0j
        for t in range(n):
            acc += x[t] * complex(math.cos(2 * math.pi * k * t / n), -math.sin(2 * math.pi * k * t / n))
        out[k] = acc
    return out


def butterworth_bandpass_gain(f, order, low, high, fs):
    """|H(f)| of a Butterworth bandpass from the analog prototype at pre-warped frequencies.

    ``|H_a(jW)|^2 = 1 / (1 + ((W^2 - W0^2) / (B W))^(2N))``.
    """
    warp = lambda v: 2 * fs * math.tan(math.pi * v / fs)  # noqa: E731
    w = warp(f)
    wl, wh = warp(low), warp(high)
    w0sq, bw = wl * wh, wh - wl
    ratio = (w * w - w0sq) / (bw * w)
    return 1.0 / math.sqrt(1.0 + ratio ** (2 * order))


def notch_gain(f, f0, q, fs):
    """|H(f)| of the second-order notch via its analog prototype.

    Analog notch ``(s^2 + W0^2) / (s^2 + B s + W0^2)`` with
    ``W = tan(pi f / fs)``; the bandwidth ``f0 / q`` is mapped through the
    same tangent warp.
    """
    w = math.tan(math.pi * f / fs)
    w0 = math.tan(math.pi * f0 / fs)
    b = math.tan(math.pi * f0 / (q * fs)) * (1 + w0 * w0)
    num = abs(w0 * w0 - w * w)
    return num / math.sqrt((w0 * w0 - w * w) ** 2 + (b * w) ** 2)


def sine_amplitude(y, f, fs):
    """Least-squares amplitude of a sinusoid at ``f`` in ``y``."""
    t = np.arange(len(y)) / fs
    basis = np.stack([np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t), np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return float(math.hypot(coef[0], coef[1]))


# -- metrics by enumeration --------------------------------------------------

def brute_confusion(labels, preds, k):
    cm = [[0] * k for _ in range(k)]
    for t, p in zip(labels, preds):
        cm[t][p] += 1
    return cm


def brute_balanced_accuracy(labels, preds, k):
    recalls = []
    for c in range(k):
        idx = [i for i, t in enumerate(labels) if t == c]
        if idx:
            recalls.append(sum(preds[i] == c for i in idx) / len(idx))
    return sum(recalls) / len(recalls)


def brute_kappa(labels, preds, k):
    n = len(labels)
    po = sum(t == p for t, p in zip(labels, preds)) / n
    pe = sum((sum(t == c for t in labels) / n) * (sum(p == c for p in preds) / n) for c in range(k))
    return (po - pe) / (1 - pe)


def brute_weighted_f1(labels, preds, k):
    n = len(labels)
    total = 0.0
    for c in range(k):
        tp = sum(t == c and p == c for t, p in zip(labels, preds))
        fp = sum(t != c and p == c for t, p in zip(labels, preds))
        fn = sum(t == c and p != c for t, p in zip(labels, preds))
        support = tp + fn
        f1 = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        total += f1 * support / n
    return total


def brute_auroc(y, scores):
    """Fraction of (positive, negative) pairs ranked correctly; ties count 1/2."""
    pos = [s for s, t in zip(scores, y) if t]
    neg = [s for s, t in zip(scores, y) if not t]
    wins = 0.0
    for a, b in itertools.product(pos, neg):
        wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))
