"""Pure-Python/numpy versions of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``BIOUNIFY_PURE_PYTHON=1`` is set. Signatures and results match the
extension to floating-point rounding.
"""

import numpy as np


def sosfilt(sos, x, zi):
    """Run a cascade of biquads (transposed direct form II) over the last axis.

    ``sos`` is ``[n_sections, 6]``, ``x`` is ``[rows, n]`` and ``zi`` is
    ``[rows, n_sections, 2]``. Returns ``(y, zf)``.
    """
    sos = np.asarray(sos, dtype=np.float64)
    y = np.array(x, dtype=np.float64, copy=True)
    zf = np.array(zi, dtype=np.float64, copy=True)
    rows, n = y.shape
    for r in range(rows):
        row = y[r].tolist()
        for s in range(sos.shape[0]):
            b0, b1, b2, _, a1, a2 = sos[s].tolist()
            z0, z1 = zf[r, s].tolist()
            for i in range(n):
                xi = row[i]
                yi = b0 * xi + z0
                z0 = b1 * xi - a1 * yi + z1
                z1 = b2 * xi - a2 * yi
                row[i] = yi
            zf[r, s, 0] = z0
            zf[r, s, 1] = z1
        y[r] = row
    return y, zf


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def rfft(x):
    """Radix-2 DFT of real rows ``x[rows, n]``; returns ``(re, im)`` of the
    first ``n // 2 + 1`` bins."""
    x = np.asarray(x, dtype=np.float64)
    rows, n = x.shape
    re = x[:, _bit_reverse_indices(n)].copy()
    im = np.zeros_like(re)
    size = 2
    while size <= n:
        half = size // 2
        k = np.arange(half)
        wr = np.cos(2.0 * np.pi * k / size)
        wi = -np.sin(2.0 * np.pi * k / size)
        for start in range(0, n, size):
            lo = slice(start, start + half)
            hi = slice(start + half, start + size)
            tr = wr * re[:, hi] - wi * im[:, hi]
            ti = wr * im[:, hi] + wi * re[:, hi]
            ur, ui = re[:, lo].copy(), im[:, lo].copy()
            re[:, lo] = ur + tr
            im[:, lo] = ui + ti
            re[:, hi] = ur - tr
            im[:, hi] = ui - ti
        size *= 2
    m = n // 2 + 1
    return re[:, :m].copy(), im[:, :m].copy()


def fake_quant(x, scale, zero_point, qmin, qmax):
    """Quantize-dequantize rows of ``x[rows, n]`` with per-row scale and
    zero point. Rounds half to even. Returns ``(y, inside)`` where
    ``inside`` flags values within the clip range."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(scale, dtype=np.float64)[:, None]
    zp = np.asarray(zero_point, dtype=np.float64)[:, None]
    u = x / s + zp
    q = np.clip(np.rint(u), qmin, qmax)
    y = (q - zp) * s
    inside = (u >= qmin) & (u <= qmax)
    return y, inside
