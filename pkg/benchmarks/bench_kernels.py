"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time of each backend,
the speed-up, and the largest absolute difference between their outputs.
"""

import argparse
import timeit

import numpy as np

from biounify import _pykernels
from biounify.sigproc import butter_bandpass_sos

try:
    from biounify import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    sos = butter_bandpass_sos(4, 0.5, 40.0, 256.0)
    sig = rng.standard_normal((12, 2560))  # 12 leads, 10 s at 256 Hz
    zi = np.zeros((12, sos.shape[0], 2))
    patches = rng.standard_normal((12 * 80, 32))  # one window of patches
    w = rng.standard_normal((256, 256))
    scale = np.abs(w).max(axis=1) / 127
    return {
        "sosfilt 12x2560, 4 sections": (lambda m: m.sosfilt(sos, sig, zi)[0]),
        "rfft 960x32": (lambda m: np.hypot(*m.rfft(patches))),
        "fake_quant 256x256 int8": (lambda m: m.fake_quant(w, scale, np.zeros(256), -127, 127)[0]),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install --no-build-isolation -e .` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, fn in cases(rng).items():
        times = {}
        for label, mod in (("python", _pykernels), ("cython", _ckernels)):
            t = timeit.Timer(lambda: fn(mod))
            n, _ = t.autorange()
            times[label] = min(t.repeat(args.repeat, n)) / n * 1e3
        diff = np.abs(np.asarray(fn(_pykernels)) - np.asarray(fn(_ckernels))).max()
        print(f"{name:32s} {times['python']:10.3f} {times['cython']:10.3f} "
              f"{times['python'] / times['cython']:8.1f}x {diff:11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
