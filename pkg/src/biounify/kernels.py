"""Kernel backend selection.

The compiled extension is preferred; set ``BIOUNIFY_PURE_PYTHON=1`` to force
the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
sosfilt = _pykernels.sosfilt
rfft = _pykernels.rfft
fake_quant = _pykernels.fake_quant

if os.environ.get("BIOUNIFY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        sosfilt = _ckernels.sosfilt
        rfft = _ckernels.rfft
        fake_quant = _ckernels.fake_quant

__all__ = ["BACKEND", "sosfilt", "rfft", "fake_quant"]
