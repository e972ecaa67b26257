"""Shared-encoder model for multichannel EEG, ECG and PPG windows.

Patches from any mix of channels are embedded, pooled per patch by a fixed
set of learned queries, and passed through a rotary-position transformer.
The package carries its own small autodiff engine, signal conditioning,
fake quantization and training loops.
"""

from .kernels import BACKEND
from .model import BiosignalModel, EncoderConfig, tiny_config
from .quant import QuantSpec, apply_ptq, calibrate, qat_finetune, qdq
from .trainer import Dataset, TrainConfig, finetune, pretrain

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BiosignalModel", "Dataset", "EncoderConfig", "QuantSpec", "TrainConfig",
    "apply_ptq", "calibrate", "finetune", "pretrain", "qat_finetune", "qdq", "tiny_config",
]
