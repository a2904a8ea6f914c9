"""Desk-scale dual-path transformer speech separation.

The package stacks a minimal reverse-mode autodiff engine (:mod:`.tensor`),
transformer blocks (:mod:`.transformer`), the encoder/masker/decoder model
(:mod:`.model`), the PIT SI-SNR objective (:mod:`.losses`), a synthetic data
pipeline (:mod:`.data`), the training loop (:mod:`.training`), and a
scikit-learn style facade (:class:`SepFormerSeparator`). ``sepformer --help``
lists the command-line surface.
"""

from .config import ModelConfig, TrainConfig
from .estimator import SepFormerSeparator
from .losses import PitResult, pit_loss, si_snr, si_snr_improvement
from .model import SepFormerModel, load_checkpoint, parameter_count, save_checkpoint
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "SepFormerModel",
    "SepFormerSeparator",
    "Tensor",
    "PitResult",
    "pit_loss",
    "si_snr",
    "si_snr_improvement",
    "parameter_count",
    "save_checkpoint",
    "load_checkpoint",
    "__version__",
]
