"""Zero-shot bias-field correction for 3D volumes.

A tiny depthwise-separable CNN is optimized from scratch on each input
volume; its per-voxel alpha map drives an iterative quadratic intensity
curve, while a second head predicts a multiplicative bias map that must
reproduce the observation.
"""
from .config import CorrectionConfig
from .correction import CorrectionResult, correct_volume, normalize
from .evaluation import coefficient_of_variation, evaluate_correction
from .homogeneity import hc_iterate, hc_step
from .losses import LossBreakdown, LossWeights
from .volume_io import LabelMask, Volume, read_mask, read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "CorrectionConfig",
    "CorrectionResult",
    "LabelMask",
    "LossBreakdown",
    "LossWeights",
    "Volume",
    "coefficient_of_variation",
    "correct_volume",
    "evaluate_correction",
    "hc_iterate",
    "hc_step",
    "normalize",
    "read_mask",
    "read_volume",
    "write_volume",
]
