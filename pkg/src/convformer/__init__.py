"""Convolutional-attention 2D-to-3D human pose lifting toolkit."""

import os as _os
import sys as _sys

__version__ = "0.1.0"

# CONVFORMER_THREADS caps BLAS worker parallelism; it only takes effect if
# numpy has not been imported yet in this process.
_cap = _os.environ.get("CONVFORMER_THREADS")
if _cap and "numpy" not in _sys.modules:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .tensor import ConfigurationError, DimensionError, Tensor  # noqa: E402
from .model import ConvFormerModel, ModelConfig, build_variant, count_params, estimate_flops  # noqa: E402
from .data import DEFAULT_SKELETON, MotionClip, SkeletonMeta, load_clip, save_clip, synth_motion  # noqa: E402
from .trainer import TrainConfig, evaluate, train  # noqa: E402
from .estimator import ConvFormerLifter  # noqa: E402

__all__ = [
    "Tensor",
    "DimensionError",
    "ConfigurationError",
    "ModelConfig",
    "ConvFormerModel",
    "build_variant",
    "count_params",
    "estimate_flops",
    "MotionClip",
    "SkeletonMeta",
    "DEFAULT_SKELETON",
    "synth_motion",
    "load_clip",
    "save_clip",
    "TrainConfig",
    "train",
    "evaluate",
    "ConvFormerLifter",
    "__version__",
]
