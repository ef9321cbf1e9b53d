"""Guided denoising diffusion for trajectory and pose sequences.

The package trains small 1-D UNet denoisers on synthetic motion data and
steers generation at sampling time with imputation, dense classifier
guidance, and emphasis projection. See README.md for a tour.
"""

__version__ = "0.1.0"

from .errors import (
    ConstructionFailure,
    InvalidArgument,
    InvalidState,
    NumericFailure,
    TraildiffError,
)
from .schedule import NoiseSchedule, build_schedule
from .seq import MotionSeq, TrajSeq

__all__ = [
    "TraildiffError",
    "InvalidArgument",
    "InvalidState",
    "NumericFailure",
    "ConstructionFailure",
    "NoiseSchedule",
    "build_schedule",
    "MotionSeq",
    "TrajSeq",
    "__version__",
]
