"""Scribble-supervised semantic occupancy at desk scale.

Label construction from point clouds, the loss and distillation stack, a
two-stage labeler/student pipeline on synthetic scenes, and range-partitioned
evaluation.
"""

__version__ = "0.1.0"

from .grid import EMPTY, UNLABELED, GridSpec, LabelGrid, RangePartition  # noqa: E402
from .io import FormatError  # noqa: E402
from ._kernels import backend  # noqa: E402

__all__ = ["EMPTY", "UNLABELED", "GridSpec", "LabelGrid", "RangePartition", "FormatError", "backend", "__version__"]
