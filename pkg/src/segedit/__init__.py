"""segedit: segmentation-guided, text-driven interactive image editing.

The pipeline splits an image into the region an instruction talks about and
everything else, edits only the first with a trained generator, and
recomposes a seamless result. A session service plus browser mask editor
close the loop when the automatic segmentation needs a human touch.
"""

from .errors import (
    AmbiguityError,
    BackendError,
    EmptyRegionError,
    NoTargetError,
    NumericError,
    PaletteError,
    ParameterError,
    SegEditError,
    SessionNotFoundError,
    ShapeError,
)
from .imagecore import BoundingBox, ImageBuffer, MaskMap, RegionSplit, SegMap

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ImageBuffer",
    "MaskMap",
    "SegMap",
    "RegionSplit",
    "BoundingBox",
    "SegEditError",
    "ShapeError",
    "ParameterError",
    "EmptyRegionError",
    "NoTargetError",
    "AmbiguityError",
    "PaletteError",
    "NumericError",
    "BackendError",
    "SessionNotFoundError",
]
