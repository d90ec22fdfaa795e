"""Forest stand delineation from airborne point clouds.

Rasterizes ALS/photogrammetric point clouds into canopy height, terrain and
spectral layers, stacks them into model inputs, trains a small convolutional
segmentation network on reference stand maps, and turns predicted class masks
back into stand polygons.
"""

__version__ = "0.1.0"

from .errors import (
    AlignmentError,
    DataError,
    FormatError,
    GeometryError,
    ParseError,
    ShapeError,
    StandSegError,
    TrainingError,
    UndefinedMetricError,
)

__all__ = [
    "__version__",
    "AlignmentError",
    "DataError",
    "FormatError",
    "GeometryError",
    "ParseError",
    "ShapeError",
    "StandSegError",
    "TrainingError",
    "UndefinedMetricError",
]
