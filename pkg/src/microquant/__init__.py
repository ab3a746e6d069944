"""Quantification of segmented microstructure images."""
from .errors import DataError, MicroquantError
from .raster import CLASS_NAMES, ClassId, LabelMap, ScoreStack

__version__ = "0.1.0"
