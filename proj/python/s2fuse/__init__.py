"""Python bindings for the s2fuse C++ library.

Rasters are float64 numpy arrays shaped (bands, height, width).
"""

from ._s2fuse import *  # noqa: F401,F403
from ._s2fuse import Error, DimensionError, DomainError, ParameterError, DegenerateInputError, IoError  # noqa: F401
