"""Streaming free-viewpoint video from multi-view image sequences.

A scene is represented as a cloud of anisotropic 3D Gaussians. Frame-to-frame
motion is modeled by a compact neural transformation cache (multi-resolution
hash grid + small MLP) that outputs a translation and a rotation for every
Gaussian, and newly appearing content is handled by spawning frame-specific
Gaussians where image gradients concentrate. Each frame therefore compresses
to the cache weights plus the spawned Gaussians, which is what the stream
container stores.
"""

from .errors import DataError, FormatError, NumericalError, SplatstreamError

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "FormatError",
    "NumericalError",
    "SplatstreamError",
    "__version__",
]
