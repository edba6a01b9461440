"""Warped-grid wave-packet toolkit: directional tilings, ray-traced canonical
transformations, operator application by grid resampling, transport metrics,
and the wave-equation oracles used to verify them."""

__version__ = "0.1.0"

from .field import Field2D, PixelGrid, Spectrum2D, canonical_grid, fft2, ifft2

__all__ = [
    "Field2D",
    "Spectrum2D",
    "PixelGrid",
    "canonical_grid",
    "fft2",
    "ifft2",
    "__version__",
]
