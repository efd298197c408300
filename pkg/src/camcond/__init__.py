"""Camera condition monitoring toolkit.

Synthesizes optical blur and sensor noise on grayscale images, estimates both
blindly from single frames, relates the estimates to object-detection
performance, and derives exposure-time / gain corrections from that relation.
"""

from camcond.image import GrayImage, Patch, clamp_quantize, load_gray, save_gray, tile_patches

__version__ = "0.1.0"

__all__ = [
    "GrayImage",
    "Patch",
    "clamp_quantize",
    "load_gray",
    "save_gray",
    "tile_patches",
    "__version__",
]
