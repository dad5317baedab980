"""CPU differentiable Gaussian splatting with two-stage growth and refinement."""

from .splat import GaussianSplat, InvalidParameterError, SplatModel
from .render import Camera, RasterSettings, rasterize, rasterize_backward
from .ply import load_ply, save_ply, read_ply, write_ply

__all__ = [
    "Camera",
    "GaussianSplat",
    "InvalidParameterError",
    "RasterSettings",
    "SplatModel",
    "load_ply",
    "rasterize",
    "rasterize_backward",
    "read_ply",
    "save_ply",
    "write_ply",
]
__version__ = "0.1.0"
