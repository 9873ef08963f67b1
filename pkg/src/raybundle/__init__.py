"""Cameras as bundles of Plücker rays.

Exact camera/ray conversions, least-squares camera recovery, a ray
diffusion process with a toy transformer denoiser, and pose metrics.
"""

from .errors import NumericalError, RayBundleError, ValidationError
from .rays import PinholeCamera, PixelGrid, Ray, RayBundle, camera_to_rays, cameras_to_rays, pixel_grid
from .solvers import recover_camera, solve_camera_center, solve_dlt_homography

__version__ = "0.1.0"

__all__ = [
    "NumericalError",
    "PinholeCamera",
    "PixelGrid",
    "Ray",
    "RayBundle",
    "RayBundleError",
    "ValidationError",
    "camera_to_rays",
    "cameras_to_rays",
    "pixel_grid",
    "recover_camera",
    "solve_camera_center",
    "solve_dlt_homography",
]
