"""Plücker rays, pixel grids and the camera -> ray bundle conversion.

Conventions: normalized device coordinates (NDC) span [-1, 1] with +x right
and +y down, the camera looks down +z, and pixels are lifted to homogeneous
coordinates ``(x, y, 1)`` before applying ``K^-1``.  Rotations map world to
camera, so the camera center is ``c = -R^T t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidCamera, InvalidCrop, ShapeMismatch, SingularIntrinsics, ZeroDirection

_EPS_DIR = 1e-12
FULL_CROP = (0.0, 0.0, 1.0)


class Ray(NamedTuple):
    """A valid Plücker line with unit direction and ``moment = p x direction``."""

    direction: np.ndarray
    moment: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.direction, self.moment])


def as_vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ShapeMismatch(f"expected a 3-vector, got shape {np.shape(v)}")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch("vector has non-finite components")
    return arr


def make_ray(point, direction) -> Ray:
    """Build the Plücker ray through ``point`` travelling along ``direction``.

    The direction is normalized, so ``|moment|`` is the distance from the
    origin to the line and the moment does not depend on which point of the
    line is supplied.
    """
    p = as_vec3(point)
    d = as_vec3(direction)
    norm = np.linalg.norm(d)
    if norm <= _EPS_DIR:
        raise ZeroDirection(f"direction norm {norm:g} is too small")
    d = d / norm
    return Ray(d, np.cross(p, d))


def moment_residual(ray) -> float:
    """Plücker constraint violation ``|m . d| / |d|`` of a raw 6-vector."""
    r = np.asarray(ray, dtype=np.float64).reshape(6)
    d, m = r[:3], r[3:]
    norm = np.linalg.norm(d)
    if norm <= _EPS_DIR:
        raise ZeroDirection(f"direction norm {norm:g} is too small")
    return float(abs(np.dot(m, d)) / norm)


@dataclass(frozen=True)
class PixelGrid:
    """Patch-center pixel coordinates of a ``p x p`` grid, row-major.

    ``coords[i * p + j]`` is the center of the patch in row ``i`` (y) and
    column ``j`` (x), expressed in NDC of the uncropped image.
    """

    p: int
    coords: np.ndarray
    crop: tuple[float, float, float] = FULL_CROP

    @property
    def m(self) -> int:
        return self.p * self.p

    def homogeneous(self) -> np.ndarray:
        return np.concatenate([self.coords, np.ones((len(self.coords), 1))], axis=1)


def pixel_grid(p: int, crop=FULL_CROP) -> PixelGrid:
    """Uniform ``p x p`` grid of patch centers covering ``crop``.

    Args:
        p: grid side, so the grid holds ``p**2`` coordinates.
        crop: ``(center_x, center_y, half_extent)`` in NDC of the full image.
            ``(0, 0, 1)`` is the whole image.
    """
    if int(p) != p or p < 1:
        raise InvalidCrop(f"grid side must be a positive integer, got {p!r}")
    p = int(p)
    cx, cy, half = (float(c) for c in crop)
    if not half > 0:
        raise InvalidCrop(f"crop half extent must be positive, got {half}")
    ticks = (2.0 * np.arange(p) + 1.0) / p - 1.0
    xs = cx + half * ticks
    ys = cy + half * ticks
    gx, gy = np.meshgrid(xs, ys)
    coords = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return PixelGrid(p, coords, (cx, cy, half))


@dataclass(frozen=True)
class PinholeCamera:
    """World-to-camera rotation and translation plus intrinsics ``K``."""

    rotation: np.ndarray
    translation: np.ndarray
    intrinsics: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        K = np.array(self.intrinsics, dtype=np.float64).reshape(3, 3)
        for name, a in (("rotation", R), ("translation", t), ("intrinsics", K)):
            if not np.all(np.isfinite(a)):
                raise InvalidCamera(f"{name} has non-finite entries")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "intrinsics", K)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """World-frame viewing direction (camera +z)."""
        return self.rotation[2].copy()

    def validate(self, tol: float = 1e-9) -> "PinholeCamera":
        R, K = self.rotation, self.intrinsics
        if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
            raise InvalidCamera("rotation is not in SO(3)")
        if np.any(K[np.tril_indices(3, -1)] != 0.0):
            raise InvalidCamera("intrinsics must be upper triangular")
        if np.any(np.diag(K) <= 0) or abs(K[2, 2] - 1.0) > tol:
            raise InvalidCamera("intrinsics need a positive diagonal with K[2,2] = 1")
        return self

    @classmethod
    def from_center(cls, rotation, center, intrinsics=None) -> "PinholeCamera":
        R = np.asarray(rotation, dtype=np.float64)
        K = np.eye(3) if intrinsics is None else intrinsics
        return cls(R, -R @ as_vec3(center), K)


@dataclass(frozen=True)
class RayBundle:
    """``grid.m`` raw 6-D rays ``(d, m)`` aligned with ``grid.coords``."""

    grid: PixelGrid
    rays: np.ndarray

    def __post_init__(self):
        rays = np.asarray(self.rays, dtype=np.float64)
        if rays.shape != (self.grid.m, 6):
            raise ShapeMismatch(f"expected rays of shape ({self.grid.m}, 6), got {rays.shape}")
        object.__setattr__(self, "rays", rays)

    @property
    def directions(self) -> np.ndarray:
        return self.rays[:, :3]

    @property
    def moments(self) -> np.ndarray:
        return self.rays[:, 3:]

    def ray(self, i: int) -> Ray:
        """Return ray ``i`` as a validated :class:`Ray` (direction renormalized)."""
        d, m = self.rays[i, :3], self.rays[i, 3:]
        n = np.linalg.norm(d)
        if n <= _EPS_DIR:
            raise ZeroDirection(f"ray {i} has a zero direction")
        return Ray(d / n, m / n)


def unproject_directions(camera: PinholeCamera, coords: np.ndarray) -> np.ndarray:
    """Unit world-frame directions ``normalize(R^T K^-1 u)`` for NDC ``coords``."""
    K = camera.intrinsics
    if abs(np.linalg.det(K)) < 1e-12 or not np.all(np.isfinite(K)):
        raise SingularIntrinsics("intrinsics matrix is not invertible")
    uh = np.concatenate([coords, np.ones((len(coords), 1))], axis=1)
    d = np.linalg.solve(K, uh.T).T @ camera.rotation
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def camera_to_rays(camera: PinholeCamera, grid: PixelGrid) -> RayBundle:
    """Convert a pinhole camera to its ray bundle on ``grid``.

    Every ray passes through the camera center, which is used as the anchor
    point of the moment ``m = c x d``.
    """
    if grid.m == 0:
        raise ShapeMismatch("grid is empty")
    d = unproject_directions(camera, grid.coords)
    m = np.cross(camera.center, d)
    return RayBundle(grid, np.concatenate([d, m], axis=1))


def cameras_to_rays(cameras, grid: PixelGrid) -> np.ndarray:
    """Stacked ``(N, p*p, 6)`` ray array for a list of cameras."""
    return np.stack([camera_to_rays(cam, grid).rays for cam in cameras])
