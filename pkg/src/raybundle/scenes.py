"""Synthetic center-facing captures, scene normalization and patch features.

The scene frame is z-up.  Cameras orbit the landmark centroid and look at
it, so every optical axis passes through the centroid.  Landmarks stand in
for an object; their canonical (scene-frame) positions define a fixed code
that plays the role of semantic image features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CountMismatch, InvalidCamera, NoVisibleLandmarks, ZeroTranslation
from .rays import FULL_CROP, PinholeCamera, PixelGrid, cameras_to_rays, pixel_grid
from .solvers import SimilarityTransform, closest_point_to_lines

FEATURE_SEED = 20231214
_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class CaptureConfig:
    n_cameras: int = 3
    radius_range: tuple[float, float] = (2.5, 3.5)
    elevation_range: tuple[float, float] = (0.0, 40.0)
    azimuth_jitter: float = 30.0
    focal_range: tuple[float, float] = (1.6, 2.4)
    landmark_count: int = 64
    crop_jitter: float = 0.0

    def __post_init__(self):
        if self.n_cameras < 2:
            raise InvalidCamera("a scene needs at least two cameras")
        if self.landmark_count < 8:
            raise InvalidCamera("a scene needs at least eight landmarks")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise InvalidCamera(f"bad radius range {self.radius_range}")
        lo, hi = self.elevation_range
        if not -80.0 <= lo <= hi <= 80.0:
            raise InvalidCamera(f"elevations must lie in [-80, 80], got {self.elevation_range}")
        lo, hi = self.focal_range
        if not 0 < lo <= hi:
            raise InvalidCamera(f"bad focal range {self.focal_range}")
        if self.azimuth_jitter < 0 or not 0 <= self.crop_jitter < 1:
            raise InvalidCamera("jitter values out of range")


@dataclass(frozen=True)
class SyntheticScene:
    landmarks: np.ndarray
    cameras: list
    seed: int
    crops: list = field(default_factory=list)

    def __post_init__(self):
        if not self.crops:
            object.__setattr__(self, "crops", [FULL_CROP] * len(self.cameras))
        if len(self.crops) != len(self.cameras):
            raise CountMismatch("one crop per camera is required")

    @property
    def n_views(self) -> int:
        return len(self.cameras)


def look_at(center, target, focal: float) -> PinholeCamera:
    """Camera at ``center`` looking at ``target`` with z-up and no roll."""
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, _UP)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    K = np.diag([focal, focal, 1.0])
    return PinholeCamera.from_center(R, center, K)


def generate_turntable_scene(config: CaptureConfig = CaptureConfig(), seed: int = 0) -> SyntheticScene:
    """Landmarks in a unit ball viewed by cameras spread around a turntable.

    Landmarks are shifted so their centroid is the scene origin.
    Camera ``i`` sits at azimuth ``360 i / N`` degrees plus uniform jitter in
    ``[-azimuth_jitter, azimuth_jitter]``, at a random radius and elevation,
    and looks at the landmark centroid.
    """
    rng = np.random.default_rng(seed)
    L = config.landmark_count
    raw = rng.normal(size=(L, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    landmarks = raw * rng.uniform(size=(L, 1)) ** (1.0 / 3.0)
    landmarks -= landmarks.mean(axis=0)
    centroid = np.zeros(3)

    n = config.n_cameras
    az = np.deg2rad(360.0 * np.arange(n) / n + rng.uniform(-1, 1, n) * config.azimuth_jitter)
    el = np.deg2rad(rng.uniform(*config.elevation_range, size=n))
    radius = rng.uniform(*config.radius_range, size=n)
    focal = rng.uniform(*config.focal_range, size=n)
    offsets = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)
    cameras = [look_at(centroid + r * o, centroid, f) for r, o, f in zip(radius, offsets, focal)]

    crops = [FULL_CROP] * n
    if config.crop_jitter > 0:
        j = config.crop_jitter
        shift = rng.uniform(-j, j, size=(n, 2))
        half = 1.0 - np.abs(shift).max(axis=1)
        crops = [(float(sx), float(sy), float(h)) for (sx, sy), h in zip(shift, half)]
    return SyntheticScene(landmarks, cameras, int(seed), crops)


def normalizing_transform(cameras) -> SimilarityTransform:
    """World similarity applied by :func:`normalize_scene`.

    Origin moves to the point closest to all optical axes, the world is
    rotated so camera 0 has identity rotation, then scaled so camera 0's
    translation has unit norm.
    """
    if len(cameras) < 2:
        raise CountMismatch("normalization needs at least two cameras")
    centers = np.stack([cam.center for cam in cameras])
    axes = np.stack([cam.optical_axis for cam in cameras])
    origin = closest_point_to_lines(centers, axes)
    R0 = cameras[0].rotation
    dist = np.linalg.norm(R0 @ (centers[0] - origin))
    if dist < 1e-12:
        raise ZeroTranslation("first camera sits at the recentered origin")
    s = 1.0 / dist
    return SimilarityTransform(s, R0, -s * R0 @ origin)


def transform_camera(camera: PinholeCamera, sim: SimilarityTransform) -> PinholeCamera:
    """Express ``camera`` in the world frame mapped by ``sim``."""
    R = camera.rotation @ sim.rotation.T
    c = sim.apply(camera.center)
    return PinholeCamera(R, -R @ c, camera.intrinsics)


def normalize_scene(cameras) -> list:
    sim = normalizing_transform(cameras)
    out = [transform_camera(cam, sim) for cam in cameras]
    # remove round-off so camera 0 is exactly canonical
    t0 = out[0].translation / np.linalg.norm(out[0].translation)
    out[0] = PinholeCamera(np.eye(3), t0, out[0].intrinsics)
    return out


def _feature_projection(code_dim: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(FEATURE_SEED)
    n = max(code_dim - 3, 0)
    return rng.normal(scale=2.0, size=(n, 3)), rng.uniform(0, 2 * np.pi, size=n)


def landmark_codes(landmarks: np.ndarray, code_dim: int = 11) -> np.ndarray:
    """Fixed code per landmark: its canonical position plus random Fourier terms."""
    W, b = _feature_projection(code_dim)
    return np.concatenate([landmarks, np.sin(landmarks @ W.T + b)], axis=1)


def feature_dim(k: int = 4, code_dim: int = 11) -> int:
    return k * (code_dim + 3)


def feature_oracle(scene: SyntheticScene, camera_index: int, grid: PixelGrid,
                   k: int = 4, code_dim: int = 11) -> np.ndarray:
    """Per-patch features of one view, shape ``(p*p, k * (code_dim + 3))``.

    Each patch lists its ``k`` nearest visible landmark projections, closest
    first, as ``(code, offset from patch center / crop half extent, 1/depth)``.
    With fewer than ``k`` visible landmarks the last slots repeat the farthest
    one found.
    """
    cam = scene.cameras[camera_index]
    X = scene.landmarks @ cam.rotation.T + cam.translation
    z = X[:, 2]
    front = z > 1e-6
    uv = np.full((len(X), 2), np.inf)
    proj = X[front] @ cam.intrinsics.T
    uv[front] = proj[:, :2] / proj[:, 2:3]
    cx, cy, half = grid.crop
    inside = front & (np.abs(uv[:, 0] - cx) <= half) & (np.abs(uv[:, 1] - cy) <= half)
    idx = np.flatnonzero(inside)
    if len(idx) == 0:
        raise NoVisibleLandmarks(f"camera {camera_index} sees no landmark")
    codes = landmark_codes(scene.landmarks[idx], code_dim)
    delta = (uv[idx][None, :, :] - grid.coords[:, None, :]) / half
    dist2 = np.sum(delta * delta, axis=2)
    order = np.argsort(dist2, axis=1, kind="stable")[:, :k]
    if order.shape[1] < k:
        order = np.concatenate([order, np.repeat(order[:, -1:], k - order.shape[1], axis=1)], axis=1)
    rows = np.arange(grid.m)[:, None]
    parts = [codes[order], delta[rows, order], (1.0 / z[idx])[order][..., None]]
    return np.concatenate(parts, axis=2).reshape(grid.m, -1)


@dataclass(frozen=True)
class ViewSet:
    """Network-ready arrays for one scene: features, pixels and target rays."""

    features: np.ndarray
    coords: np.ndarray
    rays: np.ndarray
    cameras: list
    grids: list


def scene_viewset(scene: SyntheticScene, p: int, k: int = 4, code_dim: int = 11) -> ViewSet:
    """Features and ground-truth rays of every view in the normalized frame."""
    grids = [pixel_grid(p, crop) for crop in scene.crops]
    feats = np.stack([feature_oracle(scene, i, g, k, code_dim) for i, g in enumerate(grids)])
    cams = normalize_scene(scene.cameras)
    rays = np.stack([cameras_to_rays([c], g)[0] for c, g in zip(cams, grids)])
    coords = np.stack([g.coords for g in grids])
    return ViewSet(feats, coords, rays, cams, grids)
