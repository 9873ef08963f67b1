"""Desk-scale pipeline: synthetic datasets, model evaluation and baselines."""

from __future__ import annotations

import numpy as np

from .diffusion import DEFAULT_STOP_T, NoiseSchedule, make_schedule, sample
from .denoiser import RayDataset, RayDenoiser, as_denoiser, regress
from .errors import DegenerateConfiguration, RayBundleError
from .metrics import center_errors, pairwise_rotation_errors
from .rays import RayBundle
from .scenes import CaptureConfig, ViewSet, generate_turntable_scene, scene_viewset
from .solvers import recover_camera

HELDOUT_SEED_BASE = 1_000_000


def make_viewsets(n_scenes: int, p: int = 8, config: CaptureConfig = CaptureConfig(),
                  seed_base: int = 0) -> list[ViewSet]:
    return [scene_viewset(generate_turntable_scene(config, seed_base + i), p) for i in range(n_scenes)]


def make_dataset(n_scenes: int, p: int = 8, config: CaptureConfig = CaptureConfig(),
                 seed_base: int = 0) -> RayDataset:
    return RayDataset.from_viewsets(make_viewsets(n_scenes, p, config, seed_base))


def recover_cameras(rays, grids) -> list | None:
    """Cameras from predicted bundles of one scene; ``None`` if any view fails."""
    try:
        return [recover_camera(RayBundle(g, r)) for r, g in zip(rays, grids)]
    except RayBundleError:
        return None


def scene_errors(rays, viewset: ViewSet) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and center errors of one scene; failed recoveries score worst-case."""
    n = len(viewset.cameras)
    cams = recover_cameras(rays, viewset.grids)
    if cams is None:
        return np.full(n * (n - 1) // 2, 180.0), np.full(n, np.inf)
    rot = pairwise_rotation_errors(cams, viewset.cameras)
    try:
        cen = center_errors(cams, viewset.cameras)
    except DegenerateConfiguration:
        cen = np.full(n, np.inf)
    return rot, cen


def score(pred_rays, viewsets) -> dict:
    rot, cen = zip(*(scene_errors(r, v) for r, v in zip(pred_rays, viewsets)))
    rot, cen = np.concatenate(rot), np.concatenate(cen)
    return {"rotation_errors": rot, "center_errors": cen,
            "rotation_acc_15": float(np.mean(rot < 15.0)),
            "center_acc_0.1": float(np.mean(cen < 0.1))}


def stack_inputs(viewsets) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([v.features for v in viewsets]), np.stack([v.coords for v in viewsets])


def predict_diffusion(model: RayDenoiser, viewsets, stop_t: int = DEFAULT_STOP_T, seed: int = 0,
                      schedule: NoiseSchedule | None = None, chunk: int = 50) -> np.ndarray:
    """Early-stopped samples, batched ``chunk`` scenes at a time.

    Chunk ``k`` draws its initial noise from seed ``seed + k``.
    """
    schedule = schedule or make_schedule(model.config.T)
    den = as_denoiser(model)
    out = []
    for k, start in enumerate(range(0, len(viewsets), chunk)):
        feats, coords = stack_inputs(viewsets[start:start + chunk])
        out.append(sample(den, feats, coords, schedule, stop_t, seed + k))
    return np.concatenate(out)


def predict_regression(model: RayDenoiser, viewsets) -> np.ndarray:
    feats, coords = stack_inputs(viewsets)
    return regress(feats, coords, model)


def first_camera_baseline(viewsets) -> np.ndarray:
    """Predict the reference camera's true rays for every view."""
    return np.stack([np.repeat(v.rays[:1], len(v.rays), axis=0) for v in viewsets])
