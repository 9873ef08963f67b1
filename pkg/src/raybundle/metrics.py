"""Pose accuracy metrics: relative rotation error, aligned camera centers, AUC."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CountMismatch, EmptyInput, ValidationError
from .solvers import umeyama_similarity

ROTATION_THRESHOLDS = (5.0, 10.0, 15.0, 30.0)
CENTER_THRESHOLDS = (0.1, 0.2, 0.3)
ROTATION_AUC_GRID = np.arange(0.0, 181.0, 1.0)
CENTER_AUC_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)
_ROUNDOFF = 1e-12


def _rotations(cameras) -> np.ndarray:
    return np.stack([np.asarray(getattr(c, "rotation", c), dtype=np.float64) for c in cameras])


def _centers(cameras) -> np.ndarray:
    return np.stack([np.asarray(c.center, dtype=np.float64) for c in cameras])


def geodesic_deg(Ra, Rb) -> np.ndarray:
    """Angle in degrees of ``Ra Rb^T``; broadcasts over leading axes."""
    rel = np.asarray(Ra) @ np.swapaxes(np.asarray(Rb), -1, -2)
    cos = np.clip((np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    # arccos loses precision near 0; the antisymmetric part carries sin
    vee = np.stack([rel[..., 2, 1] - rel[..., 1, 2],
                    rel[..., 0, 2] - rel[..., 2, 0],
                    rel[..., 1, 0] - rel[..., 0, 1]], axis=-1)
    sin = np.linalg.norm(vee, axis=-1) / 2.0
    return np.degrees(np.arctan2(sin, cos))


def pairwise_rotation_errors(pred, gt) -> np.ndarray:
    """Geodesic error between predicted and true relative rotations of every pair ``i < j``."""
    Rp, Rg = _rotations(pred), _rotations(gt)
    if len(Rp) != len(Rg):
        raise CountMismatch(f"{len(Rp)} predicted vs {len(Rg)} ground-truth cameras")
    if len(Rp) < 2:
        raise CountMismatch("need at least two cameras")
    i, j = np.triu_indices(len(Rp), 1)
    rel_p = Rp[i] @ np.swapaxes(Rp[j], -1, -2)
    rel_g = Rg[i] @ np.swapaxes(Rg[j], -1, -2)
    return geodesic_deg(rel_p, rel_g)


def rotation_accuracy(errors, threshold: float, inclusive: bool = False) -> float:
    """Fraction of errors below ``threshold`` (``<``; ``<=`` when ``inclusive``)."""
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise EmptyInput("no errors to score")
    if not threshold >= 0 or (threshold == 0 and not inclusive):
        raise ValidationError(f"threshold must be positive, got {threshold}")
    hits = e <= threshold if inclusive else e < threshold
    return float(np.mean(hits))


def center_errors(pred, gt) -> np.ndarray:
    """Per-camera center error after similarity alignment, as a fraction of scene scale.

    Scene scale is the distance from the ground-truth center centroid to the
    farthest ground-truth camera.
    """
    cp, cg = _centers(pred), _centers(gt)
    if len(cp) != len(cg):
        raise CountMismatch(f"{len(cp)} predicted vs {len(cg)} ground-truth cameras")
    if len(cp) < 2:
        raise CountMismatch("need at least two cameras")
    sim = umeyama_similarity(cp, cg)
    scale = np.max(np.linalg.norm(cg - cg.mean(axis=0), axis=1))
    return np.linalg.norm(sim.apply(cp) - cg, axis=1) / scale


def camera_center_accuracy(pred, gt, threshold: float = 0.1) -> float:
    return rotation_accuracy(center_errors(pred, gt), threshold)


def accuracy_curve(errors, thresholds) -> np.ndarray:
    """Inclusive accuracy at each threshold (``error <= threshold``).

    A ``1e-12`` allowance absorbs round-off, so exact predictions score 1
    at threshold 0.
    """
    e = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    if e.size == 0:
        raise EmptyInput("no errors to score")
    th = np.asarray(thresholds, dtype=np.float64)
    if th.size == 0:
        raise EmptyInput("no thresholds")
    if np.any(np.diff(th) < 0):
        raise ValidationError("thresholds must be sorted ascending")
    return np.searchsorted(e, th + _ROUNDOFF, side="right") / e.size


def accuracy_auc(errors, thresholds=ROTATION_AUC_GRID) -> float:
    """Mean of the accuracy curve over the threshold grid (both endpoints included)."""
    return float(np.mean(accuracy_curve(errors, thresholds)))


@dataclass
class MetricsReport:
    n_views: int
    rotation_errors_deg: list
    center_errors_frac: list
    rotation_accuracy: dict = field(default_factory=dict)
    center_accuracy: dict = field(default_factory=dict)
    auc_rotation: float = 0.0
    auc_center: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_cameras(pred, gt) -> MetricsReport:
    """All metrics for one set of predicted cameras against ground truth."""
    rot = pairwise_rotation_errors(pred, gt)
    cen = center_errors(pred, gt)
    return summarize(len(gt), rot, cen)


def summarize(n_views: int, rot, cen) -> MetricsReport:
    rot = np.asarray(rot, dtype=np.float64).reshape(-1)
    cen = np.asarray(cen, dtype=np.float64).reshape(-1)
    return MetricsReport(
        n_views=int(n_views),
        rotation_errors_deg=rot.tolist(),
        center_errors_frac=cen.tolist(),
        rotation_accuracy={f"{th:g}": rotation_accuracy(rot, th) for th in ROTATION_THRESHOLDS},
        center_accuracy={f"{th:g}": rotation_accuracy(cen, th) for th in CENTER_THRESHOLDS},
        auc_rotation=accuracy_auc(rot, ROTATION_AUC_GRID),
        auc_center=accuracy_auc(cen, CENTER_AUC_GRID),
    )
