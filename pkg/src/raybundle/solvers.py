"""Ray bundle -> camera recovery and the alignment solvers built on it."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import (
    CountMismatch,
    DegenerateBundle,
    DegenerateConfiguration,
    RankDeficient,
    ShapeMismatch,
    SingularInput,
)
from .rays import PinholeCamera, RayBundle

_COND_LIMIT = 1e8


class HomographyEstimate(NamedTuple):
    matrix: np.ndarray
    residual: float


class SimilarityTransform(NamedTuple):
    """``y ~ scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices ``[v]_x`` for a ``(..., 3)`` array."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def center_objective(point, directions, moments) -> np.ndarray:
    """``sum_i |p x d_i - m_i|^2``; ``point`` may carry leading batch axes."""
    p = np.asarray(point, dtype=np.float64)
    r = np.cross(p[..., None, :], directions) - moments
    return np.sum(r * r, axis=(-1, -2))


def _solve_moment_system(directions: np.ndarray, moments: np.ndarray) -> np.ndarray:
    if len(directions) < 2:
        raise DegenerateBundle("need at least two rays")
    # residual_i = -[d_i]_x p - m_i
    A = -skew(directions)
    normal = np.einsum("nji,njk->ik", A, A)
    rhs = np.einsum("nji,nj->i", A, moments)
    scale = np.trace(normal)
    if not np.isfinite(scale) or scale <= 0:
        raise DegenerateBundle("all ray directions vanish")
    eig = np.linalg.eigvalsh(normal)
    if eig[0] <= 1e-12 * scale:
        raise DegenerateBundle("ray directions are parallel; the center is not determined")
    if eig[-1] / eig[0] > _COND_LIMIT:
        sol, *_ = np.linalg.lstsq(A.reshape(-1, 3), moments.reshape(-1), rcond=None)
        return sol
    return np.linalg.solve(normal, rhs)


def solve_camera_center(bundle) -> np.ndarray:
    """Least-squares point closest to every ray of the bundle.

    Minimizes ``sum |p x d - m|^2`` over ``p``.  Accepts a :class:`RayBundle`
    or a raw ``(m, 6)`` array.
    """
    rays = bundle.rays if isinstance(bundle, RayBundle) else np.asarray(bundle, dtype=np.float64)
    return _solve_moment_system(rays[:, :3], rays[:, 3:])


def closest_point_to_lines(points, directions) -> np.ndarray:
    """Point minimizing the summed squared distance to a set of 3D lines."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if len(pts) != len(dirs):
        raise CountMismatch("points and directions differ in length")
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise DegenerateBundle("a line has zero direction")
    dirs = dirs / norms
    return _solve_moment_system(dirs, np.cross(pts, dirs))


def dlt_residual(H, directions, pixels) -> float:
    """Summed squared cross-product error ``sum |H d_i x u_i|^2``."""
    uh = np.concatenate([pixels, np.ones((len(pixels), 1))], axis=1)
    r = np.cross(directions @ np.asarray(H).T, uh)
    return float(np.sum(r * r))


def solve_dlt_homography(directions, pixels) -> HomographyEstimate:
    """Unit-norm ``H`` mapping ray directions onto homogeneous pixels.

    All three rows of each cross product ``[u]_x H d = 0`` are stacked and the
    right singular vector of the smallest singular value is returned, with
    the sign fixed so that ``H d_i`` points along ``u_i`` on average.
    """
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    u = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(d) != len(u):
        raise CountMismatch("directions and pixels differ in length")
    if len(d) < 4:
        raise RankDeficient("DLT needs at least four correspondences")
    n = np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(n <= 1e-12):
        raise RankDeficient("a ray direction vanishes")
    d = d / n
    uh = np.concatenate([u, np.ones((len(u), 1))], axis=1)
    # (H d)_r = sum_c H[r, c] d_c  ->  H d = kron(I, d^T) vec_row(H)
    lift = np.einsum("rs,nc->nrsc", np.eye(3), d).reshape(-1, 3, 9)
    A = (skew(uh) @ lift).reshape(-1, 9)
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[7] <= 1e-10 * s[0]:
        raise RankDeficient("direction set is degenerate (rank < 8)")
    H = vt[-1].reshape(3, 3)
    if np.mean(np.sum((d @ H.T) * uh, axis=1)) < 0:
        H = -H
    return HomographyEstimate(H, dlt_residual(H, d, u))


def rq_decompose(P) -> tuple[np.ndarray, np.ndarray]:
    """Factor ``P ~ K R`` with ``K`` upper triangular and ``R`` in SO(3).

    ``K`` has a positive diagonal and ``K[2, 2] = 1``.  When ``det(P) < 0``
    the factorization is of ``-P``, so ``K R`` equals ``P`` up to a scale of
    either sign.
    """
    P = np.asarray(P, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(P)):
        raise SingularInput("matrix has non-finite entries")
    det = np.linalg.det(P)
    if abs(det) <= 1e-14 * max(np.linalg.norm(P), 1e-300) ** 3:
        raise SingularInput("matrix is singular")
    if det < 0:
        P = -P
    flip = np.eye(3)[::-1]
    q, r = np.linalg.qr((flip @ P).T)
    K = flip @ r.T @ flip
    R = flip @ q.T
    signs = np.sign(np.diag(K))
    K = K * signs
    R = signs[:, None] * R
    K = np.triu(K) / K[2, 2]
    return K, R


def recover_camera(bundle: RayBundle) -> PinholeCamera:
    """Camera whose ray bundle best matches ``bundle`` in the least-squares sense."""
    c = solve_camera_center(bundle)
    H = solve_dlt_homography(bundle.directions, bundle.grid.coords).matrix
    K, R = rq_decompose(H)
    return PinholeCamera(R, -R @ c, K)


def umeyama_similarity(source, target) -> SimilarityTransform:
    """Least-squares similarity ``(s, R, t)`` with ``s R x_i + t ~ y_i``.

    Reflections are excluded.  Two points are accepted (the fit is then
    exact); more are needed for a unique rotation.
    """
    x = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if x.shape != y.shape:
        raise CountMismatch(f"source has {len(x)} points, target has {len(y)}")
    if len(x) < 2:
        raise ShapeMismatch("need at least two points")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    var_x = np.mean(np.sum(xc * xc, axis=1))
    if var_x <= 1e-24:
        raise DegenerateConfiguration("source points coincide")
    cov = yc.T @ xc / len(x)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.sum(D * np.diag(S)) / var_x)
    return SimilarityTransform(s, R, my - s * R @ mx)
