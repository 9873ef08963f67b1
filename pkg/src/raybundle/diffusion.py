"""DDPM schedule, forward noising and the deterministic early-stopped sampler.

Ray states are arrays of shape ``(N, m, 6)``: ``N`` views with ``m`` raw
6-D rays each.  A denoiser is any callable
``denoiser(features, coords, x_t, t) -> x0_pred`` over such arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidSchedule, InvalidTimestep, ShapeMismatch

DEFAULT_T = 100
DEFAULT_STOP_T = 30

Denoiser = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule.  Arrays are indexed by timestep ``0..T``;
    index 0 is the clean state (``beta = 0``, ``alpha_bar = 1``)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def betas(self) -> np.ndarray:
        return self.beta[1:]

    @property
    def alpha_bars(self) -> np.ndarray:
        return self.alpha_bar[1:]


def make_schedule(T: int = DEFAULT_T, beta_start: float | None = None,
                  beta_end: float | None = None, strict: bool = True) -> NoiseSchedule:
    """Linear betas; endpoints default to the 1000-step (1e-4, 0.02) scaled by 1000/T.

    ``strict`` enforces ``alpha_bar_1 > 0.9`` and ``alpha_bar_T < 0.01``;
    short schedules used for unit checks can turn it off.
    """
    if int(T) != T or T < 2:
        raise InvalidSchedule(f"T must be an integer >= 2, got {T}")
    T = int(T)
    if beta_start is None:
        beta_start = 1e-4 * 1000 / T
    if beta_end is None:
        beta_end = 0.02 * 1000 / T
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidSchedule(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if np.any(np.diff(alpha_bar) >= 0):
        raise InvalidSchedule("alpha_bar must be strictly decreasing")
    if not strict:
        return NoiseSchedule(T, beta, alpha, alpha_bar)
    if not alpha_bar[1] > 0.9:
        raise InvalidSchedule(f"alpha_bar_1 = {alpha_bar[1]:.4f} must exceed 0.9")
    if not alpha_bar[T] < 0.01:
        raise InvalidSchedule(f"alpha_bar_T = {alpha_bar[T]:.4g} must be below 0.01")
    return NoiseSchedule(T, beta, alpha, alpha_bar)


@dataclass(frozen=True)
class DiffusionState:
    t: int
    x: np.ndarray
    seed: int = 0


def _check_t(t: int, schedule: NoiseSchedule, low: int = 1) -> int:
    if int(t) != t or not low <= t <= schedule.T:
        raise InvalidTimestep(f"timestep {t} outside [{low}, {schedule.T}]")
    return int(t)


def add_noise(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`` on all six components."""
    t = _check_t(t, schedule)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {x0.shape} and eps {eps.shape} differ")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_coefficients(t: int, schedule: NoiseSchedule) -> tuple[float, float]:
    """Weights ``(a, b)`` of the posterior mean ``a * x0 + b * x_t``."""
    t = _check_t(t, schedule)
    ab, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    a = np.sqrt(ab_prev) * schedule.beta[t] / (1.0 - ab)
    b = np.sqrt(schedule.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab)
    return float(a), float(b)


def denoise_step(x_t, t: int, x0_pred, schedule: NoiseSchedule) -> np.ndarray:
    """Noise-free DDPM update: the posterior mean of ``x_{t-1}``."""
    a, b = posterior_coefficients(t, schedule)
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    if x_t.shape != x0_pred.shape:
        raise ShapeMismatch(f"x_t {x_t.shape} and x0_pred {x0_pred.shape} differ")
    return a * x0_pred + b * x_t


def initial_noise(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def sample(denoiser: Denoiser, features, coords, schedule: NoiseSchedule,
           stop_t: int = DEFAULT_STOP_T, seed: int = 0,
           callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None) -> np.ndarray:
    """Backward diffusion from pure noise, stopped early.

    Runs ``t = T, ..., stop_t + 1``; at each step the denoiser predicts
    ``x0`` and the state moves to the posterior mean.  Returns the ``x0``
    predicted at the last visited step.  ``callback(t, x_t, x0_pred)`` sees
    every step.
    """
    if int(stop_t) != stop_t or not 0 <= stop_t < schedule.T:
        raise InvalidTimestep(f"stop_t {stop_t} outside [0, {schedule.T})")
    features = np.asarray(features)
    x = initial_noise(features.shape[:-1] + (6,), seed)
    x0_pred = x
    for t in range(schedule.T, stop_t, -1):
        x0_pred = np.asarray(denoiser(features, coords, x, t), dtype=np.float64)
        if callback is not None:
            callback(t, x, x0_pred)
        x = denoise_step(x, t, x0_pred, schedule)
    return x0_pred


def view_batches(n_views: int, batch_max: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random partition of views ``1..N-1`` into chunks, each led by view 0."""
    if batch_max < 2:
        raise ShapeMismatch("batch_max must be at least 2")
    rest = rng.permutation(np.arange(1, n_views))
    size = batch_max - 1
    return [np.concatenate([[0], np.sort(rest[i:i + size])]) for i in range(0, len(rest), size)]


def sample_many_views(denoiser: Denoiser, features, coords, schedule: NoiseSchedule,
                      batch_max: int, stop_t: int = DEFAULT_STOP_T, seed: int = 0,
                      audit: list | None = None) -> np.ndarray:
    """Early-stopped sampling for more views than the denoiser takes at once.

    At every step the views are re-partitioned at random into mini-batches
    of at most ``batch_max`` views that all contain view 0.  View 0's
    prediction is the mean over its batches.  If ``audit`` is a list, the
    batches used at each step are appended to it as ``(t, batches)``.
    """
    if int(stop_t) != stop_t or not 0 <= stop_t < schedule.T:
        raise InvalidTimestep(f"stop_t {stop_t} outside [0, {schedule.T})")
    features = np.asarray(features)
    coords = np.asarray(coords)
    n = features.shape[0]
    x = initial_noise(features.shape[:-1] + (6,), seed)
    rng = np.random.default_rng([seed, 1])
    x0_pred = x
    for t in range(schedule.T, stop_t, -1):
        batches = view_batches(n, batch_max, rng)
        if audit is not None:
            audit.append((t, [b.tolist() for b in batches]))
        x0_pred = np.zeros_like(x)
        first = []
        for b in batches:
            out = np.asarray(denoiser(features[b], coords[b], x[b], t), dtype=np.float64)
            x0_pred[b[1:]] = out[1:]
            first.append(out[0])
        x0_pred[0] = np.mean(first, axis=0)
        x = denoise_step(x, t, x0_pred, schedule)
    return x0_pred
