"""Toy ray denoiser: a transformer over patch tokens from all views.

Each token carries a patch feature, its NDC pixel coordinate, a (noisy) ray
and a flag marking the reference view.  Tokens are embedded linearly, a
projected sinusoidal time embedding is added, and pre-norm transformer
blocks process all ``N * p * p`` tokens jointly.  Half of the heads in each
block attend only within a view, the other half across all views, so the
network knows which tokens share a camera without breaking permutation
equivariance.  A linear head predicts the clean 6-D ray per token.

The same network serves as the regressor by pinning ``t = T`` and zeroing
the ray channel.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import DEFAULT_T, NoiseSchedule, make_schedule
from .errors import EmptyInput, NonFiniteLoss, ShapeMismatch


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    width: int = 128
    blocks: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    T: int = DEFAULT_T


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    steps: int = 2000
    blocks: int = 4
    width: int = 128
    heads: int = 4
    mlp_ratio: int = 2
    seed: int = 0
    mode: str = "diffusion"
    warmup: int = 100
    weight_decay: float = 0.0
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.mode not in ("diffusion", "regression"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        for name in ("lr", "batch_size", "steps", "blocks", "width", "heads", "mlp_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")


@dataclass
class TokenBatch:
    """Inputs for ``B`` scenes of ``N`` views with ``m`` patches each.

    Arrays are ``(B, N, m, .)``; ``t`` has shape ``(B,)``.
    """

    features: torch.Tensor
    coords: torch.Tensor
    rays: torch.Tensor
    t: torch.Tensor

    @classmethod
    def from_arrays(cls, features, coords, rays, t, dtype=torch.float32) -> "TokenBatch":
        f = torch.as_tensor(np.asarray(features), dtype=dtype)
        c = torch.as_tensor(np.asarray(coords), dtype=dtype)
        r = torch.as_tensor(np.asarray(rays), dtype=dtype)
        squeeze = f.dim() == 3
        if squeeze:
            f, c, r = f[None], c[None], r[None]
        tt = torch.as_tensor(np.broadcast_to(np.asarray(t), (f.shape[0],)).copy(), dtype=dtype)
        batch = cls(f, c, r, tt)
        batch.check()
        return batch

    def check(self):
        B, N, m, _ = self.features.shape
        if self.coords.shape != (B, N, m, 2) or self.rays.shape != (B, N, m, 6):
            raise ShapeMismatch(
                f"features {tuple(self.features.shape)}, coords {tuple(self.coords.shape)} "
                f"and rays {tuple(self.rays.shape)} are inconsistent")
        if self.t.shape != (B,):
            raise ShapeMismatch(f"expected {B} timesteps, got {tuple(self.t.shape)}")

    @property
    def n_tokens(self) -> int:
        return self.features.shape[1] * self.features.shape[2]


def timestep_encoding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal encoding, ``(B,) -> (B, dim)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    ang = t[:, None] * freqs[None]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class Block(nn.Module):
    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, mlp_ratio * width)
        self.fc2 = nn.Linear(mlp_ratio * width, width)

    def attention(self, x: torch.Tensor, same_view: torch.Tensor) -> torch.Tensor:
        B, L, W = x.shape
        h = self.heads
        q, k, v = self.qkv(x).view(B, L, 3, h, W // h).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(W // h)
        local = h // 2
        if local:
            masked = scores[:, :local].masked_fill(~same_view, float("-inf"))
            scores = torch.cat([masked, scores[:, local:]], dim=1)
        out = torch.softmax(scores, dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(B, L, W))

    def forward(self, x: torch.Tensor, same_view: torch.Tensor) -> torch.Tensor:
        x = x + self.attention(self.norm1(x), same_view)
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class RayDenoiser(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        W = config.width
        self.embed = nn.Linear(config.feature_dim + 2 + 6 + 1, W)
        self.time_proj = nn.Linear(W, W)
        self.blocks = nn.ModuleList(Block(W, config.heads, config.mlp_ratio) for _ in range(config.blocks))
        self.norm = nn.LayerNorm(W)
        self.head = nn.Linear(W, 6)

    def token_inputs(self, batch: TokenBatch) -> torch.Tensor:
        B, N, m, _ = batch.features.shape
        ref = torch.zeros(B, N, m, 1, dtype=batch.features.dtype)
        ref[:, 0] = 1.0
        x = torch.cat([batch.features, batch.coords, batch.rays, ref], dim=-1)
        return x.reshape(B, N * m, -1)

    def embed_tokens(self, batch: TokenBatch) -> torch.Tensor:
        temb = self.time_proj(timestep_encoding(batch.t, self.config.width))
        return self.embed(self.token_inputs(batch)) + temb[:, None, :]

    def forward(self, batch: TokenBatch) -> torch.Tensor:
        """Predicted clean rays, shape ``(B, N, m, 6)``."""
        batch.check()
        if batch.features.shape[-1] != self.config.feature_dim:
            raise ShapeMismatch(
                f"model expects {self.config.feature_dim}-d features, got {batch.features.shape[-1]}")
        B, N, m, _ = batch.features.shape
        view = torch.arange(N).repeat_interleave(m)
        same_view = view[:, None] == view[None, :]
        x = self.embed_tokens(batch)
        for block in self.blocks:
            x = block(x, same_view)
        return self.head(self.norm(x)).view(B, N, m, 6)


def embed_tokens(batch: TokenBatch, model: RayDenoiser) -> torch.Tensor:
    return model.embed_tokens(batch)


def forward(batch: TokenBatch, model: RayDenoiser) -> torch.Tensor:
    return model(batch)


def loss(pred, target) -> torch.Tensor:
    """Mean squared error over every ray component."""
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def grad(model: RayDenoiser, batch: TokenBatch, targets) -> dict[str, torch.Tensor]:
    """Gradient of :func:`loss` w.r.t. every parameter, keyed by parameter name."""
    params = dict(model.named_parameters())
    value = loss(model(batch), targets)
    grads = torch.autograd.grad(value, list(params.values()))
    return dict(zip(params, grads))


def build_model(feature_dim: int, config: TrainConfig, T: int = DEFAULT_T) -> RayDenoiser:
    torch.manual_seed(config.seed)
    mc = ModelConfig(feature_dim, config.width, config.blocks, config.heads, config.mlp_ratio, T)
    return RayDenoiser(mc)


@dataclass
class RayDataset:
    """Stacked per-scene arrays: features ``(S, N, m, d)``, coords, rays."""

    features: np.ndarray
    coords: np.ndarray
    rays: np.ndarray

    def __post_init__(self):
        if len(self.features) == 0:
            raise EmptyInput("dataset has no scenes")
        if not (len(self.features) == len(self.coords) == len(self.rays)):
            raise ShapeMismatch("dataset arrays differ in length")

    def __len__(self) -> int:
        return len(self.features)

    @classmethod
    def from_viewsets(cls, viewsets) -> "RayDataset":
        return cls(np.stack([v.features for v in viewsets]),
                   np.stack([v.coords for v in viewsets]),
                   np.stack([v.rays for v in viewsets]))


def make_training_batch(data: RayDataset, idx, mode: str, schedule: NoiseSchedule,
                        generator: torch.Generator) -> tuple[TokenBatch, torch.Tensor]:
    f = torch.as_tensor(data.features[idx], dtype=torch.float32)
    c = torch.as_tensor(data.coords[idx], dtype=torch.float32)
    x0 = torch.as_tensor(data.rays[idx], dtype=torch.float32)
    B = len(idx)
    if mode == "regression":
        t = torch.full((B,), float(schedule.T))
        noisy = torch.zeros_like(x0)
    else:
        ti = torch.randint(1, schedule.T + 1, (B,), generator=generator)
        ab = torch.as_tensor(schedule.alpha_bar, dtype=torch.float32)[ti].view(B, 1, 1, 1)
        eps = torch.randn(x0.shape, generator=generator)
        noisy = ab.sqrt() * x0 + (1 - ab).sqrt() * eps
        t = ti.to(torch.float32)
    return TokenBatch(f, c, noisy, t), x0


def train(data: RayDataset, config: TrainConfig, schedule: NoiseSchedule | None = None,
          log: Callable[[dict], None] | None = None, model: RayDenoiser | None = None) -> RayDenoiser:
    """Fit the denoiser with Adam, linear warmup and cosine decay.

    Diffusion mode draws ``t`` uniformly from ``1..T`` and noises the target
    rays; regression mode pins ``t = T`` with a zero ray channel.  ``log``
    receives one dict per step.
    """
    if len(data) == 0:
        raise EmptyInput("dataset has no scenes")
    schedule = schedule or make_schedule()
    if model is None:
        model = build_model(data.features.shape[-1], config, schedule.T)
    gen = torch.Generator().manual_seed(config.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)

    def lr_at(step):
        if step < config.warmup:
            return (step + 1) / config.warmup
        frac = (step - config.warmup) / max(1, config.steps - config.warmup)
        return 0.5 * (1 + math.cos(math.pi * min(frac, 1.0)))

    sched = torch.optim.lr_scheduler.LambdaLR(opt, lr_at)
    model.train()
    start = time.perf_counter()
    bs = min(config.batch_size, len(data))
    for step in range(config.steps):
        idx = torch.randperm(len(data), generator=gen)[:bs].numpy()
        batch, target = make_training_batch(data, idx, config.mode, schedule, gen)
        value = loss(model(batch), target)
        if not torch.isfinite(value):
            raise NonFiniteLoss(f"loss became {value.item()} at step {step}")
        opt.zero_grad()
        value.backward()
        if config.grad_clip:
            nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        sched.step()
        if log is not None:
            log({"step": step, "loss": value.item(), "lr": sched.get_last_lr()[0],
                 "elapsed": round(time.perf_counter() - start, 3)})
    model.eval()
    return model


def _predict(model: RayDenoiser, features, coords, rays, t) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    batch = TokenBatch.from_arrays(features, coords, rays, t, dtype=dtype)
    with torch.no_grad():
        out = model(batch).numpy().astype(np.float64)
    return out[0] if np.ndim(features) == 3 else out


def as_denoiser(model: RayDenoiser):
    """Wrap ``model`` as a sampler callable over numpy arrays."""
    def denoise(features, coords, x_t, t):
        return _predict(model, features, coords, x_t, t)
    return denoise


def regress(features, coords, model: RayDenoiser) -> np.ndarray:
    """Single forward pass with ``t = T`` and zeroed ray inputs."""
    features = np.asarray(features)
    zeros = np.zeros(features.shape[:-1] + (6,))
    return _predict(model, features, coords, zeros, model.config.T)


def param_count(model: RayDenoiser) -> int:
    return sum(p.numel() for p in model.parameters())


def model_config_dict(model: RayDenoiser) -> dict:
    return asdict(model.config)
