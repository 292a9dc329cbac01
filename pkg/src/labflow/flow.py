"""Conditional flow matching on the linear path from noise (tau=0) to data (tau=1)."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .errors import NonFiniteLossError, NonFiniteSampleError, ShapeError
from .models.common import ACTION_DIM
from .models.config import FlowConfig

# velocity(noisy (B, H, 14), tau (B,)) -> (B, H, 14)
VelocityField = Callable[[Tensor, Tensor], Tensor]


def tau_from_uniform(u: np.ndarray | float, cfg: FlowConfig) -> np.ndarray:
    """Inverse-CDF draw for Beta(alpha, 1): B = U**(1/alpha), tau = s * (1 - B)."""
    b = np.power(np.asarray(u, dtype=np.float64), 1.0 / cfg.beta_alpha)
    return cfg.tau_scale * (1.0 - b)


def sample_tau(rng: np.random.Generator, cfg: FlowConfig, size: int | None = None) -> np.ndarray:
    """Flow times in [0, s], concentrated towards the noise end."""
    if cfg.beta_beta == 1.0:
        return tau_from_uniform(rng.random(size), cfg)
    return cfg.tau_scale * (1.0 - rng.beta(cfg.beta_alpha, cfg.beta_beta, size))


def corrupt(a: Tensor, eps: Tensor, tau: Tensor | float) -> tuple[Tensor, Tensor]:
    """Point on the path and its target velocity: (tau*A + (1-tau)*eps, A - eps).

    A batched ``tau`` of shape (B,) is broadcast over the chunk axes.
    """
    if a.shape != eps.shape:
        raise ShapeError(f"chunk {tuple(a.shape)} and noise {tuple(eps.shape)} differ in shape")
    if isinstance(tau, Tensor) and tau.ndim == 1 and a.ndim == 3:
        tau = tau[:, None, None]
    return tau * a + (1 - tau) * eps, a - eps


@dataclass
class FlowBatch:
    """Clean chunks with their noise and flow times; the observation side travels separately."""

    chunks: Tensor  # (B, H, 14)
    noise: Tensor  # (B, H, 14)
    tau: Tensor  # (B,)


def make_flow_batch(chunks: np.ndarray, rng: np.random.Generator, cfg: FlowConfig, dtype: torch.dtype = torch.float32) -> FlowBatch:
    """Draw fresh noise and flow times for (B, H, 14) clean chunks."""
    noise = rng.standard_normal(chunks.shape)
    tau = sample_tau(rng, cfg, size=chunks.shape[0])
    return FlowBatch(
        chunks=torch.as_tensor(chunks, dtype=dtype),
        noise=torch.as_tensor(noise, dtype=dtype),
        tau=torch.as_tensor(tau, dtype=dtype),
    )


def cfm_loss(velocity: VelocityField, batch: FlowBatch) -> Tensor:
    """Mean over items and chunk entries of (v(A_tau, tau) - u)**2."""
    if batch.chunks.shape[0] == 0:
        raise ShapeError("flow matching loss needs a non-empty batch")
    noisy, target = corrupt(batch.chunks, batch.noise, batch.tau)
    loss = (velocity(noisy, batch.tau) - target).pow(2).mean()
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss: {loss.item()}")
    return loss


@torch.no_grad()
def generate_chunk(
    velocity: VelocityField,
    cfg: FlowConfig,
    rng: np.random.Generator | None = None,
    *,
    batch_size: int = 1,
    horizon: int = 32,
    noise: Tensor | None = None,
    dtype: torch.dtype = torch.float32,
) -> Tensor:
    """Euler-integrate from noise at tau=0 to tau=1 in ``cfg.denoise_steps`` equal steps."""
    if noise is None:
        if rng is None:
            raise ValueError("generate_chunk needs either an rng or explicit noise")
        noise = torch.as_tensor(rng.standard_normal((batch_size, horizon, ACTION_DIM)), dtype=dtype)
    x = noise.clone()
    dt = 1.0 / cfg.denoise_steps
    for k in range(cfg.denoise_steps):
        tau = torch.full((x.shape[0],), k * dt, dtype=x.dtype, device=x.device)
        x = x + dt * velocity(x, tau)
        if not torch.isfinite(x).all():
            raise NonFiniteSampleError(f"non-finite denoising state at step {k + 1}/{cfg.denoise_steps}")
    return x.clamp(-1.0, 1.0) if cfg.clip_output else x
