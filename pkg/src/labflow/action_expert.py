"""Diffusion-transformer action expert.

Maps a noisy action chunk, a flow time and the conditioned tokens to a velocity
chunk. The flow time modulates every sublayer through AdaLN-zero; observations
enter only through the cross-attention sublayers of the even-numbered blocks.
"""

from __future__ import annotations

from collections.abc import Callable

import torch
import torch.nn as nn
from torch import Tensor

from .errors import ShapeError, TauRangeError
from .layers import FeedForward, MultiHeadAttention, flow_time_features, init_trunc_normal, zero_linear
from .models.common import ACTION_DIM
from .models.config import ModelConfig

LN_EPS = 1e-6


class TauEmbedding(nn.Module):
    """Sinusoidal flow-time features followed by a two-layer MLP."""

    def __init__(self, feature_dim: int, dim: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.mlp = nn.Sequential(nn.Linear(feature_dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, tau: Tensor) -> Tensor:
        if torch.any(tau < 0) or torch.any(tau > 1):
            raise TauRangeError(f"flow time must lie in [0, 1], got range [{tau.min().item()}, {tau.max().item()}]")
        return self.mlp(flow_time_features(tau, self.feature_dim))


def adaln_apply(
    x: Tensor,
    sublayer: Callable[[Tensor], Tensor],
    shift: Tensor,
    scale: Tensor,
    gate: Tensor,
    norm: Callable[[Tensor], Tensor],
) -> Tensor:
    """x + gate * sublayer(norm(x) * (1 + scale) + shift); modulation tensors are (B, E)."""
    h = norm(x) * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)
    return x + gate.unsqueeze(1) * sublayer(h)


class DiTBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, ff_dim: int, cross_attention: bool):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False, eps=LN_EPS)
        self.self_attn = MultiHeadAttention(dim, num_heads)
        self.cross_attn = MultiHeadAttention(dim, num_heads) if cross_attention else None
        self.ff = FeedForward(dim, ff_dim)
        self.num_sublayers = 3 if cross_attention else 2
        # (shift, scale, gate) per sublayer
        self.modulation = nn.Linear(dim, 3 * dim * self.num_sublayers)

    @property
    def has_cross_attention(self) -> bool:
        return self.cross_attn is not None

    def forward(self, x: Tensor, c: Tensor, cond: Tensor, cond_mask: Tensor | None) -> Tensor:
        mods = self.modulation(c).chunk(3 * self.num_sublayers, dim=-1)
        x = adaln_apply(x, self.self_attn, *mods[0:3], norm=self.norm)
        if self.cross_attn is not None:
            cross = self.cross_attn
            x = adaln_apply(x, lambda h: cross(h, context=cond, key_mask=cond_mask), *mods[3:6], norm=self.norm)
        return adaln_apply(x, self.ff, *mods[-3:], norm=self.norm)


class ActionExpert(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        e = cfg.embed_dim
        self.in_projection = nn.Linear(ACTION_DIM, e)
        self.chunk_positions = nn.Parameter(torch.zeros(cfg.horizon, e))
        self.tau_embedding = TauEmbedding(cfg.tau_embed_dim, e)
        self.cond_norm = nn.LayerNorm(e, eps=LN_EPS)
        # blocks 2, 4, 6, ... (1-based) carry cross-attention
        self.blocks = nn.ModuleList([DiTBlock(e, cfg.num_heads, cfg.ff_dim, cross_attention=i % 2 == 1) for i in range(cfg.expert_blocks)])
        self.final_norm = nn.LayerNorm(e, elementwise_affine=False, eps=LN_EPS)
        self.out_projection = nn.Linear(e, ACTION_DIM)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        std = self.cfg.init_std
        init_trunc_normal(self, std)
        nn.init.trunc_normal_(self.chunk_positions, std=std, a=-2 * std, b=2 * std)
        for block in self.blocks:
            zero_linear(block.modulation)
        zero_linear(self.out_projection)

    @property
    def num_cross_attention(self) -> int:
        return sum(1 for b in self.blocks if b.has_cross_attention)

    def embed_tau(self, tau: Tensor) -> Tensor:
        return self.tau_embedding(tau)

    def forward(self, noisy: Tensor, tau: Tensor, cond: Tensor, cond_mask: Tensor | None = None) -> Tensor:
        """(B, H, 14), (B,), (B, M, E) -> velocity (B, H, 14)."""
        b = noisy.shape[0]
        if noisy.shape[1:] != (self.cfg.horizon, ACTION_DIM):
            raise ShapeError(f"noisy chunk must be (B, {self.cfg.horizon}, {ACTION_DIM}), got {tuple(noisy.shape)}")
        if cond.ndim != 3 or cond.shape[0] != b or cond.shape[1] < 1 or cond.shape[2] != self.cfg.embed_dim:
            raise ShapeError(f"conditioning must be (B, M>=1, {self.cfg.embed_dim}), got {tuple(cond.shape)}")
        if tau.shape != (b,):
            raise ShapeError(f"tau must have shape ({b},), got {tuple(tau.shape)}")
        x = self.in_projection(noisy) + self.chunk_positions
        c = self.embed_tau(tau)
        cond = self.cond_norm(cond)
        for block in self.blocks:
            x = block(x, c, cond, cond_mask)
        return self.out_projection(self.final_norm(x))
