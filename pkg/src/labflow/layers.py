"""Building blocks shared by the encoders, the adapter and the action expert."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor


def leaky_gelu(x: Tensor) -> Tensor:
    """GELU with a 0.01 slope added on the negative side: gelu(x) + 0.01 * min(x, 0)."""
    return F.gelu(x) + 0.01 * torch.clamp(x, max=0.0)


def sinusoidal_positions(length: int, dim: int, dtype: torch.dtype = torch.float32) -> Tensor:
    """Classic (length, dim) position table: sin on even channels, cos on odd, 1/10000^(2i/d)."""
    if dim % 2:
        raise ValueError(f"position encoding width must be even, got {dim}")
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    inv_freq = torch.pow(10000.0, -torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * inv_freq)
    table[:, 1::2] = torch.cos(pos * inv_freq)
    return table.to(dtype)


def sincos_2d(grid_side: int, dim: int, dtype: torch.dtype = torch.float32) -> Tensor:
    """(grid_side**2, dim) table in raster order: first half encodes the row, second half the column."""
    if dim % 4:
        raise ValueError(f"2D position encoding width must be divisible by 4, got {dim}")
    axis = sinusoidal_positions(grid_side, dim // 2, dtype=torch.float64)
    rows = axis.repeat_interleave(grid_side, dim=0)
    cols = axis.repeat(grid_side, 1)
    return torch.cat([rows, cols], dim=1).to(dtype)


def flow_time_features(tau: Tensor, dim: int) -> Tensor:
    """Interleaved (sin, cos) features of tau with angular frequencies geometric from 1 to 1e4.

    ``tau`` has shape (B,); the result is (B, dim). At tau = 0 the pattern is (0, 1, 0, 1, ...).
    """
    half = dim // 2
    freqs = torch.logspace(0.0, 4.0, half, dtype=tau.dtype, device=tau.device)
    angles = tau.unsqueeze(-1) * freqs
    out = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
    return out.reshape(*tau.shape, dim)


def init_trunc_normal(module: nn.Module, std: float) -> None:
    """Truncated-normal (+-2 std) weights and zero biases for every Linear below ``module``."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def zero_linear(layer: nn.Linear) -> nn.Linear:
    nn.init.zeros_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


class MultiHeadAttention(nn.Module):
    """Multi-head scaled dot-product attention, unmasked except for key padding.

    With ``context=None`` the layer self-attends; otherwise queries come from ``x`` and
    keys/values from ``context``. ``key_mask`` is (B, Lk) with True marking real tokens.
    """

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} must be divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.w_out = nn.Linear(dim, dim)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: Tensor, context: Tensor | None = None, key_mask: Tensor | None = None) -> Tensor:
        kv = x if context is None else context
        q, k, v = self._split(self.w_q(x)), self._split(self.w_k(kv)), self._split(self.w_v(kv))
        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = F.softmax(scores, dim=-1)
        out = torch.matmul(weights, v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.w_out(out)


class FeedForward(nn.Module):
    """dim -> hidden -> dim with leaky-GELU."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.up = nn.Linear(dim, hidden)
        self.down = nn.Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.down(leaky_gelu(self.up(x)))
