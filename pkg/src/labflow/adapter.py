"""Trainable vision-language adapter.

Image and text tokens are projected to the shared width, normalised by GatedRMS and
fused by pre-norm decoder blocks in which the prompt positions are the queries and
the image tokens are the cross-attention keys and values.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from torch import Tensor

from .encoders import TokenMeta, TokenSequence
from .errors import EmptyPromptError, ShapeError
from .layers import FeedForward, MultiHeadAttention, init_trunc_normal, zero_linear
from .models.config import ModelConfig

RMS_EPS = 1e-6


def gated_rms(x: Tensor, gamma: Tensor, gate: Tensor, eps: float = RMS_EPS) -> Tensor:
    """y = gamma * sigmoid(gate) * x / sqrt(mean(x**2) + eps), over the last axis."""
    rms = torch.sqrt(x.pow(2).mean(dim=-1, keepdim=True) + eps)
    return gamma * torch.sigmoid(gate) * x / rms


class GatedRMS(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(dim))
        self.gate = nn.Parameter(torch.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return gated_rms(x, self.gamma, self.gate)


class AdapterBlock(nn.Module):
    """Pre-norm decoder block: self-attention over text, cross-attention to image, feed-forward."""

    def __init__(self, dim: int, num_heads: int, ff_dim: int):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, num_heads)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, num_heads)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_dim)

    def zero_outputs(self) -> None:
        zero_linear(self.self_attn.w_out)
        zero_linear(self.cross_attn.w_out)
        zero_linear(self.ff.down)

    def forward(self, x: Tensor, image: Tensor, text_mask: Tensor | None, image_mask: Tensor | None = None) -> Tensor:
        x = x + self.self_attn(self.norm_self(x), key_mask=text_mask)
        x = x + self.cross_attn(self.norm_cross(x), context=image, key_mask=image_mask)
        return x + self.ff(self.norm_ff(x))


@dataclass
class ConditionedTokens:
    """Adapter output for one observation: text positions first, then projected image tokens."""

    tokens: Tensor  # (M, E)
    meta: TokenMeta
    num_text: int
    num_image: int

    def __post_init__(self) -> None:
        if self.tokens.shape[0] != self.num_text + self.num_image or self.tokens.shape[0] < 1:
            raise ShapeError(f"{self.tokens.shape[0]} tokens != {self.num_text} text + {self.num_image} image")


class Adapter(nn.Module):
    def __init__(self, cfg: ModelConfig, image_dim: int, text_dim: int):
        super().__init__()
        self.cfg = cfg
        self.image_dim = image_dim
        self.text_dim = text_dim
        e = cfg.embed_dim
        self.img_projection = nn.Linear(image_dim, e)
        self.txt_projection = nn.Linear(text_dim, e)
        self.img_norm = GatedRMS(e)
        self.txt_norm = GatedRMS(e)
        self.blocks = nn.ModuleList([AdapterBlock(e, cfg.num_heads, cfg.ff_dim) for _ in range(cfg.adapter_blocks)])
        self.reset_parameters()

    def reset_parameters(self) -> None:
        init_trunc_normal(self, self.cfg.init_std)
        for block in self.blocks:
            block.zero_outputs()

    def forward(self, text: Tensor, image: Tensor, text_mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """(B, L, D_txt), (B, N, D_img) -> conditioned tokens (B, M, E) and their mask (B, M)."""
        if text.ndim != 3 or text.shape[1] == 0:
            raise EmptyPromptError("empty prompt: the adapter needs at least one text token")
        if text.shape[-1] != self.text_dim or image.shape[-1] != self.image_dim or image.shape[0] != text.shape[0]:
            raise ShapeError(f"adapter expects text width {self.text_dim} and image width {self.image_dim}")
        b, n = image.shape[0], image.shape[1]
        if text_mask is None:
            text_mask = torch.ones(text.shape[:2], dtype=torch.bool, device=text.device)
        img = self.img_norm(self.img_projection(image))
        x = self.txt_norm(self.txt_projection(text))
        for block in self.blocks:
            x = block(x, img, text_mask)
        if not self.cfg.condition_includes_image_tokens:
            return x, text_mask
        image_mask = torch.ones(b, n, dtype=torch.bool, device=text.device)
        return torch.cat([x, img], dim=1), torch.cat([text_mask, image_mask], dim=1)

    def condition(self, text: TokenSequence, image: TokenSequence) -> ConditionedTokens:
        """Single-observation form of ``forward``."""
        if len(text) == 0:
            raise EmptyPromptError("empty prompt")
        tokens, _ = self(text.tokens[None], image.tokens[None])
        num_image = len(image) if self.cfg.condition_includes_image_tokens else 0
        meta = TokenMeta.concat([text.meta, image.meta]) if num_image else text.meta
        return ConditionedTokens(tokens[0], meta, num_text=len(text), num_image=num_image)
