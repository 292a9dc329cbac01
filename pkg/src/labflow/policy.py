"""The trainable policy (adapter + action expert) and its inference wrapper."""

from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn as nn
from torch import Tensor

from .action_expert import ActionExpert
from .adapter import Adapter
from .encoders import EncodedBatch, ObservationEncoder, ObservationWindow
from .flow import FlowBatch, VelocityField, cfm_loss, generate_chunk
from .models.config import FlowConfig, ModelConfig, RunConfig
from .models.dataset import NormalizationStats
from .models.vocabulary import PromptVocab

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


class FlowMatchingPolicy(nn.Module):
    """Adapter and action expert as one module; the frozen encoders stay outside."""

    def __init__(self, cfg: ModelConfig, image_dim: int, text_dim: int):
        super().__init__()
        self.cfg = cfg
        self.adapter = Adapter(cfg, image_dim, text_dim)
        self.expert = ActionExpert(cfg)

    def condition(self, batch: EncodedBatch) -> tuple[Tensor, Tensor]:
        return self.adapter(batch.text, batch.image, batch.text_mask)

    def velocity_field(self, cond: Tensor, cond_mask: Tensor) -> VelocityField:
        def velocity(noisy: Tensor, tau: Tensor) -> Tensor:
            return self.expert(noisy, tau, cond, cond_mask)

        return velocity

    def loss(self, batch: EncodedBatch, flow: FlowBatch) -> Tensor:
        cond, mask = self.condition(batch)
        return cfm_loss(self.velocity_field(cond, mask), flow)

    @torch.no_grad()
    def sample(self, batch: EncodedBatch, flow_cfg: FlowConfig, rng: np.random.Generator) -> Tensor:
        cond, mask = self.condition(batch)
        dtype = next(self.parameters()).dtype
        return generate_chunk(
            self.velocity_field(cond, mask), flow_cfg, rng, batch_size=batch.batch_size, horizon=self.cfg.horizon, dtype=dtype
        )

    def parameter_counts(self) -> dict[str, int]:
        def count(m: nn.Module) -> int:
            return sum(p.numel() for p in m.parameters() if p.requires_grad)

        return {"adapter": count(self.adapter), "action_expert": count(self.expert)}


def build_policy(config: RunConfig, image_dim: int | None = None, text_dim: int | None = None) -> FlowMatchingPolicy:
    """Seeded construction that leaves the global torch RNG untouched."""
    obs = config.observation
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.model.seed)
        policy = FlowMatchingPolicy(config.model, image_dim or obs.image_dim, text_dim or obs.text_dim)
    return policy.to(DTYPES[config.train.dtype])


class PolicyRunner:
    """Frozen encoder + vocab + stats + policy: the runtime's predictor."""

    def __init__(
        self,
        encoder: ObservationEncoder,
        policy: FlowMatchingPolicy,
        stats: NormalizationStats,
        flow_cfg: FlowConfig,
    ):
        self.encoder = encoder
        self.policy = policy.eval()
        self.stats = stats
        self.flow_cfg = flow_cfg

    @property
    def vocab(self) -> PromptVocab:
        return self.encoder.vocab

    @property
    def horizon(self) -> int:
        return self.policy.cfg.horizon

    def predict(self, window: ObservationWindow, rng: np.random.Generator) -> np.ndarray:
        """One normalized (H, 14) chunk for the observation window."""
        batch = self.encoder.encode_batch([window])
        return self.policy.sample(batch, self.flow_cfg, rng)[0].cpu().numpy().astype(np.float64)
