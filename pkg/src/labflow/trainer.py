"""Offline imitation-learning loop.

One iteration draws a micro-batch, computes the flow matching loss and accumulates
gradients. Every ``accumulation`` iterations the averaged gradient is clipped, AdamW
updates the parameters and the EMA shadow follows. Checkpoints are safetensors
files whose metadata header carries everything that is not a tensor.
"""

from __future__ import annotations

import copy
import json
import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn
from pydantic import ValidationError
from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save_file
from torch import Tensor
from tqdm import tqdm

from .dataset import EpisodeRecord, sample_training_items
from .encoders import EncodedBatch, ObservationEncoder
from .errors import CheckpointError, DivergenceError, NoDataError
from .flow import FlowBatch, make_flow_batch
from .models.config import RunConfig, TrainConfig
from .models.dataset import NormalizationStats
from .models.reports import StepRecord
from .models.vocabulary import PromptVocab
from .policy import FlowMatchingPolicy, PolicyRunner, build_policy

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METADATA_KEY = "labflow"
LOG_FILE = "train_log.jsonl"


def global_norm(grads: Sequence[Tensor]) -> float:
    """Euclidean norm of all gradients flattened into one vector."""
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(torch.cat([g.reshape(-1) for g in grads])))


def clip_global_norm(grads: Sequence[Tensor], threshold: float, norm: float | None = None) -> float:
    """Scale gradients in place so their global norm is at most ``threshold``; returns the scale."""
    norm = global_norm(grads) if norm is None else norm
    if not np.isfinite(norm):
        raise DivergenceError(f"divergence: gradient norm is {norm}")
    if norm <= threshold:
        return 1.0
    scale = threshold / norm
    for g in grads:
        g.mul_(scale)
    return scale


def make_optimizer(params: Any, cfg: TrainConfig) -> torch.optim.AdamW:
    """Decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""
    return torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps, weight_decay=cfg.weight_decay, foreach=False)


@torch.no_grad()
def ema_update(shadow: Sequence[Tensor], params: Sequence[Tensor], decay: float) -> None:
    """shadow <- decay * shadow + (1 - decay) * params."""
    for s, p in zip(shadow, params, strict=True):
        s.mul_(decay).add_(p.detach(), alpha=1.0 - decay)


@dataclass
class Checkpoint:
    """Everything needed to resume training or to run the policy."""

    policy_state: dict[str, Tensor]
    ema_state: dict[str, Tensor]
    optimizer_state: dict[str, Any]
    iteration: int
    optimizer_step: int
    stats: NormalizationStats
    config: RunConfig
    vocab: PromptVocab
    rng_state: dict[str, Any]
    # Gradient sums and losses of an unfinished accumulation window.
    accum_grads: dict[str, Tensor] = field(default_factory=dict)
    pending_losses: list[float] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tensors: dict[str, Tensor] = {}
        tensors.update({f"policy.{k}": v.detach().contiguous() for k, v in self.policy_state.items()})
        tensors.update({f"ema.{k}": v.detach().contiguous() for k, v in self.ema_state.items()})
        for idx, state in self.optimizer_state["state"].items():
            for name, value in state.items():
                tensors[f"optim.{idx}.{name}"] = value.detach().reshape(-1).contiguous() if value.ndim == 0 else value.contiguous()
        tensors.update({f"accum.{k}": v.detach().contiguous() for k, v in self.accum_grads.items()})
        header = {
            "version": self.version,
            "iteration": self.iteration,
            "optimizer_step": self.optimizer_step,
            "param_groups": self.optimizer_state["param_groups"],
            "stats": self.stats.model_dump(mode="json"),
            "config": self.config.model_dump(mode="json"),
            "vocab": self.vocab.token_to_id,
            "rng_state": self.rng_state,
            "pending_losses": self.pending_losses,
        }
        save_file(tensors, str(path), metadata={METADATA_KEY: json.dumps(header)})
        return path

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint {path} does not exist")
        try:
            tensors = load_file(str(path))
            with safe_open(str(path), framework="pt") as f:
                raw = (f.metadata() or {}).get(METADATA_KEY)
            if raw is None:
                raise CheckpointError(f"{path} has no labflow header")
            header = json.loads(raw)
            if header.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
            config = RunConfig.model_validate(header["config"])
            stats = NormalizationStats.model_validate(header["stats"])
            vocab = PromptVocab(token_to_id=header["vocab"])
        except (SafetensorError, OSError, KeyError, json.JSONDecodeError, ValidationError) as e:
            raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

        policy_state, ema_state, accum_grads = {}, {}, {}
        optim_state: dict[int, dict[str, Tensor]] = {}
        for key, value in tensors.items():
            group, _, name = key.partition(".")
            if group == "policy":
                policy_state[name] = value
            elif group == "ema":
                ema_state[name] = value
            elif group == "accum":
                accum_grads[name] = value
            elif group == "optim":
                idx, _, field = name.partition(".")
                optim_state.setdefault(int(idx), {})[field] = value.reshape(()) if field == "step" else value
        return cls(
            policy_state=policy_state,
            ema_state=ema_state,
            optimizer_state={"state": optim_state, "param_groups": header["param_groups"]},
            iteration=header["iteration"],
            optimizer_step=header["optimizer_step"],
            stats=stats,
            config=config,
            vocab=vocab,
            rng_state=header["rng_state"],
            accum_grads=accum_grads,
            pending_losses=list(header.get("pending_losses", [])),
            version=header["version"],
        )

    def runner(self, use_ema: bool = True) -> PolicyRunner:
        """Inference wrapper; evaluation uses the EMA weights by default."""
        cfg = self.config
        encoder = ObservationEncoder(cfg.observation, self.vocab, dtype=torch.float32)
        policy = build_policy(cfg)
        policy.load_state_dict(self.ema_state if use_ema else self.policy_state)
        return PolicyRunner(encoder, policy.float(), self.stats, cfg.flow)


class Trainer:
    def __init__(
        self,
        config: RunConfig,
        episodes: Sequence[EpisodeRecord],
        stats: NormalizationStats,
        vocab: PromptVocab,
        out_dir: str | Path | None = None,
    ):
        if not episodes:
            raise NoDataError("no data: training needs at least one episode")
        self.config = config
        self.train_cfg = config.train
        self.episodes = list(episodes)
        self.stats = stats
        self.vocab = vocab
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.dtype = torch.float64 if config.train.dtype == "float64" else torch.float32

        self.encoder = ObservationEncoder(config.observation, vocab, dtype=self.dtype)
        self.policy: FlowMatchingPolicy = build_policy(config)
        self.ema: FlowMatchingPolicy = copy.deepcopy(self.policy).requires_grad_(False)
        self.optimizer = make_optimizer(self.policy.parameters(), config.train)
        self.rng = np.random.default_rng(config.train.seed)
        self.iteration = 0
        self.optimizer_step = 0
        self._pending_losses: list[float] = []

    @property
    def params(self) -> list[nn.Parameter]:
        return [p for p in self.policy.parameters() if p.requires_grad]

    def next_batch(self) -> tuple[EncodedBatch, FlowBatch]:
        obs = self.config.observation
        items = sample_training_items(
            self.episodes, self.rng, self.train_cfg.batch_size, self.stats, self.vocab, window=obs.window, horizon=self.config.model.horizon
        )
        batch = self.encoder.encode_batch([it.window for it in items])
        flow = make_flow_batch(np.stack([it.chunk for it in items]), self.rng, self.config.flow, dtype=self.dtype)
        return batch, flow

    def backward(self, batch: EncodedBatch, flow: FlowBatch) -> float:
        """Accumulate the gradient of loss / accumulation; returns the unscaled loss."""
        loss = self.policy.loss(batch, flow)
        (loss / self.train_cfg.accumulation).backward()
        return float(loss.detach())

    def apply_update(self) -> StepRecord:
        """Clip, AdamW step, EMA update and zero the accumulators."""
        grads = [p.grad for p in self.params if p.grad is not None]
        norm = global_norm(grads)
        scale = clip_global_norm(grads, self.train_cfg.clip_norm, norm=norm)
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        ema_update(list(self.ema.parameters()), self.params, self.train_cfg.ema_decay)
        self.optimizer_step += 1
        losses = self._pending_losses or [float("nan")]
        self._pending_losses = []
        return StepRecord(
            iteration=self.iteration,
            optimizer_step=self.optimizer_step,
            loss=float(np.mean(losses)),
            grad_norm=norm,
            clip_scale=scale,
        )

    def step(self) -> tuple[float, StepRecord | None]:
        """One iteration; the record is returned when it completed an optimizer step."""
        loss = self.backward(*self.next_batch())
        self.iteration += 1
        self._pending_losses.append(loss)
        if self.iteration % self.train_cfg.accumulation == 0:
            return loss, self.apply_update()
        return loss, None

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            policy_state={k: v.detach().clone() for k, v in self.policy.state_dict().items()},
            ema_state={k: v.detach().clone() for k, v in self.ema.state_dict().items()},
            optimizer_state=copy.deepcopy(self.optimizer.state_dict()),
            iteration=self.iteration,
            optimizer_step=self.optimizer_step,
            stats=self.stats,
            config=self.config,
            vocab=self.vocab,
            rng_state=copy.deepcopy(self.rng.bit_generator.state),
            accum_grads={k: p.grad.detach().clone() for k, p in self.policy.named_parameters() if p.grad is not None},
            pending_losses=list(self._pending_losses),
        )

    @classmethod
    def resume(cls, ckpt: Checkpoint, episodes: Sequence[EpisodeRecord], out_dir: str | Path | None = None) -> Trainer:
        trainer = cls(ckpt.config, episodes, ckpt.stats, ckpt.vocab, out_dir=out_dir)
        trainer.policy.load_state_dict(ckpt.policy_state)
        trainer.ema.load_state_dict(ckpt.ema_state)
        trainer.optimizer.load_state_dict(ckpt.optimizer_state)
        trainer.rng.bit_generator.state = copy.deepcopy(ckpt.rng_state)
        trainer.iteration = ckpt.iteration
        trainer.optimizer_step = ckpt.optimizer_step
        for name, p in trainer.policy.named_parameters():
            if name in ckpt.accum_grads:
                p.grad = ckpt.accum_grads[name].to(dtype=p.dtype).clone()
        trainer._pending_losses = list(ckpt.pending_losses)
        logger.info("resumed training at iteration %d (optimizer step %d)", ckpt.iteration, ckpt.optimizer_step)
        return trainer

    def _log(self, record: StepRecord) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / LOG_FILE, "a") as f:
            f.write(record.model_dump_json() + "\n")

    def _save(self, ckpt: Checkpoint) -> None:
        if self.out_dir is not None:
            path = ckpt.save(self.out_dir / "checkpoints" / f"checkpoint_{ckpt.iteration:08d}.safetensors")
            ckpt.save(self.out_dir / "checkpoints" / "last.safetensors")
            logger.info("saved checkpoint %s", path)

    def train(self, iterations: int | None = None, progress: bool = False) -> Iterator[Checkpoint]:
        """Run until ``iterations`` (default: total_iterations) and yield scheduled checkpoints.

        The final state is always yielded, even off schedule.
        """
        target = self.train_cfg.total_iterations if iterations is None else iterations
        bar = tqdm(total=target, initial=self.iteration, disable=not progress, desc="train")
        last_saved = -1
        while self.iteration < target:
            _, record = self.step()
            bar.update(1)
            if record is not None:
                self._log(record)
                bar.set_postfix(loss=f"{record.loss:.4f}")
                if record.optimizer_step % 50 == 0:
                    logger.info("step %d loss %.5f grad-norm %.3f", record.optimizer_step, record.loss, record.grad_norm)
            if self.iteration % self.train_cfg.checkpoint_every == 0:
                ckpt = self.checkpoint()
                self._save(ckpt)
                last_saved = self.iteration
                yield ckpt
        bar.close()
        if last_saved != self.iteration:
            ckpt = self.checkpoint()
            self._save(ckpt)
            yield ckpt
