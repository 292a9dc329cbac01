"""Shared fixtures: a micro run config and small synthetic episodes."""

from pathlib import Path

import numpy as np
import pytest

from labflow.dataset import EpisodeRecord
from labflow.encoders import build_vocab
from labflow.models import RunConfig, TaskId, config_from_dict

RESOURCES = Path(__file__).parent / "resources"

# 16px images, 2x2 patch grid, two blocks each side: fast enough for CPU unit tests.
MICRO = {
    "observation": {
        "image_size": 16,
        "window": 2,
        "geometric": {"seed": 11, "patch_size": 8, "out_dim": 8, "hidden_dim": 8},
        "vision_language": {"seed": 22, "patch_size": 8, "out_dim": 8, "hidden_dim": 16},
        "text_dim": 8,
    },
    "model": {
        "embed_dim": 16,
        "ff_dim": 32,
        "num_heads": 2,
        "adapter_blocks": 2,
        "expert_blocks": 2,
        "horizon": 4,
        "tau_embed_dim": 8,
    },
    "train": {"batch_size": 4, "accumulation": 2, "total_iterations": 6, "checkpoint_every": 2, "dtype": "float64"},
    "runtime": {"ensemble": {"horizon": 4}, "eval_episodes": 2},
    "task": {"episode_cap": 20},
}

MICRO_PROMPT = "put the cyan tube in the rack."


def micro_config(**sections) -> RunConfig:
    data = {k: dict(v) for k, v in MICRO.items()}
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return config_from_dict(data)


def synthetic_episode(seed: int = 0, steps: int = 12, size: int = 16, prompt: str = MICRO_PROMPT, task: TaskId = TaskId.ARRANGE) -> EpisodeRecord:
    rng = np.random.default_rng(seed)
    actions = np.zeros((steps, 14), dtype=np.float32)
    ramp = np.linspace(0.0, 1.0, steps)
    actions[:, [0, 1, 2, 7, 8, 9]] = (np.outer(ramp, rng.uniform(-1.0, 1.0, 6)) + 0.1 * seed).astype(np.float32)
    actions[:, [3, 10]] = (ramp[:, None] > 0.5).astype(np.float32)
    frames = tuple(rng.integers(0, 256, size=(steps, size, size, 3), dtype=np.uint8) for _ in range(3))
    return EpisodeRecord(task_id=task, prompt_text=prompt, rate_hz=50.0, actions=actions, frames=frames, seed=seed)


@pytest.fixture
def micro() -> RunConfig:
    return micro_config()


@pytest.fixture
def episodes() -> list[EpisodeRecord]:
    return [synthetic_episode(0), synthetic_episode(1, steps=9)]


@pytest.fixture
def vocab():
    return build_vocab([MICRO_PROMPT, "put the white tube in the rack."])
