"""Test run configuration parsing, defaults and profiles."""

import pytest
import yaml
from conftest import RESOURCES, micro_config

from labflow.errors import ConfigError
from labflow.models import EncoderStreams, RunConfig, TaskId, config_from_dict, config_to_yaml, load_config


def test_defaults_match_training_recipe():
    """The desk profile carries the reference optimisation recipe."""
    cfg = RunConfig()
    assert cfg.train.batch_size == 16
    assert cfg.train.accumulation == 8
    assert cfg.train.lr == 1e-4
    assert cfg.train.weight_decay == 1e-8
    assert cfg.train.ema_decay == 0.999
    assert cfg.train.clip_norm == 1.0
    assert cfg.model.horizon == 32
    assert cfg.observation.window == 2
    assert cfg.flow.denoise_steps == 10
    assert cfg.flow.beta_alpha == 1.5
    assert cfg.flow.tau_scale == 0.999
    assert cfg.observation.image_size == 64


def test_desk_token_count():
    """Three frames of three 64px cameras with 8px patches give 576 image tokens."""
    obs = RunConfig().observation
    assert obs.num_patches == 64
    assert obs.num_frames * 3 * obs.num_patches == 576
    assert obs.image_dim == obs.geometric.out_dim + obs.vision_language.out_dim


def test_paper_dims_profile():
    """The table-sized profile uses E=512 and 224px images."""
    cfg = RunConfig.paper_dims()
    assert cfg.profile == "paper-dims"
    assert cfg.model.embed_dim == 512
    assert cfg.model.ff_dim == 2048
    assert cfg.observation.image_size == 224
    assert cfg.observation.grid_side == 14


def test_unknown_key_rejected():
    """A misspelled switch is a ConfigError, not a silent default."""
    with pytest.raises(ConfigError, match="model.embed_dimm"):
        config_from_dict({"model": {"embed_dimm": 64}})


def test_horizon_mismatch_rejected():
    """Ensemble horizon must equal the model horizon."""
    with pytest.raises(ConfigError, match="horizon"):
        config_from_dict({"model": {"horizon": 16}})


def test_indivisible_image_rejected():
    """Image side must be a multiple of the patch size."""
    with pytest.raises(ConfigError, match="divisible"):
        config_from_dict({"observation": {"image_size": 60}})


def test_checkpoint_schedule_must_land_on_optimizer_steps():
    """checkpoint_every is a multiple of accumulation."""
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"accumulation": 8, "checkpoint_every": 12}})


def test_yaml_round_trip():
    """parse -> serialize -> parse is the identity."""
    cfg = micro_config(task={"task": "pour", "multi_goal": False}, observation={"streams": "geometric"})
    again = config_from_dict(yaml.safe_load(config_to_yaml(cfg)))
    assert again == cfg
    assert again.observation.streams == EncoderStreams.GEOMETRIC


def test_load_resource_config():
    """The bundled desk config parses and keeps untouched sections at their defaults."""
    cfg = load_config(RESOURCES / "configs" / "desk.yaml")
    assert cfg.task.task == TaskId.ARRANGE
    assert cfg.model.horizon == 32
    assert cfg.collect.max_failure_rate == 0.2


def test_load_missing_config(tmp_path):
    """Unreadable files surface as ConfigError."""
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.yaml")


def test_load_non_mapping_config(tmp_path):
    """A YAML list is not a config."""
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(path)


def test_episode_caps():
    """Task presets give each task its own tick cap unless overridden."""
    assert micro_config().task.cap == 20
    assert RunConfig().task.cap == 500
    assert RunConfig(task={"task": "clean"}).task.cap == 700
