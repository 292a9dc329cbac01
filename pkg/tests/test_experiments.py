"""Test the collect, train, eval, ablate and inspect commands on micro configs."""

import dataclasses

import pytest
from conftest import micro_config, synthetic_episode

from labflow import experiments
from labflow.dataset import MANIFEST_FILE, STATS_FILE, load_dataset
from labflow.errors import CheckpointMismatchError, ConfigError, ExpertFailureRateError, LabflowError, NoDataError
from labflow.experiments import cmd_collect, cmd_eval, cmd_inspect, cmd_train, derive_seed, load_report_rows, relabel_prompts, task_vocab
from labflow.models import PromptVariant, TaskId
from labflow.simlab import ExpertRollout


def _fake_collect(fail_seeds=()):
    """Stand-in for expert rollouts: synthetic 16px episodes, failing on the given attempt seeds."""

    def collect(spec, seed, resolution=64, **kwargs):
        if seed in fail_seeds:
            return ExpertRollout(seed, False, True, {"slot_distance": 1.0}, None)
        record = dataclasses.replace(synthetic_episode(seed % 7, size=resolution, task=spec.task), seed=seed)
        return ExpertRollout(seed, True, False, {}, None, record)

    return collect


@pytest.fixture
def dataset(tmp_path, monkeypatch):
    monkeypatch.setattr(experiments, "collect_episode", _fake_collect())
    return cmd_collect(micro_config(), out=tmp_path / "data", count=3)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, TaskId.ARRANGE, 5) == derive_seed(0, TaskId.ARRANGE, 5)
    seeds = {derive_seed(0, task, i) for task in TaskId for i in range(20)}
    assert len(seeds) == 60
    assert derive_seed(1, TaskId.ARRANGE, 0) != derive_seed(0, TaskId.ARRANGE, 0)


def test_task_vocab_covers_every_prompt():
    vocab = task_vocab(TaskId.ARRANGE)
    for word in ("cyan", "white", "slot", "sentence"):
        assert word in vocab.token_to_id


def test_relabel_prompts(episodes):
    relabelled = relabel_prompts(episodes, PromptVariant.CONCISE)
    assert [ep.prompt_text for ep in relabelled] == ["put the cyan tube in the rack."] * 2
    assert relabelled[0].actions is episodes[0].actions


def test_collect_writes_manifest(dataset):
    assert (dataset / MANIFEST_FILE).is_file()
    manifest, episodes = load_dataset(dataset)
    assert [e.name for e in manifest.episodes] == ["arrange_00000", "arrange_00001", "arrange_00002"]
    assert [e.seed for e in manifest.episodes] == [derive_seed(0, TaskId.ARRANGE, i) for i in range(3)]
    assert len(episodes) == 3
    assert manifest.discarded_seeds == {"arrange": []}


def test_collect_refuses_existing_dataset(dataset):
    with pytest.raises(LabflowError, match="already holds a dataset"):
        cmd_collect(micro_config(), out=dataset, count=1)


def test_collect_discards_failed_rollouts(tmp_path, monkeypatch):
    """A failed seed is skipped and recorded; the next attempt takes its place."""
    first = derive_seed(0, TaskId.ARRANGE, 0)
    monkeypatch.setattr(experiments, "collect_episode", _fake_collect({first}))
    manifest, _ = load_dataset(cmd_collect(micro_config(), out=tmp_path / "data", count=5))
    assert manifest.discarded_seeds == {"arrange": [first]}
    assert len(manifest.episodes) == 5
    assert first not in [e.seed for e in manifest.episodes]


def test_collect_failure_rate(tmp_path, monkeypatch):
    seeds = {derive_seed(0, TaskId.ARRANGE, i) for i in range(10)}
    monkeypatch.setattr(experiments, "collect_episode", _fake_collect(seeds))
    with pytest.raises(ExpertFailureRateError, match="expert failed"):
        cmd_collect(micro_config(), out=tmp_path / "data", count=5)


def test_train_then_eval(dataset, tmp_path):
    """Micro training writes the run directory; its checkpoint evaluates closed-loop."""
    run = tmp_path / "run"
    ckpt = cmd_train(micro_config(), dataset, run)
    assert ckpt == run / "checkpoints" / "last.safetensors"
    assert ckpt.is_file()
    assert (run / STATS_FILE).is_file()
    assert (run / "config.yaml").is_file()
    assert experiments.final_loss(run) is not None

    report = cmd_eval(None, ckpt, episodes=2, latency=2, out=tmp_path / "eval.jsonl")
    assert report.summary.episodes == 2
    assert report.summary.latency_ticks == 2
    assert report.summary.task == TaskId.ARRANGE
    assert all(r.ticks <= 20 for r in report.episodes)
    rows = load_report_rows(tmp_path / "eval.jsonl")
    assert [row["seed"] for row in rows] == [100_000, 100_001]
    assert (tmp_path / "eval.summary.json").is_file()

    playback = cmd_eval(None, ckpt, episodes=1, latency=0, playback=dataset / "arrange_00000")
    assert playback.episodes[0].predictions == playback.episodes[0].ticks

    inspected = cmd_inspect(checkpoint=ckpt)
    assert [row.name for row in inspected][-1] == "action_expert"


def test_eval_rejects_incompatible_config(dataset, tmp_path):
    ckpt = cmd_train(micro_config(), dataset, tmp_path / "run")
    with pytest.raises(CheckpointMismatchError):
        cmd_eval(micro_config(model={"embed_dim": 32}), ckpt, episodes=1)


def test_eval_options(dataset, tmp_path):
    """Zero episodes is rejected rather than read as the default; perturbation is carried into the summary."""
    ckpt = cmd_train(micro_config(), dataset, tmp_path / "run")
    with pytest.raises(ConfigError, match="at least one episode"):
        cmd_eval(None, ckpt, episodes=0)
    report = cmd_eval(None, ckpt, episodes=1, latency=0, perturb=True)
    assert report.summary.perturb
    assert report.summary.episodes == 1


def test_train_requires_task_episodes(dataset, tmp_path):
    with pytest.raises(NoDataError):
        cmd_train(micro_config(task={"task": "pour"}), dataset, tmp_path / "run")


def test_ablate_rejects_unknown_mode(micro):
    with pytest.raises(ConfigError, match="unknown ablation mode"):
        experiments.cmd_ablate(micro, "tokenizer")



@pytest.mark.parametrize(
    "mode, labels",
    [
        ("prompt", ["(a) irrelevant", "(b) concise", "(c) detailed"]),
        ("encoder", ["(i) geometric", "(ii) vision-language", "(iii) fused"]),
    ],
)
def test_ablate_trains_and_evaluates_every_arm(tmp_path, monkeypatch, mode, labels):
    """One shared dataset, one trained and evaluated model per arm, rows in arm order."""
    monkeypatch.setattr(experiments, "collect_episode", _fake_collect())
    rows = experiments.cmd_ablate(micro_config(collect={"count": 3}), mode, out_dir=tmp_path, episodes=1, iterations=2)
    assert [row.label for row in rows] == labels
    assert all(row.episodes == 1 and row.final_loss is not None for row in rows)
    root = tmp_path / f"ablate_{mode}"
    assert (root / "data" / MANIFEST_FILE).is_file()
    assert len((root / "ablation.jsonl").read_text().splitlines()) == 3
    for label in labels:
        assert (root / label.split(" ", 1)[1] / "checkpoints" / "last.safetensors").is_file()



def test_inspect_micro_model(micro):
    rows = {row.name: row for row in cmd_inspect(config=micro)}
    assert set(rows) == {"geometric_encoder", "vision_language_encoder", "prompt_embedding", "adapter", "action_expert"}
    assert rows["geometric_encoder"].trainable_params == 0
    assert rows["vision_language_encoder"].trainable_params == 0
    assert rows["adapter"].trainable_params > 0
    assert rows["adapter"].within_tolerance is None
    assert rows["action_expert"].dims["cross_attention_blocks"] == 1


def test_inspect_unknown_profile():
    with pytest.raises(ConfigError, match="unknown profile"):
        cmd_inspect(profile="huge")


@pytest.mark.slow
def test_inspect_paper_dims_matches_reference_sizes():
    rows = {row.name: row for row in cmd_inspect(profile="paper-dims")}
    assert rows["adapter"].within_tolerance is True
    assert rows["action_expert"].within_tolerance is True
    assert rows["action_expert"].dims["cross_attention_blocks"] == 4
