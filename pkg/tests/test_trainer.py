"""Test gradient clipping, AdamW, EMA, accumulation, checkpoints and resume."""

import numpy as np
import pytest
import torch
from conftest import micro_config

from labflow.dataset import compute_norm_stats, sample_training_items
from labflow.encoders import ObservationWindow
from labflow.errors import CheckpointError, DivergenceError, NoDataError
from labflow.flow import FlowBatch, make_flow_batch
from labflow.models import StepRecord, TrainConfig
from labflow.trainer import LOG_FILE, Checkpoint, Trainer, clip_global_norm, ema_update, global_norm, make_optimizer


def _trainer(episodes, vocab, out_dir=None, **sections) -> Trainer:
    return Trainer(micro_config(**sections), episodes, compute_norm_stats(episodes), vocab, out_dir=out_dir)


def test_global_norm_matches_flattened_vector():
    grads = [torch.tensor([3.0, 0.0], dtype=torch.float64), torch.tensor([[4.0]], dtype=torch.float64)]
    assert global_norm(grads) == pytest.approx(5.0)
    assert global_norm([]) == 0.0


def test_clip_global_norm():
    """Norm 2 with threshold 1 halves every gradient; norm 0.3 is left alone."""
    grads = [torch.tensor([2.0, 0.0], dtype=torch.float64)]
    assert clip_global_norm(grads, 1.0) == pytest.approx(0.5)
    assert grads[0].tolist() == [1.0, 0.0]
    small = [torch.tensor([0.3], dtype=torch.float64)]
    assert clip_global_norm(small, 1.0) == 1.0
    assert small[0].item() == pytest.approx(0.3)


def test_clip_global_norm_divergence():
    with pytest.raises(DivergenceError, match="divergence"):
        clip_global_norm([torch.tensor([float("inf")])], 1.0)


def test_adamw_first_step():
    """p=0, g=1: the first update is -lr / (1 + eps)."""
    p = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))
    opt = make_optimizer([p], TrainConfig())
    p.grad = torch.ones(1, dtype=torch.float64)
    opt.step()
    assert p.item() == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-6)


def test_adamw_zero_gradient_no_decay():
    p = torch.nn.Parameter(torch.tensor([0.7], dtype=torch.float64))
    opt = make_optimizer([p], TrainConfig(weight_decay=0.0))
    p.grad = torch.zeros(1, dtype=torch.float64)
    opt.step()
    assert p.item() == 0.7


def test_ema_update():
    """decay 0 copies; k steps towards constant 1 from 0 reach 1 - 0.999**k."""
    shadow = [torch.zeros(2, dtype=torch.float64)]
    ema_update(shadow, [torch.ones(2, dtype=torch.float64)], 0.0)
    assert shadow[0].tolist() == [1.0, 1.0]

    shadow = [torch.zeros(1, dtype=torch.float64)]
    params = [torch.ones(1, dtype=torch.float64)]
    ema_update(shadow, params, 0.999)
    assert shadow[0].item() == pytest.approx(0.001)
    for _ in range(9):
        ema_update(shadow, params, 0.999)
    assert shadow[0].item() == pytest.approx(1 - 0.999**10, rel=1e-12)


def test_trainer_needs_data(vocab):
    with pytest.raises(NoDataError):
        Trainer(micro_config(), [], None, vocab)


def test_accumulated_gradient_is_the_mean(episodes, vocab):
    """Two backward passes accumulate the average of the two micro-batch gradients."""
    trainer = _trainer(episodes, vocab)
    first, second = trainer.next_batch(), trainer.next_batch()

    def grads_for(batch):
        trainer.policy.zero_grad(set_to_none=True)
        trainer.policy.loss(*batch).backward()
        return [p.grad.clone() for p in trainer.params]

    g1, g2 = grads_for(first), grads_for(second)
    trainer.policy.zero_grad(set_to_none=True)
    trainer.backward(*first)
    trainer.backward(*second)
    for p, a, b in zip(trainer.params, g1, g2, strict=True):
        torch.testing.assert_close(p.grad, (a + b) / 2)


def test_accumulated_step_equals_concatenated_batch(episodes, vocab):
    """Two accumulated micro-batches then one update match one update on the concatenated batch."""
    accumulated = _trainer(episodes, vocab)
    single = _trainer(episodes, vocab, train={"accumulation": 1})
    rng = np.random.default_rng(5)
    parts = []
    for _ in range(2):
        items = sample_training_items(episodes, rng, 4, accumulated.stats, vocab, window=2, horizon=4)
        parts.append((items, make_flow_batch(np.stack([it.chunk for it in items]), rng, accumulated.config.flow, dtype=torch.float64)))

    for items, flow in parts:
        accumulated.backward(accumulated.encoder.encode_batch([it.window for it in items]), flow)
    accumulated.apply_update()

    windows = [it.window for items, _ in parts for it in items]
    joined = FlowBatch(
        chunks=torch.cat([f.chunks for _, f in parts]),
        noise=torch.cat([f.noise for _, f in parts]),
        tau=torch.cat([f.tau for _, f in parts]),
    )
    single.backward(single.encoder.encode_batch(windows), joined)
    single.apply_update()

    for a, b in zip(accumulated.params, single.params, strict=True):
        torch.testing.assert_close(a, b, rtol=1e-6, atol=1e-12)


def test_optimizer_steps_follow_accumulation(episodes, vocab):
    """A record is produced on every second iteration with accumulation 2."""
    trainer = _trainer(episodes, vocab)
    records = [trainer.step()[1] for _ in range(4)]
    assert records[0] is None and records[2] is None
    assert isinstance(records[1], StepRecord) and records[1].optimizer_step == 1
    assert records[3].optimizer_step == 2 and records[3].iteration == 4
    assert all(r.clip_scale <= 1.0 for r in (records[1], records[3]))


def test_training_is_deterministic(episodes, vocab):
    """Same seed, same data: identical loss traces."""
    a, b = _trainer(episodes, vocab), _trainer(episodes, vocab)
    assert [a.step()[0] for _ in range(6)] == [b.step()[0] for _ in range(6)]


def test_ema_tracks_parameters(episodes, vocab):
    """After one optimizer step the shadow moved by (1 - decay) towards the parameters."""
    trainer = _trainer(episodes, vocab)
    before = [p.detach().clone() for p in trainer.ema.parameters()]
    trainer.step()
    trainer.step()
    for s, b, p in zip(trainer.ema.parameters(), before, trainer.params, strict=True):
        torch.testing.assert_close(s, 0.999 * b + 0.001 * p.detach())


def test_train_schedule_writes_checkpoints_and_log(episodes, vocab, tmp_path):
    """Six iterations with checkpoints every two: three checkpoints, three log lines."""
    trainer = _trainer(episodes, vocab, out_dir=tmp_path)
    ckpts = list(trainer.train())
    assert [c.iteration for c in ckpts] == [2, 4, 6]
    assert (tmp_path / "checkpoints" / "checkpoint_00000006.safetensors").is_file()
    assert (tmp_path / "checkpoints" / "last.safetensors").is_file()
    lines = (tmp_path / LOG_FILE).read_text().splitlines()
    assert [StepRecord.model_validate_json(line).optimizer_step for line in lines] == [1, 2, 3]


def test_train_yields_final_state_off_schedule(episodes, vocab):
    trainer = _trainer(episodes, vocab, train={"checkpoint_every": 4})
    assert [c.iteration for c in trainer.train(iterations=6)] == [4, 6]


def test_checkpoint_round_trip(episodes, vocab, tmp_path):
    """Tensors, stats, vocab and config survive the safetensors file."""
    trainer = _trainer(episodes, vocab)
    for _ in range(2):
        trainer.step()
    ckpt = trainer.checkpoint()
    loaded = Checkpoint.load(ckpt.save(tmp_path / "ckpt.safetensors"))
    assert loaded.iteration == 2 and loaded.optimizer_step == 1
    assert loaded.config == ckpt.config
    assert loaded.stats == ckpt.stats
    assert loaded.vocab == ckpt.vocab
    for key, value in ckpt.policy_state.items():
        assert torch.equal(loaded.policy_state[key], value)
    for key, value in ckpt.ema_state.items():
        assert torch.equal(loaded.ema_state[key], value)


@pytest.mark.parametrize("warmup", [4, 3])
def test_resume_continues_bit_identically(episodes, vocab, tmp_path, warmup):
    """Losses, step records and weights after resuming from disk equal the uninterrupted run.

    Three warm-up iterations with accumulation 2 leave a half-accumulated gradient in the checkpoint.
    """
    trainer = _trainer(episodes, vocab)
    for _ in range(warmup):
        trainer.step()
    path = trainer.checkpoint().save(tmp_path / "ckpt.safetensors")
    expected = [trainer.step() for _ in range(10)]

    resumed = Trainer.resume(Checkpoint.load(path), episodes)
    assert resumed.iteration == warmup
    actual = [resumed.step() for _ in range(10)]
    assert [loss for loss, _ in actual] == [loss for loss, _ in expected]
    assert [r for _, r in actual] == [r for _, r in expected]
    for a, b in zip(resumed.params, trainer.params, strict=True):
        assert torch.equal(a, b)


def test_checkpoint_keeps_partial_accumulation(episodes, vocab, tmp_path):
    """Mid-window checkpoints carry the gradient sum and the pending loss; boundary ones carry neither."""
    trainer = _trainer(episodes, vocab)
    loss, _ = trainer.step()
    loaded = Checkpoint.load(trainer.checkpoint().save(tmp_path / "mid.safetensors"))
    assert loaded.pending_losses == [loss]
    grads = dict(trainer.policy.named_parameters())
    assert loaded.accum_grads
    for name, value in loaded.accum_grads.items():
        assert torch.equal(value, grads[name].grad)

    trainer.step()
    boundary = trainer.checkpoint()
    assert boundary.accum_grads == {} and boundary.pending_losses == []


def test_checkpoint_load_errors(tmp_path):
    with pytest.raises(CheckpointError, match="does not exist"):
        Checkpoint.load(tmp_path / "missing.safetensors")
    bad = tmp_path / "bad.safetensors"
    bad.write_bytes(b"this is not a checkpoint at all")
    with pytest.raises(CheckpointError):
        Checkpoint.load(bad)


def test_runner_predicts_normalized_chunk(episodes, vocab):
    """The EMA runner emits an (H, 14) chunk inside [-1, 1]."""
    trainer = _trainer(episodes, vocab)
    trainer.step()
    trainer.step()
    runner = trainer.checkpoint().runner(use_ema=True)
    frames = np.stack([episodes[0].frame(0)] * 3)
    chunk = runner.predict(ObservationWindow(frames=frames, prompt_ids=[2, 3]), np.random.default_rng(0))
    assert chunk.shape == (4, 14)
    assert np.all(np.abs(chunk) <= 1.0)
    assert runner.horizon == 4


@pytest.mark.slow
def test_micro_overfit(episodes, vocab):
    """Two fixed training items with fixed noise and flow times are memorised: final loss below 1e-3 after 2k steps."""
    trainer = _trainer(episodes, vocab, train={"lr": 1e-3, "accumulation": 1})
    rng = np.random.default_rng(0)
    items = sample_training_items(episodes, rng, 2, trainer.stats, vocab, window=2, horizon=4)
    batch = trainer.encoder.encode_batch([it.window for it in items])
    flow = make_flow_batch(np.stack([it.chunk for it in items]), rng, trainer.config.flow, dtype=torch.float64)
    first = trainer.policy.loss(batch, flow).item()
    for _ in range(2000):
        trainer.backward(batch, flow)
        trainer.apply_update()
    with torch.no_grad():
        final = trainer.policy.loss(batch, flow).item()
    assert final < 1e-3
    assert final < first
