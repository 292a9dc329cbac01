"""Test the shared layers, GatedRMS and the vision-language adapter."""

import math

import pytest
import torch

from labflow.adapter import Adapter, gated_rms
from labflow.encoders import TokenMeta, TokenSequence
from labflow.errors import EmptyPromptError, ShapeError
from labflow.layers import MultiHeadAttention, flow_time_features, leaky_gelu, sincos_2d, sinusoidal_positions
from labflow.models import ModelConfig

MODEL = ModelConfig(embed_dim=16, ff_dim=32, num_heads=2, adapter_blocks=2, expert_blocks=2, horizon=4, tau_embed_dim=8)


def _gen(seed: int = 0) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def test_leaky_gelu_negative_slope():
    """Far on the negative side the activation is 0.01 * x."""
    x = torch.tensor([-50.0, 0.0, 3.0], dtype=torch.float64)
    y = leaky_gelu(x)
    assert y[0].item() == pytest.approx(-0.5)
    assert y[1].item() == 0.0
    assert y[2].item() == pytest.approx(3.0, abs=1e-2)


def test_sinusoidal_positions():
    """Position 0 is (0, 1, 0, 1, ...)."""
    table = sinusoidal_positions(5, 6, dtype=torch.float64)
    assert table.shape == (5, 6)
    assert table[0].tolist() == [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
    with pytest.raises(ValueError):
        sinusoidal_positions(3, 5)


def test_sincos_2d_splits_row_and_column():
    """Patches sharing a row share the first half of their encoding."""
    table = sincos_2d(3, 8, dtype=torch.float64)
    assert table.shape == (9, 8)
    assert torch.equal(table[0, :4], table[2, :4])
    assert torch.equal(table[0, 4:], table[3, 4:])
    assert not torch.equal(table[0], table[4])


def test_flow_time_features_at_zero():
    """At tau=0 the features alternate sin=0 and cos=1."""
    feats = flow_time_features(torch.zeros(2, dtype=torch.float64), 8)
    assert feats.shape == (2, 8)
    assert feats[0].tolist() == [0.0, 1.0] * 4


def test_attention_ignores_masked_keys():
    """A padded key has no influence on the output."""
    attn = MultiHeadAttention(8, 2).double()
    x = torch.randn(1, 3, 8, generator=_gen(), dtype=torch.float64)
    y = x.clone()
    y[0, 2] = 100.0
    mask = torch.tensor([[True, True, False]])
    torch.testing.assert_close(attn(x, key_mask=mask)[:, :2], attn(y, key_mask=mask)[:, :2])


def test_gated_rms_hand_computation():
    """x=(3,4), gamma=1, open gate: y = x / 3.5355."""
    x = torch.tensor([3.0, 4.0], dtype=torch.float64)
    y = gated_rms(x, torch.ones(2, dtype=torch.float64), torch.full((2,), 50.0, dtype=torch.float64))
    assert y.tolist() == pytest.approx([0.8485, 1.1314], abs=1e-4)
    assert math.sqrt(12.5) == pytest.approx(3.5355, abs=1e-4)


def test_gated_rms_half_gate_and_zero():
    """gate=0 halves the output; x=0 maps to 0."""
    x = torch.tensor([3.0, 4.0], dtype=torch.float64)
    gamma = torch.ones(2, dtype=torch.float64)
    open_gate = gated_rms(x, gamma, torch.full((2,), 50.0, dtype=torch.float64))
    torch.testing.assert_close(gated_rms(x, gamma, torch.zeros(2, dtype=torch.float64)), open_gate / 2)
    assert gated_rms(torch.zeros(2), torch.ones(2), torch.zeros(2)).tolist() == [0.0, 0.0]


def test_adapter_output_shape():
    """L text tokens plus N image tokens give L + N conditioned tokens of width E."""
    adapter = Adapter(MODEL, image_dim=12, text_dim=8)
    text = torch.randn(2, 5, 8, generator=_gen(1))
    image = torch.randn(2, 36, 12, generator=_gen(2))
    cond, mask = adapter(text, image)
    assert cond.shape == (2, 41, 16)
    assert mask.shape == (2, 41) and mask.all()


def test_adapter_without_image_tokens():
    """With the flag off only the text positions condition the expert."""
    cfg = MODEL.model_copy(update={"condition_includes_image_tokens": False})
    adapter = Adapter(cfg, image_dim=12, text_dim=8)
    cond, _ = adapter(torch.randn(1, 5, 8, generator=_gen(1)), torch.randn(1, 36, 12, generator=_gen(2)))
    assert cond.shape == (1, 5, 16)


def test_adapter_blocks_are_identity_at_init():
    """Zero-initialised output projections make every block a residual identity."""
    adapter = Adapter(MODEL, image_dim=12, text_dim=8).double()
    text = torch.randn(1, 5, 8, generator=_gen(3), dtype=torch.float64)
    image = torch.randn(1, 36, 12, generator=_gen(4), dtype=torch.float64)
    cond, _ = adapter(text, image)
    expected = adapter.txt_norm(adapter.txt_projection(text))
    torch.testing.assert_close(cond[:, :5], expected)


def test_adapter_condition_single_observation():
    """The single-observation form carries provenance for text then image tokens."""
    adapter = Adapter(MODEL, image_dim=12, text_dim=8)
    text = TokenSequence(torch.randn(3, 8, generator=_gen(5)), TokenMeta.for_text(3))
    image = TokenSequence(torch.randn(4, 12, generator=_gen(6)), TokenMeta.for_patches(2))
    out = adapter.condition(text, image)
    assert out.tokens.shape == (7, 16)
    assert (out.num_text, out.num_image) == (3, 4)
    assert len(out.meta) == 7


def test_adapter_rejects_empty_prompt():
    adapter = Adapter(MODEL, image_dim=12, text_dim=8)
    with pytest.raises(EmptyPromptError, match="empty prompt"):
        adapter(torch.zeros(1, 0, 8), torch.zeros(1, 4, 12))


def test_adapter_rejects_wrong_width():
    adapter = Adapter(MODEL, image_dim=12, text_dim=8)
    with pytest.raises(ShapeError):
        adapter(torch.zeros(1, 2, 8), torch.zeros(1, 4, 10))


def test_adapter_gradients_match_finite_differences():
    """E=16, two blocks, L=3, N=8: autograd agrees with central differences at 64-bit."""
    adapter = Adapter(MODEL, image_dim=12, text_dim=8).double()
    gen = _gen(7)
    with torch.no_grad():
        for p in adapter.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.2)
    text = torch.randn(2, 3, 8, generator=_gen(8), dtype=torch.float64)
    image = torch.randn(2, 8, 12, generator=_gen(9), dtype=torch.float64)

    def loss() -> torch.Tensor:
        return adapter(text, image)[0].pow(2).mean()

    adapter.zero_grad()
    loss().backward()
    params = [p for p in adapter.parameters() if p.grad is not None]
    eps = 1e-5
    for _ in range(8):
        p = params[int(torch.randint(len(params), (1,), generator=gen))]
        flat = p.data.view(-1)
        i = int(torch.randint(flat.numel(), (1,), generator=gen))
        analytic = p.grad.view(-1)[i].item()
        with torch.no_grad():
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss().item()
            flat[i] = orig - eps
            down = loss().item()
            flat[i] = orig
        assert analytic == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-8)
