import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vuga.aff import AFF, SDA, upsample2x


def _zero_biases(module):
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()


def test_sda_with_gate_forced_to_ones():
    torch.manual_seed(0)
    sda = SDA(8)
    sda.gate.register_forward_hook(lambda m, i, o: torch.ones_like(o))
    f = torch.randn(2, 8, 6, 6)
    expected = sda.proj_out(sda.proj_in(f)) + f
    assert torch.allclose(sda(f), expected, atol=1e-6)


def test_sda_zero_input_without_biases_is_zero():
    sda = SDA(8)
    _zero_biases(sda)
    assert torch.equal(sda(torch.zeros(1, 8, 5, 5)), torch.zeros(1, 8, 5, 5))


def test_sda_preserves_shape_at_stride4():
    sda = SDA(512)
    with torch.no_grad():
        out = sda(torch.randn(1, 512, 56, 56))
    assert out.shape == (1, 512, 56, 56)


def test_sda_rejects_width_mismatch():
    with pytest.raises(ValueError):
        SDA(8)(torch.randn(1, 4, 6, 6))


def test_aff_output_shape_at_224():
    torch.manual_seed(0)
    aff = AFF(512)
    maps = [torch.randn(1, 512, s, s) for s in (56, 28, 14, 7)]
    with torch.no_grad():
        assert aff(*maps).shape == (1, 512, 56, 56)


def test_aff_zero_maps_without_biases():
    aff = AFF(8)
    _zero_biases(aff)
    maps = [torch.zeros(1, 8, s, s) for s in (16, 8, 4, 2)]
    assert torch.equal(aff(*maps), torch.zeros(1, 8, 16, 16))


def test_aff_sda_blocks_do_not_share_weights():
    aff = AFF(8)
    blocks = [aff.sda43, aff.sda234, aff.sda_out]
    ptrs = [{p.data_ptr() for p in b.parameters()} for b in blocks]
    assert not (ptrs[0] & ptrs[1]) and not (ptrs[1] & ptrs[2]) and not (ptrs[0] & ptrs[2])
    w = [b.proj_in.weight for b in blocks]
    assert not torch.equal(w[0], w[1]) and not torch.equal(w[1], w[2])


def test_aff_without_sda_is_plain_top_down_sum():
    aff = AFF(8, use_sda=False)
    assert sum(p.numel() for p in aff.parameters()) == 0
    f1, f2, f3, f4 = (torch.randn(1, 8, s, s) for s in (16, 8, 4, 2))
    expected = f1 + upsample2x(f2 + upsample2x(f3 + upsample2x(f4)))
    assert torch.allclose(aff(f1, f2, f3, f4), expected, atol=1e-6)


def test_aff_rejects_non_halving_maps():
    aff = AFF(8, use_sda=False)
    with pytest.raises(ValueError):
        aff(*(torch.randn(1, 8, s, s) for s in (16, 8, 5, 2)))


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-100, 100), h=st.integers(1, 8), w=st.integers(1, 8))
def test_upsample_preserves_constants(c, h, w):
    out = upsample2x(torch.full((1, 2, h, w), c, dtype=torch.float64))
    assert out.shape == (1, 2, 2 * h, 2 * w)
    assert (out - c).abs().max() <= 1e-6 * max(1.0, abs(c))


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_upsample_is_linear(a, b, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(1, 3, 4, 5, generator=g, dtype=torch.float64)
    y = torch.randn(1, 3, 4, 5, generator=g, dtype=torch.float64)
    lhs = upsample2x(a * x + b * y)
    rhs = a * upsample2x(x) + b * upsample2x(y)
    assert (lhs - rhs).abs().max() <= 1e-6
