import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from vuga.cmp import CMP, AdaptiveNorm, CmpStageConfig, GlobalBranch, LocalBranch, MultiScaleDW, channel_attention
from vuga.layers import LayerNorm2d


def brute_force_attention(q, k, v):
    """Loop-level channel attention on a single ``C x N`` sample."""
    c = q.shape[0]
    qn = [[x / math.sqrt(sum(y * y for y in row)) for x in row] for row in q.tolist()]
    kn = [[x / math.sqrt(sum(y * y for y in row)) for x in row] for row in k.tolist()]
    logits = [[sum(a * b for a, b in zip(qn[i], kn[j])) / math.sqrt(c) for j in range(c)] for i in range(c)]
    attn = []
    for row in logits:
        exps = [math.exp(x) for x in row]
        attn.append([e / sum(exps) for e in exps])
    vv = v.tolist()
    out = [[sum(attn[i][j] * vv[j][n] for j in range(c)) for n in range(len(vv[0]))] for i in range(c)]
    return np.array(out), np.array(attn), np.array(logits)


def test_attention_matches_brute_force_toy():
    g = torch.Generator().manual_seed(0)
    q = torch.randn(1, 4, 4, generator=g, dtype=torch.float64)  # 4 channels, 2x2 positions
    q[0, 0] *= 100
    k = q.clone()
    v = torch.randn(1, 4, 4, generator=g, dtype=torch.float64)
    out, attn = channel_attention(q, k, v)
    ref_out, ref_attn, logits = brute_force_attention(q[0], k[0], v[0])
    assert np.allclose(attn[0].numpy(), ref_attn, atol=1e-12)
    assert np.allclose(out[0].numpy(), ref_out, atol=1e-12)
    # unit-norm rows keep every logit within 1/sqrt(d)
    assert logits.max() <= 1 / math.sqrt(4) + 1e-12


def test_attention_rows_are_stochastic():
    torch.manual_seed(0)
    branch = LocalBranch(96, 512)
    _, attn = branch.attention(torch.randn(2, 96, 14, 14))
    assert attn.shape == (2, 96, 96)
    assert (attn.sum(-1) - 1).abs().max() <= 1e-5
    assert (attn >= 0).all()


def test_local_branch_width():
    out = LocalBranch(768, 512)(torch.randn(1, 768, 7, 7))
    assert out.shape == (1, 512, 7, 7)


def test_local_branch_empty_input():
    with pytest.raises(ValueError):
        LocalBranch(4, 8).attention(torch.zeros(1, 4, 0, 3))


def test_adaptive_norm_constant_input_by_hand():
    norm = AdaptiveNorm(2, eps=1e-5).double()
    with torch.no_grad():
        norm.lam.copy_(torch.tensor([1.7, -0.4]))
        norm.beta.copy_(torch.tensor([0.3, -1.2]))
        norm.p.copy_(torch.tensor([2.0, 0.5]))
        norm.p_x.copy_(torch.tensor([-1.0, 3.0]))
    c = torch.tensor([0.8, -2.5], dtype=torch.float64)
    d = c.view(1, 2, 1, 1).expand(1, 2, 2, 2).clone()
    out = norm(d)
    # variance is zero, so the lambda term vanishes: beta * P + c * P_x
    expected = [0.3 * 2.0 + 0.8 * -1.0, -1.2 * 0.5 + -2.5 * 3.0]
    for ch in range(2):
        assert (out[0, ch] - expected[ch]).abs().max() < 1e-4


def test_adaptive_norm_statistics_are_spatial_per_channel():
    norm = AdaptiveNorm(3).double()
    with torch.no_grad():
        norm.p_x.zero_()
    d = torch.randn(2, 3, 5, 6, dtype=torch.float64)
    out = norm(d)
    mu = d.mean(dim=(2, 3), keepdim=True)
    var = ((d - mu) ** 2).mean(dim=(2, 3), keepdim=True)
    assert torch.allclose(out, (d - mu) / torch.sqrt(var + 1e-5), atol=1e-12)


def test_multiscale_is_exact_mean_of_branches():
    torch.manual_seed(0)
    ms = MultiScaleDW(24)
    captured = []
    hooks = [b.register_forward_hook(lambda m, i, o: captured.append(o)) for b in ms.branches]
    x = torch.randn(2, 24, 56, 56)
    y = ms(x)
    for h in hooks:
        h.remove()
    assert [b.kernel_size for b in ms.branches] == [(5, 5), (7, 7), (9, 9)]
    assert torch.equal(y, (captured[0] + captured[1] + captured[2]) / 3)


def test_identical_branches_average_to_one_branch():
    ms = MultiScaleDW(4, kernels=(5, 5, 5))
    with torch.no_grad():
        for b in ms.branches[1:]:
            b.weight.copy_(ms.branches[0].weight)
            b.bias.copy_(ms.branches[0].bias)
    x = torch.randn(1, 4, 9, 9)
    assert torch.allclose(ms(x), ms.branches[0](x), atol=1e-6)


def test_global_branch_shapes():
    g = GlobalBranch(96, 512)
    seen = {}
    g.reduce.register_forward_hook(lambda m, i, o: seen.update(r=o.shape))
    out = g(torch.randn(1, 96, 56, 56))
    assert seen["r"] == (1, 24, 56, 56)
    assert out.shape == (1, 512, 56, 56)


def test_config_validation():
    with pytest.raises(ValueError):
        CmpStageConfig(in_channels=10)
    with pytest.raises(ValueError):
        CmpStageConfig(in_channels=8, multiscale_kernels=(4, 7, 9))
    with pytest.raises(ValueError):
        GlobalBranch(10, 8)


def test_refine_matches_plain_conv_path_at_init():
    torch.manual_seed(0)
    cmp = CMP(CmpStageConfig(96))
    x = torch.randn(1, 96, 56, 56)
    d = cmp.refine(x)
    conv = F.conv2d(x, cmp.refine.dcn.weight, cmp.refine.dcn.bias, padding=1)
    assert d.shape == x.shape
    assert (d - F.gelu(cmp.refine.norm(conv))).abs().max() <= 1e-5


def test_zeroed_global_branch_leaves_local():
    torch.manual_seed(0)
    cmp = CMP(CmpStageConfig(8, fusion_channels=16))
    cmp.glob.register_forward_hook(lambda m, i, o: torch.zeros_like(o))
    x = torch.randn(2, 8, 6, 6)
    assert torch.equal(cmp(x), cmp.local(cmp.refine(x)))


def test_cmp_stage_shapes_at_224(swin_backbone):
    pyr = swin_backbone(torch.randn(1, 3, 224, 224))
    for f, c in zip(pyr, (96, 192, 384, 768)):
        out = CMP(CmpStageConfig(c))(f)
        assert out.shape == (1, 512, f.shape[-2], f.shape[-1])
    assert [f.shape[-1] for f in pyr] == [56, 28, 14, 7]


def test_finite_difference_gradient_dcn_weight():
    torch.manual_seed(0)
    cmp = CMP(CmpStageConfig(4, fusion_channels=8)).double()
    x = torch.randn(2, 4, 6, 6, dtype=torch.float64)
    weight = cmp.refine.dcn.weight
    cmp(x).sum().backward()
    h = 1e-3
    for idx in [(0, 0, 1, 1), (2, 3, 0, 2), (3, 1, 2, 0)]:
        with torch.no_grad():
            weight[idx] += h
            up = cmp(x).sum().item()
            weight[idx] -= 2 * h
            down = cmp(x).sum().item()
            weight[idx] += h
        fd = (up - down) / (2 * h)
        ad = weight.grad[idx].item()
        assert abs(fd - ad) <= 1e-3 * max(abs(fd), abs(ad), 1e-8)


def test_every_cmp_parameter_gets_gradient():
    torch.manual_seed(0)
    cmp = CMP(CmpStageConfig(8, fusion_channels=16))
    cmp(torch.randn(2, 8, 8, 8)).pow(2).sum().backward()
    dead = [n for n, p in cmp.named_parameters() if p.grad is None or p.grad.abs().sum() == 0]
    assert not dead


def test_layernorm2d_is_per_pixel_channel_norm():
    ln = LayerNorm2d(5)
    x = torch.randn(2, 5, 3, 4)
    ref = torch.nn.functional.layer_norm(x.permute(0, 2, 3, 1), (5,)).permute(0, 3, 1, 2)
    assert torch.allclose(ln(x), ref, atol=1e-6)
