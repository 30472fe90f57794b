import math

import pytest
import torch

from vuga.model import ModelConfig, build_model, miniature_config


def test_end_to_end_finite_scalar(swin_cfg, swin_backbone):
    model = build_model(swin_cfg, seed=0, backbone=swin_backbone).eval()
    with torch.no_grad():
        out = model(torch.randn(2, 3, 224, 224))
    assert out.shape == (2,)
    assert torch.isfinite(out).all()


def test_gradients_reach_every_head_group(tiny_cfg):
    model = build_model(tiny_cfg, seed=0)
    model.train()
    model(torch.randn(2, 3, 64, 64)).sum().backward()
    for group in ("cmp", "aff", "cae", "regressor"):
        params = [p for n, p in model.named_parameters() if n.startswith(group + ".")]
        assert params
        assert all(p.grad is not None for p in params), group
        assert sum(p.grad.abs().sum().item() for p in params) > 0, group
    assert all(p.grad is None for p in model.backbone.parameters())


@pytest.mark.parametrize("flag", ["ablate_cmp", "ablate_sda", "ablate_cae"])
def test_ablations_reduce_parameters(tiny_cfg, flag):
    full = build_model(tiny_cfg, seed=0).num_trainable()
    ablated_cfg = ModelConfig.from_dict({**tiny_cfg.to_dict(), flag: True})
    ablated = build_model(ablated_cfg, seed=0)
    assert ablated.num_trainable() < full
    assert ablated(torch.randn(1, 3, 64, 64)).shape == (1,)


def test_no_cae_skips_module(tiny_cfg):
    model = build_model(ModelConfig.from_dict({**tiny_cfg.to_dict(), "ablate_cae": True}), seed=0)
    assert model.cae is None
    assert not any(n.startswith("cae.") for n, _ in model.named_parameters())


def test_seeded_build_is_reproducible(tiny_cfg):
    a = build_model(tiny_cfg, seed=3).head_state_dict()
    b = build_model(tiny_cfg, seed=3).head_state_dict()
    c = build_model(tiny_cfg, seed=4).head_state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_head_state_excludes_backbone(mini_model):
    assert not any(k.startswith("backbone.") for k in mini_model.head_state_dict())
    assert all(not p.requires_grad for p in mini_model.backbone.parameters())


def test_config_round_trip_and_validation():
    cfg = miniature_config(ablate_sda=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ModelConfig(resolution=100)
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.5)


def test_input_resolution_must_divide_by_32(mini_model):
    with pytest.raises(ValueError):
        mini_model(torch.randn(1, 3, 48, 48))


def test_miniature_model_output(mini_model):
    out = mini_model(torch.randn(3, 3, 32, 32))
    assert out.shape == (3,)
    assert all(math.isfinite(v) for v in out.tolist())
