import pytest
import torch

from vuga.backbone import BackboneSpec, FeaturePyramid, FrozenBackbone, WeightsError, extract_pyramid, parameter_checksum


def test_swin_pyramid_224(swin_backbone):
    pyr = extract_pyramid(torch.randn(3, 224, 224), swin_backbone)
    assert [tuple(f.shape) for f in pyr] == [(96, 56, 56), (192, 28, 28), (384, 14, 14), (768, 7, 7)]
    assert pyr.channels == (96, 192, 384, 768)


def test_rejects_non_multiple_of_32(swin_backbone):
    with pytest.raises(ValueError, match="divisible by 32"):
        extract_pyramid(torch.randn(3, 100, 100), swin_backbone)


def test_frozen_and_eval(swin_backbone):
    assert all(not p.requires_grad for p in swin_backbone.parameters())
    swin_backbone.train()
    assert not swin_backbone.trunk.training


def test_deterministic_forward(swin_backbone):
    x = torch.randn(1, 3, 64, 64)
    a, b = swin_backbone(x), swin_backbone(x)
    assert all(torch.equal(u, v) for u, v in zip(a, b))


def test_random_source_is_seeded():
    spec = BackboneSpec("convpyramid", (4, 8, 16, 32), "random:3")
    assert FrozenBackbone(spec).checksum == FrozenBackbone(spec).checksum
    other = BackboneSpec("convpyramid", (4, 8, 16, 32), "random:4")
    assert FrozenBackbone(other).checksum != FrozenBackbone(spec).checksum


def test_file_source_round_trip(tmp_path):
    spec = BackboneSpec("convpyramid", (4, 8, 16, 32), "random:3")
    bb = FrozenBackbone(spec)
    torch.save(bb.trunk.state_dict(), tmp_path / "w.pth")
    loaded = FrozenBackbone(BackboneSpec("convpyramid", (4, 8, 16, 32), f"file:{tmp_path / 'w.pth'}"))
    assert loaded.checksum == bb.checksum


def test_missing_weights():
    with pytest.raises(WeightsError):
        FrozenBackbone(BackboneSpec("convpyramid", (4, 8, 16, 32), "file:/nonexistent/w.pth"))


def test_declared_channels_checked():
    with pytest.raises(WeightsError, match="channels"):
        FrozenBackbone(BackboneSpec("swin_v2_t", (64, 128, 256, 512), "random:0"))


def test_pyramid_requires_halving():
    with pytest.raises(ValueError):
        FeaturePyramid([torch.zeros(1, 4, 8, 8), torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 3, 3), torch.zeros(1, 4, 1, 1)])


def test_checksum_tracks_values():
    spec = BackboneSpec("convpyramid", (4, 8, 16, 32), "random:0")
    bb = FrozenBackbone(spec)
    before = parameter_checksum(bb)
    with torch.no_grad():
        next(bb.parameters()).add_(1.0)
    assert parameter_checksum(bb) != before


@pytest.mark.slow
def test_swin_pyramid_1024(swin_backbone):
    with torch.no_grad():
        pyr = swin_backbone(torch.randn(1, 3, 1024, 1024))
    assert [tuple(f.shape[1:]) for f in pyr] == [(96, 256, 256), (192, 128, 128), (384, 64, 64), (768, 32, 32)]
