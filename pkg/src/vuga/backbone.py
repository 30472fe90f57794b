"""Frozen four-stage hierarchical backbone exposing a stride 4/8/16/32 pyramid."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .layers import LayerNorm2d

logger = logging.getLogger(__name__)

STAGE_STRIDES = (4, 8, 16, 32)
SWIN_V2_T_CHANNELS = (96, 192, 384, 768)


class WeightsError(RuntimeError):
    """Pretrained weights could not be located or do not fit the architecture."""


@dataclass(frozen=True)
class BackboneSpec:
    """``pretrained_source`` forms:

    * ``torchvision:swin_v2_t`` -- ImageNet-1k SwinV2-T weights from the torch hub cache
    * ``file:<path>`` -- a state dict for the selected architecture
    * ``random:<seed>`` -- seeded random init, for tests and desk-scale runs
    """

    arch: str = "swin_v2_t"
    stage_channels: tuple = SWIN_V2_T_CHANNELS
    pretrained_source: str = "torchvision:swin_v2_t"
    frozen: bool = True
    stage_strides: tuple = STAGE_STRIDES

    def __post_init__(self):
        if len(self.stage_channels) != 4 or any(c <= 0 for c in self.stage_channels):
            raise ValueError(f"need four positive stage channel counts, got {self.stage_channels}")
        if tuple(self.stage_strides) != STAGE_STRIDES:
            raise ValueError(f"stage strides are fixed to {STAGE_STRIDES}")


class FeaturePyramid(tuple):
    """Four channels-first maps ``(F1, F2, F3, F4)`` at strides 4, 8, 16, 32."""

    def __new__(cls, stages):
        stages = tuple(stages)
        if len(stages) != 4:
            raise ValueError(f"a pyramid has exactly 4 stages, got {len(stages)}")
        for a, b in zip(stages, stages[1:]):
            if a.shape[-2] != 2 * b.shape[-2] or a.shape[-1] != 2 * b.shape[-1]:
                raise ValueError(f"spatial dims must halve between stages: {tuple(a.shape)} -> {tuple(b.shape)}")
        return super().__new__(cls, stages)

    @property
    def channels(self):
        return tuple(f.shape[-3] for f in self)

    def detach(self):
        return FeaturePyramid(f.detach() for f in self)


class SwinV2Stages(nn.Module):
    """torchvision ``swin_v2_t`` trunk with per-stage taps (NHWC -> NCHW)."""

    taps = (1, 3, 5, 7)

    def __init__(self):
        super().__init__()
        from torchvision.models import swin_v2_t

        self.features = swin_v2_t().features

    def forward(self, x):
        out = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.taps:
                out.append(x.permute(0, 3, 1, 2).contiguous())
        return out

    def load_pretrained(self, state_dict):
        # accept full classifier checkpoints as well as trunk-only dicts
        trunk = {k: v for k, v in state_dict.items() if k.startswith("features.")}
        missing, _ = self.load_state_dict(trunk, strict=False)
        if missing:
            raise WeightsError(f"weights missing {len(missing)} trunk tensors, e.g. {missing[0]}")


class ConvPyramid(nn.Module):
    """Small convolutional four-stage trunk for miniature models and tests."""

    def __init__(self, channels):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.stem = nn.Sequential(nn.Conv2d(3, c1, 4, stride=4), LayerNorm2d(c1))
        self.stages = nn.ModuleList(
            nn.Sequential(nn.Conv2d(cin, cout, 2, stride=2), nn.GELU(), nn.Conv2d(cout, cout, 3, padding=1))
            for cin, cout in ((c1, c2), (c2, c3), (c3, c4))
        )

    def forward(self, x):
        x = self.stem(x)
        out = [x]
        for stage in self.stages:
            x = stage(x)
            out.append(x)
        return out

    def load_pretrained(self, state_dict):
        self.load_state_dict(state_dict)


ARCHS = {"swin_v2_t": lambda spec: SwinV2Stages(), "convpyramid": lambda spec: ConvPyramid(spec.stage_channels)}


def _load_weights(trunk, spec: BackboneSpec):
    kind, _, arg = spec.pretrained_source.partition(":")
    if kind == "random":
        return
    if kind == "torchvision":
        if spec.arch != "swin_v2_t" or arg != "swin_v2_t":
            raise WeightsError(f"torchvision weights only available for swin_v2_t, not {spec.pretrained_source}")
        from torchvision.models import Swin_V2_T_Weights

        url = Swin_V2_T_Weights.IMAGENET1K_V1.url
        cached = Path(torch.hub.get_dir()) / "checkpoints" / Path(url).name
        try:
            state = torch.hub.load_state_dict_from_url(url, map_location="cpu", progress=False)
        except Exception as exc:  # network or cache failure
            raise WeightsError(f"cannot load {spec.pretrained_source} (expected cache file {cached}): {exc}") from exc
    elif kind == "file":
        path = Path(arg)
        if not path.is_file():
            raise WeightsError(f"weights file {path} not found")
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "model" in state and isinstance(state["model"], dict):
            state = state["model"]
    else:
        raise WeightsError(f"unknown pretrained_source {spec.pretrained_source!r}")
    trunk.load_pretrained(state)


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class FrozenBackbone(nn.Module):
    """Holds the trunk in eval mode with ``requires_grad=False`` everywhere."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        if spec.arch not in ARCHS:
            raise ValueError(f"unknown backbone arch {spec.arch!r}; choose from {sorted(ARCHS)}")
        self.spec = spec
        kind, _, arg = spec.pretrained_source.partition(":")
        if kind == "random":
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(int(arg or 0))
                self.trunk = ARCHS[spec.arch](spec)
        else:
            self.trunk = ARCHS[spec.arch](spec)
        _load_weights(self.trunk, spec)
        if spec.frozen:
            for p in self.trunk.parameters():
                p.requires_grad_(False)
        self.trunk.eval()
        self._verify_channels()
        self.checksum = parameter_checksum(self.trunk)
        logger.info("backbone %s from %s, checksum %s", spec.arch, spec.pretrained_source, self.checksum[:16])

    def _verify_channels(self):
        with torch.no_grad():
            got = tuple(f.shape[1] for f in self.trunk(torch.zeros(1, 3, 32, 32)))
        if got != tuple(self.spec.stage_channels):
            raise WeightsError(f"backbone produces channels {got}, config declares {tuple(self.spec.stage_channels)}")

    def train(self, mode: bool = True):
        super().train(mode)
        if self.spec.frozen:
            self.trunk.eval()
        return self

    def forward(self, x) -> FeaturePyramid:
        r_h, r_w = x.shape[-2:]
        if r_h % 32 or r_w % 32:
            raise ValueError(f"input size {r_h}x{r_w} is not divisible by 32")
        # contiguous NCHW so downstream ops see the same layout as cached features
        if self.spec.frozen:
            with torch.no_grad():
                return FeaturePyramid(f.contiguous() for f in self.trunk(x))
        return FeaturePyramid(f.contiguous() for f in self.trunk(x))


def extract_pyramid(x, backbone: FrozenBackbone) -> FeaturePyramid:
    """Batch-aware wrapper; a single ``3 x R x R`` tensor gets a batch dim added and removed."""
    single = x.dim() == 3
    pyramid = backbone(x[None] if single else x)
    return FeaturePyramid(f[0] for f in pyramid) if single else pyramid
