"""Full quality model: frozen backbone -> per-stage CMP -> AFF, plus CAE on F4, regressor."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .aff import AFF
from .backbone import SWIN_V2_T_CHANNELS, BackboneSpec, FeaturePyramid, FrozenBackbone
from .cmp import CMP, CmpStageConfig
from .head import CAE, CaeConfig, Regressor, RegressorConfig, pool_and_concat
from .layers import conv1x1


@dataclass(frozen=True)
class ModelConfig:
    resolution: int = 224
    backbone: str = "swin_v2_t"
    stage_channels: tuple = SWIN_V2_T_CHANNELS
    pretrained_source: str = "torchvision:swin_v2_t"
    fusion_channels: int = 512
    ablate_cmp: bool = False
    ablate_sda: bool = False
    ablate_cae: bool = False
    dropout: float = 0.1
    regressor_hidden: int = 256
    cae_expansion: int = 2
    modulated: bool = True

    def __post_init__(self):
        if self.resolution < 32 or self.resolution % 32:
            raise ValueError(f"resolution must be a positive multiple of 32, got {self.resolution}")
        if self.fusion_channels < 1 or self.regressor_hidden < 1:
            raise ValueError("fusion_channels and regressor_hidden must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(self.backbone, tuple(self.stage_channels), self.pretrained_source)

    def to_dict(self):
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "stage_channels" in d:
            d["stage_channels"] = tuple(d["stage_channels"])
        return cls(**d)


class VUGA(nn.Module):
    def __init__(self, cfg: ModelConfig, backbone: FrozenBackbone | None = None):
        super().__init__()
        self.cfg = cfg
        self.backbone = backbone if backbone is not None else FrozenBackbone(cfg.backbone_spec)
        channels = tuple(cfg.stage_channels)
        width = cfg.fusion_channels
        if cfg.ablate_cmp:
            self.cmp = nn.ModuleList(conv1x1(c, width) for c in channels)
        else:
            self.cmp = nn.ModuleList(
                CMP(CmpStageConfig(c, fusion_channels=width, modulated=cfg.modulated)) for c in channels)
        self.aff = AFF(width, use_sda=not cfg.ablate_sda, modulated=cfg.modulated)
        self.cae = None if cfg.ablate_cae else CAE(CaeConfig(channels[3], cfg.cae_expansion, cfg.dropout))
        self.regressor = Regressor(RegressorConfig(width + channels[3], cfg.regressor_hidden))

    def head(self, pyramid) -> torch.Tensor:
        """Score from precomputed backbone features (``B x C_i x H_i x W_i`` each)."""
        f1, f2, f3, f4 = pyramid
        fused = self.aff(*(m(f) for m, f in zip(self.cmp, pyramid)))
        f_cae = self.cae(f4) if self.cae is not None else f4
        return self.regressor(pool_and_concat(f_cae, fused))

    def forward(self, x) -> torch.Tensor:
        return self.head(self.backbone(x))

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def num_trainable(self) -> int:
        return sum(p.numel() for p in self.trainable_parameters())

    def head_state_dict(self):
        return {k: v for k, v in self.state_dict().items() if not k.startswith("backbone.")}


def build_model(cfg: ModelConfig, seed: int | None = None, backbone: FrozenBackbone | None = None) -> VUGA:
    """Construct the model; ``seed`` fixes the head initialisation."""
    if seed is None:
        return VUGA(cfg, backbone)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return VUGA(cfg, backbone)


def miniature_config(**overrides) -> ModelConfig:
    """Tiny conv-trunk configuration (4-channel stages) used for gradient checks."""
    base = dict(resolution=32, backbone="convpyramid", stage_channels=(4, 4, 4, 4),
                pretrained_source="random:0", fusion_channels=8, regressor_hidden=8, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)
