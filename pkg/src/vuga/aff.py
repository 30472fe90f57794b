"""Top-down fusion of the CMP outputs with spatial distortion-aware gating."""

from __future__ import annotations

import torch.nn as nn
import torch.nn.functional as F

from .dcn import DeformConv2d
from .layers import conv1x1, dwconv


def upsample2x(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class SDA(nn.Module):
    """Spatial gating: F' = 1x1(F); U = DCN(DW3x3(F')); out = 1x1(1x1(U) * F') + F.

    The gating DCN is depthwise so the gate keeps the full width at stride-4
    resolution without a dense 3x3 over all channels.
    """

    def __init__(self, channels=512, dw_kernel=3, dcn_kernel=3, modulated=True):
        super().__init__()
        self.channels = channels
        self.proj_in = conv1x1(channels, channels)
        self.dw = dwconv(channels, dw_kernel)
        self.dcn = DeformConv2d(channels, channels, dcn_kernel, groups=channels, modulated=modulated)
        self.gate = conv1x1(channels, channels)
        self.proj_out = conv1x1(channels, channels)

    def gate_map(self, f_prime):
        return self.gate(self.dcn(self.dw(f_prime)))

    def forward(self, f):
        if f.shape[1] != self.channels:
            raise ValueError(f"SDA expects {self.channels} channels, got {f.shape[1]}")
        f_prime = self.proj_in(f)
        return self.proj_out(self.gate_map(f_prime) * f_prime) + f


class AFF(nn.Module):
    """F43 = F3 + Up(F4) -> SDA -> + F2 -> SDA -> + F1 -> SDA, upsampling x2 each step."""

    def __init__(self, channels=512, use_sda=True, modulated=True):
        super().__init__()
        make = (lambda: SDA(channels, modulated=modulated)) if use_sda else nn.Identity
        self.sda43 = make()
        self.sda234 = make()
        self.sda_out = make()

    @staticmethod
    def _merge(shallow, deep):
        if shallow.shape[-2:] != (2 * deep.shape[-2], 2 * deep.shape[-1]):
            raise ValueError(f"stage shapes do not halve: {tuple(shallow.shape)} vs {tuple(deep.shape)}")
        return shallow + upsample2x(deep)

    def forward(self, f1, f2, f3, f4):
        x = self.sda43(self._merge(f3, f4))
        x = self.sda234(self._merge(f2, x))
        return self.sda_out(self._merge(f1, x))
