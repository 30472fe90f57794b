"""Cross-scale multi-receptive-field perception block.

One block per pyramid stage: a deformable-conv refinement followed by a local
channel-attention branch and a global normalise/multiscale branch whose
outputs are summed at the fusion width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dcn import DeformConv2d
from .layers import LayerNorm2d, conv1x1, dwconv


@dataclass(frozen=True)
class CmpStageConfig:
    in_channels: int
    fusion_channels: int = 512
    local_dilation: int = 2
    global_reduction: int = 4
    multiscale_kernels: tuple = (5, 7, 9)
    dcn_kernel: int = 3
    modulated: bool = True
    eps: float = 1e-5

    def __post_init__(self):
        if self.in_channels % self.global_reduction:
            raise ValueError(f"in_channels {self.in_channels} not divisible by global_reduction {self.global_reduction}")
        if any(k % 2 == 0 for k in self.multiscale_kernels):
            raise ValueError(f"multiscale kernels must be odd, got {self.multiscale_kernels}")


class DcnRefine(nn.Module):
    """GELU(LayerNorm(DCN(F)))."""

    def __init__(self, channels, kernel_size=3, modulated=True):
        super().__init__()
        self.dcn = DeformConv2d(channels, channels, kernel_size, modulated=modulated)
        self.norm = LayerNorm2d(channels)
        self.act = nn.GELU()

    def forward(self, x):
        return self.act(self.norm(self.dcn(x)))


def channel_attention(q, k, v):
    """Softmax(Q K^T / sqrt(C)) V over channel tokens.

    Inputs are ``B x C x N``; Q and K rows are l2-normalised first, so every
    logit lies in ``[-1/sqrt(C), 1/sqrt(C)]``. Returns ``(out, attn)`` with
    ``attn`` of shape ``B x C x C``.
    """
    d = q.shape[1]
    q = F.normalize(q, dim=-1)
    k = F.normalize(k, dim=-1)
    attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
    return attn @ v, attn


class LocalBranch(nn.Module):
    def __init__(self, channels, out_channels=512, dilation=2):
        super().__init__()
        self.qkv = conv1x1(channels, 3 * channels)
        self.qkv_dw = dwconv(3 * channels, 3, dilation=dilation)
        self.proj = conv1x1(channels, out_channels)

    def attention(self, d):
        b, c, h, w = d.shape
        if h * w == 0:
            raise ValueError("empty spatial extent")
        q, k, v = self.qkv_dw(self.qkv(d)).reshape(b, 3 * c, h * w).chunk(3, dim=1)
        return channel_attention(q, k, v)

    def forward(self, d):
        attended, _ = self.attention(d)
        return self.proj(attended.reshape(d.shape) + d)


class AdaptiveNorm(nn.Module):
    """(lambda * (D - mu) / sqrt(var + eps) + beta) * P + D * P_x with per-channel
    parameters and statistics taken over the spatial dims of each channel."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.lam = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.p = nn.Parameter(torch.ones(channels))
        self.p_x = nn.Parameter(torch.ones(channels))

    def forward(self, d):
        mu = d.mean(dim=(2, 3), keepdim=True)
        var = d.var(dim=(2, 3), keepdim=True, unbiased=False)
        view = (1, -1, 1, 1)
        normed = self.lam.view(view) * (d - mu) / torch.sqrt(var + self.eps) + self.beta.view(view)
        return normed * self.p.view(view) + d * self.p_x.view(view)


class MultiScaleDW(nn.Module):
    """Mean of parallel depthwise convs with different kernel sizes."""

    def __init__(self, channels, kernels=(5, 7, 9)):
        super().__init__()
        self.branches = nn.ModuleList(dwconv(channels, k) for k in kernels)

    def forward(self, x):
        outs = [branch(x) for branch in self.branches]
        return sum(outs) / len(outs)


class GlobalBranch(nn.Module):
    def __init__(self, channels, out_channels=512, reduction=4, kernels=(5, 7, 9), eps=1e-5):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        reduced = channels // reduction
        self.norm = AdaptiveNorm(channels, eps)
        self.reduce = conv1x1(channels, reduced)
        self.multiscale = MultiScaleDW(reduced, kernels)
        self.expand = conv1x1(reduced, channels)
        self.proj = conv1x1(channels, out_channels)

    def forward(self, d):
        y = self.multiscale(self.reduce(self.norm(d)))
        return self.proj(self.expand(y) + d)


class CMP(nn.Module):
    def __init__(self, cfg: CmpStageConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.in_channels
        self.refine = DcnRefine(c, cfg.dcn_kernel, cfg.modulated)
        self.local = LocalBranch(c, cfg.fusion_channels, cfg.local_dilation)
        self.glob = GlobalBranch(c, cfg.fusion_channels, cfg.global_reduction, cfg.multiscale_kernels, cfg.eps)

    def forward(self, f):
        if f.shape[1] != self.cfg.in_channels:
            raise ValueError(f"CMP expects {self.cfg.in_channels} channels, got {f.shape[1]}")
        d = self.refine(f)
        return self.local(d) + self.glob(d)
