"""Modulated deformable convolution built on ``grid_sample``.

Each of the ``k*k`` kernel taps is gathered with one bilinear ``grid_sample``
call (zero padding outside the map), scaled by its modulation mask and
contracted with that tap's slice of the kernel; the taps are summed. On CPU this is
several times faster than ``torchvision.ops.deform_conv2d`` and supports double
precision, which the gradient checks rely on.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def _base_grid(h: int, w: int, dtype, device):
    ys = torch.arange(h, dtype=dtype, device=device).view(h, 1).expand(h, w)
    xs = torch.arange(w, dtype=dtype, device=device).view(1, w).expand(h, w)
    return ys, xs


def deform_conv2d(x, offset, weight, bias=None, mask=None, padding=1, dilation=1):
    """Stride-1 deformable convolution.

    ``offset`` is ``B x 2K x H x W`` laid out as (dy, dx) pairs per tap in
    row-major kernel order, matching torchvision. ``mask`` is ``B x K x H x W``
    or ``None`` for the unmodulated variant. Groups are inferred from
    ``weight.shape[1]``.
    """
    b, c, h, w = x.shape
    out_ch, c_per_group, kh, kw = weight.shape
    if c % c_per_group:
        raise ValueError(f"input has {c} channels, weight expects multiples of {c_per_group}")
    groups = c // c_per_group
    k = kh * kw
    if offset.shape[1] != 2 * k:
        raise ValueError(f"offset needs {2 * k} channels, got {offset.shape[1]}")

    ys, xs = _base_grid(h, w, x.dtype, x.device)
    depthwise = groups == c and out_ch == c
    out = None
    for i in range(kh):
        for j in range(kw):
            t = i * kw + j
            py = ys + (i * dilation - padding) + offset[:, 2 * t]
            px = xs + (j * dilation - padding) + offset[:, 2 * t + 1]
            # pixel centres live at (2p + 1) / size - 1 with align_corners=False
            grid = torch.stack(((2 * px + 1) / w - 1, (2 * py + 1) / h - 1), dim=-1)
            tap = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
            if mask is not None:
                tap = tap * mask[:, t:t + 1]
            # accumulate per tap rather than stacking K copies of the input
            if depthwise:
                tap = tap * weight[:, 0, i, j].view(1, c, 1, 1)
            else:
                tap = F.conv2d(tap, weight[:, :, i:i + 1, j:j + 1], groups=groups)
            out = tap if out is None else out + tap
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class DeformConv2d(nn.Module):
    """3x3 (by default) modulated deformable conv with its own offset predictor.

    The offset predictor is a plain convolution over the same input, zero
    initialised with a mask bias that yields unit modulation, so a fresh layer
    behaves exactly like ``nn.Conv2d`` with the same weights.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, groups=1, bias=True, modulated=True):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = kernel_size // 2
        self.groups = groups
        self.modulated = modulated
        k = kernel_size * kernel_size

        self.weight = nn.Parameter(torch.empty(out_channels, in_channels // groups, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

        self.offset = nn.Conv2d(in_channels, 2 * k, kernel_size, padding=self.padding)
        self.modulator = nn.Conv2d(in_channels, k, kernel_size, padding=self.padding) if modulated else None
        self.reset_offsets()

    def reset_offsets(self):
        nn.init.zeros_(self.offset.weight)
        nn.init.zeros_(self.offset.bias)
        if self.modulator is not None:
            nn.init.zeros_(self.modulator.weight)
            # 2 * sigmoid(0) == 1
            nn.init.zeros_(self.modulator.bias)

    def offsets_and_mask(self, x):
        offset = self.offset(x)
        mask = 2 * torch.sigmoid(self.modulator(x)) if self.modulator is not None else None
        return offset, mask

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        offset, mask = self.offsets_and_mask(x)
        return deform_conv2d(x, offset, self.weight, self.bias, mask, padding=self.padding)

    def extra_repr(self):
        return (f"{self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size}, "
                f"groups={self.groups}, modulated={self.modulated}")
