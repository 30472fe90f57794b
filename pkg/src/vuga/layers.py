"""Small shared building blocks."""

import torch.nn as nn
import torch.nn.functional as F


class LayerNorm2d(nn.LayerNorm):
    """LayerNorm over the channel dim of an NCHW map, independently per pixel."""

    def forward(self, x):
        return F.layer_norm(x.permute(0, 2, 3, 1), self.normalized_shape, self.weight, self.bias, self.eps).permute(0, 3, 1, 2)


def conv1x1(cin, cout, bias=True):
    return nn.Conv2d(cin, cout, 1, bias=bias)


def dwconv(channels, kernel_size, dilation=1, bias=True):
    return nn.Conv2d(channels, channels, kernel_size, padding=dilation * (kernel_size // 2),
                     dilation=dilation, groups=channels, bias=bias)
