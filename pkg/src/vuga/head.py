"""Channel-aware enhancement of the deepest feature and the score regressor."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import LayerNorm2d, conv1x1, dwconv


@dataclass(frozen=True)
class CaeConfig:
    in_channels: int
    expansion: int = 2
    dropout_rate: float = 0.1

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


@dataclass(frozen=True)
class RegressorConfig:
    input_dim: int
    hidden_dim: int = 256


class CAE(nn.Module):
    def __init__(self, cfg: CaeConfig):
        super().__init__()
        c = cfg.in_channels
        hidden = c * cfg.expansion
        self.mid = nn.Sequential(conv1x1(c, hidden), nn.GELU(), dwconv(hidden, 3), conv1x1(hidden, c))
        self.ref = nn.Sequential(dwconv(c, 5), conv1x1(c, c))
        self.dropout = nn.Dropout(cfg.dropout_rate)
        self.norm = LayerNorm2d(c)

    def forward(self, f4):
        c_ref = self.dropout(self.ref(self.mid(f4)))
        return self.norm(c_ref) + f4


def pool_and_concat(f_cae, f_aff):
    """Global-average-pool both maps and concatenate as ``[f_cae, f_aff]``."""
    if f_cae.dim() != 4 or f_aff.dim() != 4 or f_cae.shape[0] != f_aff.shape[0]:
        raise ValueError(f"expected two NCHW maps with equal batch, got {tuple(f_cae.shape)} and {tuple(f_aff.shape)}")
    return torch.cat([f_cae.mean(dim=(2, 3)), f_aff.mean(dim=(2, 3))], dim=1)


class Regressor(nn.Module):
    """Two-layer MLP with ReLU, unbounded scalar output."""

    def __init__(self, cfg: RegressorConfig):
        super().__init__()
        self.cfg = cfg
        self.fc1 = nn.Linear(cfg.input_dim, cfg.hidden_dim)
        self.fc2 = nn.Linear(cfg.hidden_dim, 1)

    def forward(self, v):
        if v.shape[-1] != self.cfg.input_dim:
            raise ValueError(f"regressor expects {self.cfg.input_dim} features, got {v.shape[-1]}")
        return self.fc2(torch.relu(self.fc1(v))).squeeze(-1)
