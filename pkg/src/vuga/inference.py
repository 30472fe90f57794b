"""Batched scoring and frozen-feature caching."""

from __future__ import annotations

import logging

import torch

from .data import PreprocessConfig, load_image, preprocess

logger = logging.getLogger(__name__)


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def load_tensors(records, pre_cfg: PreprocessConfig, skip_unreadable=False):
    """Decode and preprocess records. Returns ``(tensors, kept_records, failures)``."""
    tensors, kept, failed = [], [], []
    for r in records:
        try:
            tensors.append(preprocess(load_image(r.path), pre_cfg))
            kept.append(r)
        except (OSError, ValueError) as exc:
            if not skip_unreadable:
                raise
            logger.warning("skipping unreadable image %s (%s): %s", r.image_id, r.path, exc)
            failed.append((r.image_id, str(exc)))
    return tensors, kept, failed


def cache_pyramids(model, tensors, batch_size=8):
    """Run the frozen backbone once per image; returns a list of per-image
    4-tuples of ``C_i x H_i x W_i`` maps."""
    out = []
    with torch.no_grad():
        for chunk in _batches(tensors, batch_size):
            pyramid = model.backbone(torch.stack(chunk))
            out.extend(tuple(f[i] for f in pyramid) for i in range(len(chunk)))
    return out


def stack_pyramids(items):
    return tuple(torch.stack([it[s] for it in items]) for s in range(4))


@torch.no_grad()
def predict_tensors(model, tensors, batch_size=8, pyramids=None):
    """Eval-mode scores for preprocessed images (or their cached pyramids)."""
    was_training = model.training
    model.eval()
    try:
        scores = []
        source = pyramids if pyramids is not None else tensors
        for chunk in _batches(list(source), batch_size):
            if pyramids is not None:
                pred = model.head(stack_pyramids(chunk))
            else:
                pred = model(torch.stack(chunk))
            scores.extend(pred.tolist())
        return scores
    finally:
        model.train(was_training)
