"""MSE training with Adam and per-step cosine annealing; checkpoints and run logs."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import torch

from .backbone import parameter_checksum
from .data import PreprocessConfig
from .inference import cache_pyramids, load_tensors, predict_tensors, stack_pyramids
from .metrics import MetricError, srcc
from .model import VUGA, ModelConfig, build_model

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    schedule: str = "cosine"
    resolution: int = 224
    cache_features: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.schedule != "cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}")


def mse_loss(pred, mos):
    pred = torch.as_tensor(pred, dtype=torch.float32) if not torch.is_tensor(pred) else pred
    mos = torch.as_tensor(mos, dtype=pred.dtype)
    if pred.shape != mos.shape:
        raise ValueError(f"length mismatch: {tuple(pred.shape)} vs {tuple(mos.shape)}")
    if pred.numel() < 1:
        raise ValueError("mse of an empty batch")
    return ((pred - mos) ** 2).mean()


def cosine_lr(step: int, total: int, base_lr: float) -> float:
    """0.5 * base_lr * (1 + cos(pi * step / total)), annealing to 0 at ``total``."""
    return 0.5 * base_lr * (1 + math.cos(math.pi * min(step, total) / total))


@dataclass
class Checkpoint:
    model_state: dict
    model_config: dict
    train_config: dict
    epoch: int
    backbone_checksum: str = ""
    metrics: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def save(self, path):
        torch.save(asdict(self), path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            raw = torch.load(path, map_location="cpu", weights_only=True)
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise CheckpointError(f"{path} is not a readable checkpoint: {exc}") from exc
        version = raw.get("format_version") if isinstance(raw, dict) else None
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: checkpoint format_version {version}, expected {FORMAT_VERSION}")
        return cls(**raw)

    def restore(self, backbone=None) -> VUGA:
        """Rebuild the model; the frozen backbone is re-created from its source
        and must match the recorded checksum."""
        model = VUGA(ModelConfig.from_dict(self.model_config), backbone)
        if self.backbone_checksum and model.backbone.checksum != self.backbone_checksum:
            raise CheckpointError("backbone weights differ from the ones this checkpoint was trained with")
        missing, unexpected = model.load_state_dict(self.model_state, strict=False)
        missing = [k for k in missing if not k.startswith("backbone.")]
        if missing or unexpected:
            raise CheckpointError(f"state mismatch: missing={missing[:3]} unexpected={unexpected[:3]}")
        model.eval()
        return model


def make_checkpoint(model: VUGA, cfg: TrainConfig, epoch: int, metrics=None) -> Checkpoint:
    state = {k: v.detach().clone() for k, v in model.head_state_dict().items()}
    return Checkpoint(state, model.cfg.to_dict(), asdict(cfg), epoch, model.backbone.checksum, dict(metrics or {}))


@dataclass
class TrainResult:
    last: Checkpoint
    best: Checkpoint
    step_losses: list
    epoch_losses: list
    lrs: list
    val_srcc: list


def _pre_cfg(model, cfg):
    return PreprocessConfig(target_resolution=cfg.resolution)


def fit(model: VUGA, train_records, cfg: TrainConfig, run_dir=None, val_records=None,
        callback: Optional[Callable] = None) -> TrainResult:
    """Train the non-backbone parameters of ``model``.

    ``callback(epoch, model)`` runs after every epoch; returning True stops
    training early. The best checkpoint is picked by validation SRCC when at
    least three validation records exist, otherwise by epoch train loss.
    """
    train_records = list(train_records)
    if not train_records:
        raise ValueError("empty training split")
    if model.cfg.resolution != cfg.resolution:
        raise ValueError(f"model resolution {model.cfg.resolution} != train resolution {cfg.resolution}")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    shuffle_gen = torch.Generator().manual_seed(cfg.seed)
    pre_cfg = _pre_cfg(model, cfg)

    inputs, _, _ = load_tensors(train_records, pre_cfg)
    targets = torch.tensor([r.mos for r in train_records], dtype=torch.float32)
    pyramids = cache_pyramids(model, inputs, cfg.batch_size) if cfg.cache_features else None
    val_records = list(val_records or [])
    val_inputs = load_tensors(val_records, pre_cfg)[0] if len(val_records) >= 3 else None
    val_pyramids = (cache_pyramids(model, val_inputs, cfg.batch_size)
                    if cfg.cache_features and val_inputs is not None else None)

    checksum_before = parameter_checksum(model.backbone)
    params = model.trainable_parameters()
    optimizer = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(train_records)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda t: cosine_lr(t, total, 1.0))

    log = open(run_dir / "train.log", "w", encoding="utf-8") if run_dir is not None else None
    if log:
        log.write("step\tepoch\tlr\tloss\n")
    step_losses, epoch_losses, lrs, val_hist = [], [], [], []
    best, best_key, last = None, None, None
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = torch.randperm(n, generator=shuffle_gen).tolist()
            running = []
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                lr = optimizer.param_groups[0]["lr"]
                if pyramids is not None:
                    pred = model.head(stack_pyramids([pyramids[i] for i in idx]))
                else:
                    pred = model(torch.stack([inputs[i] for i in idx]))
                loss = mse_loss(pred, targets[idx])
                if not torch.isfinite(loss):
                    ids = [train_records[i].image_id for i in idx]
                    raise TrainingDiverged(f"non-finite loss {loss.item()} at step {step}, lr={lr:.3g}, batch={ids}")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                scheduler.step()
                step += 1
                value = loss.item()
                step_losses.append(value)
                lrs.append(lr)
                running.append(value)
                if log:
                    log.write(f"{step}\t{epoch}\t{lr:.6e}\t{value:.8f}\n")
                    log.flush()
            epoch_loss = sum(running) / len(running)
            epoch_losses.append(epoch_loss)

            metrics = {"train_loss": epoch_loss}
            if val_inputs is not None:
                preds = predict_tensors(model, val_inputs, cfg.batch_size, val_pyramids)
                try:
                    metrics["val_srcc"] = srcc(preds, [r.mos for r in val_records])
                except MetricError as exc:
                    logger.warning("validation srcc undefined: %s", exc)
                    metrics["val_srcc"] = float("nan")
                val_hist.append(metrics["val_srcc"])
                key = metrics["val_srcc"] if math.isfinite(metrics["val_srcc"]) else -math.inf
            else:
                key = -epoch_loss
            logger.info("epoch %d/%d loss %.5f%s", epoch, cfg.epochs, epoch_loss,
                        f" val_srcc {metrics['val_srcc']:.4f}" if "val_srcc" in metrics else "")

            last = make_checkpoint(model, cfg, epoch, metrics)
            if best_key is None or key > best_key:
                best, best_key = last, key
                if run_dir is not None:
                    best.save(run_dir / "ckpt_best")
            if run_dir is not None:
                last.save(run_dir / "ckpt_last")
            if callback is not None and callback(epoch, model):
                break
    finally:
        if log:
            log.close()

    if parameter_checksum(model.backbone) != checksum_before:
        raise RuntimeError("backbone parameters changed during training")
    return TrainResult(last, best, step_losses, epoch_losses, lrs, val_hist)


def train_from_scratch(model_cfg: ModelConfig, records, cfg: TrainConfig, run_dir=None, val_records=None,
                       backbone=None, callback=None):
    """Seeded model construction followed by :func:`fit`."""
    model = build_model(model_cfg, seed=cfg.seed, backbone=backbone)
    return model, fit(model, records, cfg, run_dir, val_records, callback)
