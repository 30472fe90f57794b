"""Held-out and cross-database evaluation protocols."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import DatasetManifest, PreprocessConfig, split_dataset
from .inference import load_tensors, predict_tensors
from .metrics import MetricError, logistic_fit, median_over_repeats, plcc, srcc
from .train import Checkpoint, TrainConfig, train_from_scratch

logger = logging.getLogger(__name__)

MAX_SKIPPED_FRACTION = 0.10


class EvaluationError(RuntimeError):
    pass


@dataclass
class EvalResult:
    srcc: float
    plcc: float
    logistic_params: tuple
    predictions: list  # (image_id, pred, mos), sorted by image_id
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if not self.predictions:
            raise ValueError("EvalResult needs at least one prediction")
        for name in ("srcc", "plcc"):
            v = getattr(self, name)
            if math.isfinite(v) and abs(v) > 1:
                raise ValueError(f"{name}={v} outside [-1, 1]")

    def to_json(self) -> dict:
        return {
            "srcc": self.srcc,
            "plcc": self.plcc,
            "logistic_params": list(self.logistic_params),
            "warnings": list(self.warnings),
            "predictions": [{"image_id": i, "pred": p, "mos": m} for i, p, m in self.predictions],
        }

    @classmethod
    def from_json(cls, d) -> "EvalResult":
        preds = [(p["image_id"], p["pred"], p["mos"]) for p in d["predictions"]]
        return cls(d["srcc"], d["plcc"], tuple(d["logistic_params"]), preds, list(d.get("warnings", [])))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvalResult":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def score_predictions(predictions, notes=None) -> EvalResult:
    """Metrics for ``(image_id, pred, mos)`` triples, aggregated in image_id order."""
    predictions = sorted(predictions, key=lambda t: t[0])
    preds = [p for _, p, _ in predictions]
    mos = [m for _, _, m in predictions]
    notes = list(notes or [])
    rho = srcc(preds, mos)
    fit = logistic_fit(preds, mos)
    notes.extend(fit.warnings)
    return EvalResult(rho, plcc(preds, mos, fit), fit.params, predictions, notes)


def evaluate_model(model, records, resolution=None, batch_size=8, out_path=None) -> EvalResult:
    records = sorted(records, key=lambda r: r.image_id)
    if not records:
        raise EvaluationError("nothing to evaluate: split is empty")
    pre_cfg = PreprocessConfig(target_resolution=resolution or model.cfg.resolution)
    tensors, kept, failed = load_tensors(records, pre_cfg, skip_unreadable=True)
    notes = [f"skipped {image_id}: {msg}" for image_id, msg in failed]
    if len(failed) > MAX_SKIPPED_FRACTION * len(records):
        raise EvaluationError(f"{len(failed)} of {len(records)} images unreadable (limit 10%)")
    preds = predict_tensors(model, tensors, batch_size)
    result = score_predictions([(r.image_id, p, r.mos) for r, p in zip(kept, preds)], notes)
    if out_path is not None:
        result.save(out_path)
    return result


def evaluate(checkpoint, manifest: DatasetManifest, split="test", out_path=None, batch_size=8) -> EvalResult:
    """Score ``manifest``'s ``split`` (or ``"all"``) with a checkpoint (path or object)."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    records = manifest.records if split == "all" else manifest.subset(split)
    model = checkpoint.restore()
    return evaluate_model(model, records, batch_size=batch_size, out_path=out_path)


def cross_database(train_manifest: DatasetManifest, test_manifest: DatasetManifest, model_cfg, train_cfg: TrainConfig,
                   run_dir=None, train_fraction=0.8, backbone=None):
    """Train on a random ``train_fraction`` of one database, test on all of another."""
    if train_manifest is test_manifest or (
            train_manifest.name == test_manifest.name and train_manifest.records == test_manifest.records):
        raise ValueError("cross-database protocol needs two different manifests")
    if not test_manifest.records:
        raise ValueError(f"test manifest {test_manifest.name!r} is empty")
    split = split_dataset(train_manifest, train_fraction, train_cfg.seed)
    model, result = train_from_scratch(model_cfg, split.subset("train"), train_cfg, run_dir, backbone=backbone)
    model.load_state_dict(result.best.model_state, strict=False)
    out = Path(run_dir) / "eval_result.json" if run_dir is not None else None
    return evaluate_model(model, test_manifest.records, batch_size=train_cfg.batch_size, out_path=out)


def repeated_holdout(manifest: DatasetManifest, model_cfg, train_cfg: TrainConfig, repeats=10, train_fraction=0.8,
                     run_dir=None, backbone=None):
    """Train/test ``repeats`` times and report median SRCC and PLCC.

    Repeat ``i`` uses seed ``train_cfg.seed + i`` for both the random split and
    the head initialisation. Manifests that carry their own split keep it, so
    only the initialisation changes. Returns ``(srcc, plcc, results)``.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    fixed = all(r.split is not None for r in manifest.records)
    results = []
    for i in range(repeats):
        cfg = replace(train_cfg, seed=train_cfg.seed + i)
        split = manifest if fixed else split_dataset(manifest, train_fraction, cfg.seed)
        sub = Path(run_dir) / f"repeat{i:02d}" if run_dir is not None else None
        model, result = train_from_scratch(model_cfg, split.subset("train"), cfg, sub, backbone=backbone)
        model.load_state_dict(result.best.model_state, strict=False)
        out = sub / "eval_result.json" if sub is not None else None
        results.append(evaluate_model(model, split.subset("test"), batch_size=cfg.batch_size, out_path=out))
    rho, lin = median_over_repeats(results)
    return rho, lin, results
