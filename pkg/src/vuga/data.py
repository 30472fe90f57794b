"""Quality-annotated manifests, image decoding and the resize/normalise operator."""

from __future__ import annotations

import csv
import logging
import math
import os
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
SHIPPED_RESOLUTIONS = (224, 512, 768, 1024)
SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Raised for unparsable or inconsistent manifest files."""


@dataclass
class ErpImage:
    """Decoded RGB raster, ``H x W x 3`` float32 in [0, 1]."""

    pixels: np.ndarray
    source_kind: str = "planar"
    source_path: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 pixels, got shape {self.pixels.shape}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if self.source_kind not in ("equirectangular", "planar"):
            raise ValueError(f"unknown source_kind {self.source_kind!r}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def load_image(path, source_kind: Optional[str] = None) -> ErpImage:
    """Decode a PNG/JPEG file. A 2:1 aspect ratio is taken as equirectangular."""
    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    if source_kind is None:
        h, w = pixels.shape[:2]
        source_kind = "equirectangular" if w == 2 * h else "planar"
    return ErpImage(pixels, source_kind, str(path))


@dataclass
class QualityRecord:
    image_id: str
    path: str
    mos: float
    split: Optional[str] = None


@dataclass
class DatasetManifest:
    name: str
    records: list
    mos_range: tuple = field(default=None)

    def __post_init__(self):
        if self.mos_range is None and self.records:
            scores = [r.mos for r in self.records]
            self.mos_range = (min(scores), max(scores))
        self.validate()

    def validate(self):
        seen = set()
        for r in self.records:
            if r.image_id in seen:
                raise ManifestError(f"duplicate image_id {r.image_id!r} in manifest {self.name!r}")
            seen.add(r.image_id)
            if not math.isfinite(r.mos):
                raise ManifestError(f"non-finite mos for {r.image_id!r}")
            if r.split is not None and r.split not in SPLITS:
                raise ManifestError(f"unknown split {r.split!r} for {r.image_id!r}")
        if self.records:
            lo, hi = self.mos_range
            # a single distinct score still needs a non-empty interval
            if not lo <= hi:
                raise ManifestError(f"invalid mos_range {self.mos_range}")
            for r in self.records:
                if not lo <= r.mos <= hi:
                    raise ManifestError(f"mos {r.mos} of {r.image_id!r} outside range {self.mos_range}")

    def __len__(self):
        return len(self.records)

    def subset(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def write_csv(self, path):
        """Write the manifest; image paths are stored relative to the CSV's directory."""
        base = Path(path).resolve().parent
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "path", "mos", "split"])
            for r in self.records:
                rel = os.path.relpath(Path(r.path).resolve(), base)
                writer.writerow([r.image_id, rel, repr(r.mos), r.split or ""])


def load_manifest(path) -> DatasetManifest:
    """Parse ``image_id,path,mos[,split]`` CSV. Relative image paths resolve
    against the manifest's directory."""
    path = Path(path)
    base = path.parent
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if header[:3] != ["image_id", "path", "mos"] or header[3:] not in ([], ["split"]):
            raise ManifestError(f"{path}:1: header must be image_id,path,mos[,split], got {','.join(header)}")
        has_split = len(header) == 4
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ManifestError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            image_id, img_path, mos_text = (cell.strip() for cell in row[:3])
            try:
                mos = float(mos_text)
            except ValueError:
                raise ManifestError(f"{path}:{line}: mos {mos_text!r} is not a number") from None
            if not math.isfinite(mos):
                raise ManifestError(f"{path}:{line}: mos must be finite")
            split = row[3].strip() or None if has_split else None
            if split is not None and split not in SPLITS:
                raise ManifestError(f"{path}:{line}: split must be train or test, got {split!r}")
            if not image_id:
                raise ManifestError(f"{path}:{line}: empty image_id")
            p = Path(img_path)
            records.append(QualityRecord(image_id, str(p if p.is_absolute() else base / p), mos, split))
    return DatasetManifest(path.stem, records)


def split_dataset(manifest: DatasetManifest, train_fraction: float = 0.8, seed: int = 0) -> DatasetManifest:
    """Assign every record to train/test; ``round(train_fraction * N)`` go to train."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(manifest.records)
    if n < 2:
        raise ValueError(f"need at least 2 records to form both splits, got {n}")
    n_train = min(max(round(train_fraction * n), 1), n - 1)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    train_idx = set(order[:n_train])
    records = [replace(r, split="train" if i in train_idx else "test") for i, r in enumerate(manifest.records)]
    return DatasetManifest(manifest.name, records, manifest.mos_range)


@dataclass(frozen=True)
class PreprocessConfig:
    target_resolution: int = 224
    normalization_mean: tuple = IMAGENET_MEAN
    normalization_std: tuple = IMAGENET_STD

    def __post_init__(self):
        if self.target_resolution < 32 or self.target_resolution % 32:
            raise ValueError(f"target_resolution must be a positive multiple of 32, got {self.target_resolution}")
        if len(self.normalization_mean) != 3 or len(self.normalization_std) != 3:
            raise ValueError("mean and std need three components")
        if any(s <= 0 for s in self.normalization_std):
            raise ValueError("std components must be strictly positive")


def resize(pixels: torch.Tensor, size: int) -> torch.Tensor:
    """Anisotropic bilinear resize of a ``3 x H x W`` tensor to ``3 x size x size``."""
    if pixels.shape[-2:] == (size, size):
        return pixels.clone()
    return F.interpolate(pixels[None], size=(size, size), mode="bilinear",
                         align_corners=False, antialias=True)[0]


def preprocess(image: ErpImage, cfg: PreprocessConfig) -> torch.Tensor:
    x = torch.from_numpy(np.ascontiguousarray(image.pixels, dtype=np.float32)).permute(2, 0, 1)
    if not torch.isfinite(x).all():
        raise ValueError(f"non-finite pixel values in {image.source_path or 'image'}")
    x = resize(x, cfg.target_resolution)
    mean = torch.tensor(cfg.normalization_mean, dtype=x.dtype).view(3, 1, 1)
    std = torch.tensor(cfg.normalization_std, dtype=x.dtype).view(3, 1, 1)
    return (x - mean) / std


def denormalize(x: torch.Tensor, cfg: PreprocessConfig) -> torch.Tensor:
    mean = torch.tensor(cfg.normalization_mean, dtype=x.dtype).view(3, 1, 1)
    std = torch.tensor(cfg.normalization_std, dtype=x.dtype).view(3, 1, 1)
    return x * std + mean


class QualityDataset(torch.utils.data.Dataset):
    """Yields ``(tensor, mos, image_id)`` for a list of records."""

    def __init__(self, records: Sequence[QualityRecord], cfg: PreprocessConfig):
        self.records = list(records)
        self.cfg = cfg

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        r = self.records[idx]
        return preprocess(load_image(r.path), self.cfg), torch.tensor(r.mos, dtype=torch.float32), r.image_id
