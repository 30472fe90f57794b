"""Synthetic blur-severity datasets for sanity checks and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .data import DatasetManifest, QualityRecord


def source_image(height=256, width=512, seed=0) -> np.ndarray:
    """Textured RGB test pattern in [0, 1]: edges, stripes and fine noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((height, width, 3))
    for ch in range(3):
        fx, fy = rng.uniform(0.02, 0.25, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img[..., ch] = 0.5 + 0.25 * np.sin(fx * xx + fy * yy + phase)
    cells = rng.uniform(0, 1, size=(height // 16 + 1, width // 16 + 1, 3))
    img += 0.3 * (np.kron(cells, np.ones((16, 16, 1)))[:height, :width] - 0.5)
    img += 0.1 * rng.standard_normal((height, width, 3))
    return np.clip(img, 0, 1)


def blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img.copy()
    return gaussian_filter(img, sigma=(sigma, sigma, 0), mode="reflect")


def make_blur_set(out_dir, n=16, sigmas=None, seed=0, size=(256, 512), prefix="blur") -> DatasetManifest:
    """Write ``n`` blurred copies of one source image with MOS = -sigma.

    Returns the manifest (also written to ``out_dir/manifest.csv``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if sigmas is None:
        sigmas = np.linspace(0.0, 6.0, n)
    src = source_image(*size, seed=seed)
    records = []
    for i, sigma in enumerate(sigmas):
        image_id = f"{prefix}_{i:03d}"
        path = out_dir / f"{image_id}.png"
        Image.fromarray(np.round(blur(src, float(sigma)) * 255).astype(np.uint8)).save(path)
        records.append(QualityRecord(image_id, str(path), -float(sigma)))
    manifest = DatasetManifest(prefix, records)
    manifest.write_csv(out_dir / "manifest.csv")
    return manifest
