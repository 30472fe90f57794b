"""gMAD pair selection between two quality models.

The defender's scores are cut into equal-count quantile bands. Inside each
band we look for image pairs the defender rates (nearly) the same, i.e.
``|d(a) - d(b)| <= tolerance``, and keep those the attacker separates most.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional

logger = logging.getLogger(__name__)


@dataclass
class GmadQuery:
    defender_scores: dict
    attacker_scores: dict
    num_levels: int = 2
    tolerance: Optional[float] = None
    pairs_per_level: int = 1

    def __post_init__(self):
        if set(self.defender_scores) != set(self.attacker_scores):
            raise ValueError("defender and attacker must score the same images")
        if len(self.defender_scores) < 2:
            raise ValueError("gMAD needs at least two images")
        values = list(self.defender_scores.values()) + list(self.attacker_scores.values())
        if not all(math.isfinite(v) for v in values):
            raise ValueError("scores must be finite")
        if self.num_levels < 1 or self.pairs_per_level < 1:
            raise ValueError("num_levels and pairs_per_level must be >= 1")
        if self.tolerance is None:
            d = self.defender_scores.values()
            self.tolerance = 0.01 * (max(d) - min(d))
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")


@dataclass(frozen=True)
class GmadPair:
    level: int
    image_a: str
    image_b: str
    defender_gap: float
    attacker_gap: float


def quantile_bands(scores: dict, num_levels: int) -> list:
    """Equal-count bands of image ids ordered by score (ties by id); band 0 is lowest."""
    ordered = sorted(scores, key=lambda k: (scores[k], k))
    n = len(ordered)
    return [ordered[(j * n) // num_levels:((j + 1) * n) // num_levels] for j in range(num_levels)]


def _band_pairs(band, d, a, tol):
    """All (attacker_gap, a, b, defender_gap) with a < b and the defender within tolerance.

    Sorted-window scan: after sorting by defender score, each image is only
    compared with the following images still inside the tolerance.
    """
    ids = sorted(band, key=lambda k: d[k])
    out = []
    for i, x in enumerate(ids):
        for y in ids[i + 1:]:
            gap = abs(d[y] - d[x])
            if gap > tol:
                # sorted by d, so every later y is at least as far away
                break
            lo, hi = (x, y) if x < y else (y, x)
            out.append((abs(a[lo] - a[hi]), lo, hi, gap))
    return out


def select_pairs(q: GmadQuery) -> list:
    d, a = q.defender_scores, q.attacker_scores
    result = []
    for level, band in enumerate(quantile_bands(d, q.num_levels), start=1):
        candidates = _band_pairs(band, d, a, q.tolerance)
        if not candidates:
            msg = f"no defender-tied pair in level {level} (band of {len(band)} images, tolerance {q.tolerance:g})"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            logger.warning(msg)
            continue
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        for att_gap, lo, hi, def_gap in candidates[:q.pairs_per_level]:
            result.append(GmadPair(level, lo, hi, def_gap, att_gap))
    return result


def compete(scores_a: dict, scores_b: dict, num_levels=2, tolerance=None, pairs_per_level=1,
            names=("model_a", "model_b")) -> dict:
    """Run both role assignments. Keys: ``"<defender>_defends"``."""
    report = {}
    for (dn, ds), (an, as_) in (((names[0], scores_a), (names[1], scores_b)),
                                ((names[1], scores_b), (names[0], scores_a))):
        q = GmadQuery(ds, as_, num_levels, tolerance, pairs_per_level)
        report[f"{dn}_defends"] = {"defender": dn, "attacker": an, "tolerance": q.tolerance,
                                   "pairs": select_pairs(q)}
    return report
