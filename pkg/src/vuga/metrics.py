"""SRCC, logistic-mapped PLCC and repeat aggregation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


class MetricError(ValueError):
    """Metric undefined for the given inputs (too few points, constant vector...)."""


def _as_pair(pred, mos, min_n):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    mos = np.asarray(mos, dtype=np.float64).ravel()
    if pred.shape != mos.shape:
        raise MetricError(f"length mismatch: {pred.size} predictions vs {mos.size} scores")
    if pred.size < min_n:
        raise MetricError(f"need at least {min_n} points, got {pred.size}")
    if not (np.isfinite(pred).all() and np.isfinite(mos).all()):
        raise MetricError("non-finite values")
    return pred, mos


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        raise MetricError("correlation undefined for a constant vector")
    return float(np.clip((a * b).sum() / denom, -1.0, 1.0))


def srcc(pred, mos) -> float:
    """Spearman rank correlation with average ranks for ties."""
    pred, mos = _as_pair(pred, mos, 3)
    return _pearson(rankdata(pred), rankdata(mos))


def logistic4(x, b1, b2, b3, b4):
    z = np.clip(-(np.asarray(x) - b3) / abs(b4), -500, 500)
    return (b1 - b2) / (1 + np.exp(z)) + b2


@dataclass
class LogisticFit:
    params: tuple
    converged: bool
    iterations: int
    warnings: list = field(default_factory=list)

    def __call__(self, x):
        return logistic4(x, *self.params)


def logistic_fit(pred, mos, max_iter=500, xtol=1e-8) -> LogisticFit:
    """Least-squares fit of the monotone four-parameter logistic ``mos ~ f(pred)``.

    Starts from (max(mos), min(mos), mean(pred), std(pred)); the two
    asymptotes are swapped when pred and mos are negatively correlated so the
    optimiser begins on the right side of a decreasing mapping.
    """
    pred, mos = _as_pair(pred, mos, 5)
    if np.ptp(pred) == 0:
        raise MetricError("logistic fit needs non-constant predictions")
    b1, b2 = mos.max(), mos.min()
    if np.ptp(mos) > 0 and _pearson(pred, mos) < 0:
        b1, b2 = b2, b1
    x0 = np.array([b1, b2, pred.mean(), pred.std()])

    def residual(beta):
        return logistic4(pred, *beta) - mos

    # with max_nfev unset least_squares would keep going; 500 is the iteration cap
    sol = least_squares(residual, x0, method="lm", xtol=xtol, ftol=1e-12, gtol=1e-12, max_nfev=max_iter * (len(x0) + 1))
    notes = []
    converged = bool(sol.status > 0)
    if not converged:
        notes.append(f"logistic fit did not converge: {sol.message}")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    params = tuple(float(v) for v in sol.x)
    return LogisticFit(params, converged, int(sol.nfev), notes)


def plcc(pred, mos, fit: LogisticFit | None = None) -> float:
    """Pearson correlation between the logistic-mapped predictions and MOS."""
    pred, mos = _as_pair(pred, mos, 5)
    fit = fit or logistic_fit(pred, mos)
    mapped = fit(pred)
    if np.ptp(mapped) == 0:
        # the least-squares optimum is the constant mean: no explained variance
        warnings.warn("logistic fit is flat over the predictions; PLCC reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return _pearson(mapped, mos)


def median_over_repeats(results) -> tuple:
    """Component-wise medians of SRCC and PLCC (mean of the middle pair for even counts)."""
    results = list(results)
    if not results:
        raise ValueError("need at least one result")
    return (float(np.median([r.srcc for r in results])), float(np.median([r.plcc for r in results])))
