from __future__ import annotations

import numpy as np
from scipy.stats import gaussian_kde

from ..errors import UndefinedMeasurementError

GRID_POINTS = 2048
# grid extends this many bandwidths beyond the pooled sample range
GRID_PAD = 6.0


def pearson_r(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson_r expects two 1-D sequences of equal length")
    if len(x) < 3:
        raise UndefinedMeasurementError("pearson_r needs at least 3 pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx <= 0 or syy <= 0:
        raise UndefinedMeasurementError("zero variance: correlation undefined")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def kde(samples) -> gaussian_kde:
    """1-D Gaussian KDE with Scott's-rule bandwidth."""
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 1 or len(s) < 30:
        raise UndefinedMeasurementError("KDE needs at least 30 one-dimensional samples")
    if not np.all(np.isfinite(s)):
        raise UndefinedMeasurementError("non-finite samples")
    if np.ptp(s) == 0:
        raise UndefinedMeasurementError("zero-spread samples")
    return gaussian_kde(s, bw_method="scott")


def js_divergence(samples_a, samples_b, grid_points: int = GRID_POINTS) -> float:
    """Base-2 Jensen-Shannon divergence between Scott-bandwidth KDEs.

    Densities are evaluated on a uniform grid spanning both samples padded
    by ``GRID_PAD`` bandwidths, renormalized on the grid and integrated with
    the trapezoid rule.
    """
    ka, kb = kde(samples_a), kde(samples_b)
    a, b = ka.dataset.ravel(), kb.dataset.ravel()
    bw = max(np.sqrt(ka.covariance[0, 0]), np.sqrt(kb.covariance[0, 0]))
    lo = min(a.min(), b.min()) - GRID_PAD * bw
    hi = max(a.max(), b.max()) + GRID_PAD * bw
    x = np.linspace(lo, hi, grid_points)
    return _jsd_on_grid(x, ka(x), kb(x))


def _jsd_on_grid(x, p, q) -> float:
    p = p / np.trapezoid(p, x)
    q = q / np.trapezoid(q, x)
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = np.where(p > 0, p * np.log2(p / m), 0.0)
        tq = np.where(q > 0, q * np.log2(q / m), 0.0)
    val = 0.5 * np.trapezoid(tp, x) + 0.5 * np.trapezoid(tq, x)
    return float(np.clip(val, 0.0, 1.0))


def spearman_r(xs, ys) -> float:
    from scipy.stats import rankdata

    return pearson_r(rankdata(xs), rankdata(ys))
