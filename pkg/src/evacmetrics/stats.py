"""Small statistics helpers shared by the metric modules."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .errors import InsufficientData, ZeroVariance


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Pearson r with a two-sided p-value from Student's t on n-2 dof."""
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    n = len(x)
    if n < 3:
        raise InsufficientData(n)
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0 or np.ptp(xa) == 0.0 or np.ptp(ya) == 0.0:
        raise ZeroVariance()
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(sps.t.sf(abs(t), n - 2))
    return r, p


def weighted_mean_std(values: Sequence[float], weights: Sequence[float]) -> tuple[float, float]:
    """Weighted mean and (population) weighted standard deviation."""
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    total = w.sum()
    mean = float(np.dot(w, v) / total)
    var = float(np.dot(w, (v - mean) ** 2) / total)
    return mean, math.sqrt(max(var, 0.0))
