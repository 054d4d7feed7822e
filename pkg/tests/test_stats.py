from __future__ import annotations

import math

import pytest
from scipy import stats as sps

from evacmetrics.errors import InsufficientData, ZeroVariance
from evacmetrics.stats import pearson, weighted_mean_std

# 20 (distance km, compliance) pairs
DIST = [0.8, 1.5, 2.1, 2.9, 3.3, 4.0, 4.6, 5.2, 5.9, 6.4,
        7.1, 7.7, 8.2, 8.8, 9.5, 10.1, 10.9, 11.4, 12.0, 12.6]
COMP = [0.91, 0.88, 0.85, 0.90, 0.72, 0.80, 0.66, 0.71, 0.60, 0.65,
        0.52, 0.58, 0.41, 0.47, 0.39, 0.44, 0.30, 0.35, 0.22, 0.28]


def brute_r(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    sx = math.sqrt(sum((a - mx) ** 2 for a in x) / n)
    sy = math.sqrt(sum((b - my) ** 2 for b in y) / n)
    return cov / (sx * sy)


def test_r_matches_brute_force():
    r, _ = pearson(DIST, COMP)
    assert r == pytest.approx(brute_r(DIST, COMP), abs=1e-12)


def test_p_value_matches_reference():
    r, p = pearson(DIST, COMP)
    ref = sps.pearsonr(DIST, COMP)
    assert r == pytest.approx(ref.statistic, abs=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-9)


def test_perfect_correlation():
    assert pearson([1, 2, 3], [2, 4, 6]) == (1.0, 0.0)
    assert pearson([1, 2, 3], [6, 4, 2]) == (-1.0, 0.0)


def test_insufficient():
    with pytest.raises(InsufficientData):
        pearson([1, 2], [3, 4])


def test_zero_variance():
    with pytest.raises(ZeroVariance):
        pearson([1, 1, 1], [1, 2, 3])


def test_length_mismatch():
    with pytest.raises(ValueError):
        pearson([1, 2, 3], [1, 2])


def test_affine_and_sign():
    r, _ = pearson(DIST, COMP)
    r2, _ = pearson([3 * d + 7 for d in DIST], [0.5 * c - 1 for c in COMP])
    r3, _ = pearson([-d for d in DIST], COMP)
    assert r2 == pytest.approx(r, abs=1e-12)
    assert r3 == pytest.approx(-r, abs=1e-12)


def test_weighted_mean_std():
    m, sd = weighted_mean_std([2.0, 10.0], [1.0, 3.0])
    assert m == 8.0
    assert sd == pytest.approx(math.sqrt((36 + 3 * 4) / 4))
