import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glomquant.stats import (
    BlandAltman, CohortRow, DegenerateVariance, DegenerateVarianceWarning, EmptySample, SingleClass,
    bland_altman, cohort_statistics, fpe_grade_score, gbm_grade_score, ks_two_sample, one_vs_rest_roc,
    pearson, roc_auc,
)


def brute_ks(a, b):
    pts = np.concatenate([a, b])
    return max(abs(np.mean(a <= t) - np.mean(b <= t)) for t in pts)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def direct_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def test_ks_examples():
    r = ks_two_sample([1, 2, 3], [1, 2, 3])
    assert r.d == 0 and r.p == pytest.approx(1.0)
    assert ks_two_sample([0, 1], [10, 11]).d == 1.0
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=50), rng.normal(0.3, size=50)
    assert abs(ks_two_sample(a, b).d - brute_ks(a, b)) <= 1e-12
    with pytest.raises(EmptySample):
        ks_two_sample([], [1])


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=30), st.lists(st.integers(-5, 5), min_size=1, max_size=30))
def test_ks_symmetric_and_bounded(a, b):
    d1, d2 = ks_two_sample(a, b).d, ks_two_sample(b, a).d
    assert d1 == d2 and 0 <= d1 <= 1
    assert abs(d1 - brute_ks(np.array(a), np.array(b))) <= 1e-12


def test_pearson_examples():
    a = np.arange(10.0)
    assert pearson(a, 2 * a + 3) == pytest.approx(1.0, abs=1e-15)
    assert pearson(a, -a) == pytest.approx(-1.0, abs=1e-15)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=100), rng.normal(size=100)
    assert abs(pearson(x, y) - direct_pearson(list(x), list(y))) <= 1e-12
    with pytest.raises(DegenerateVariance):
        pearson([1, 1, 1], [1, 2, 3])


@given(st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 1000))
def test_pearson_affine_invariant(scale, shift, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=20), rng.normal(size=20)
    assert pearson(scale * x + shift, y) == pytest.approx(pearson(x, y), abs=1e-9)


def test_bland_altman_identical():
    with pytest.warns(DegenerateVarianceWarning):
        ba = bland_altman([1, 2, 3], [1, 2, 3])
    assert ba.mean_diff == 0 and ba.loa_high - ba.loa_low == 0 and ba.pct_within == 1.0 and ba.degenerate


def test_bland_altman_monte_carlo():
    rng = np.random.default_rng(7)
    b = rng.normal(300, 50, size=10000)
    a = b + rng.normal(0, 20, size=10000)
    assert abs(bland_altman(a, b).pct_within - 0.95) <= 0.01


def test_roc_examples():
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).auc == 1.0
    assert roc_auc([0.5] * 6, [1, 0, 1, 0, 1, 0]).auc == 0.5
    rng = np.random.default_rng(3)
    s = rng.integers(0, 20, size=200).astype(float)
    y = rng.random(200) < 0.4
    assert abs(roc_auc(s, y).auc - pairwise_auc(s, y)) <= 1e-9
    with pytest.raises(SingleClass):
        roc_auc([1, 2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_roc_properties(data):
    s = [float(v) for v, _ in data]
    y = [b for _, b in data]
    if all(y) or not any(y):
        return
    roc = roc_auc(s, y)
    assert roc.auc == pytest.approx(1 - roc_auc([-v for v in s], y).auc, abs=1e-12)
    assert roc.points[0] == (0.0, 0.0) and roc.points[-1] == (1.0, 1.0)
    assert all(np.diff(roc.fpr) >= 0) and all(np.diff(roc.tpr) >= 0)


def test_one_vs_rest_grades():
    values = [200, 240, 300, 350, 500, 620]
    grades = ["thinning", "thinning", "normal", "normal", "thickening", "thickening"]
    for g in ("thinning", "normal", "thickening"):
        assert one_vs_rest_roc(values, grades, g, gbm_grade_score).auc == 1.0
    assert fpe_grade_score(0.55, "moderate") > fpe_grade_score(0.2, "moderate")


def test_cohort_statistics_structure():
    rows = [CohortRow(f"c{i}", "MN" if i % 2 else "IgAN", d_a_nm=200 + 60 * i, r_fpe=0.1 * i,
                      edd_areas={"subepithelial": float(i), "intramembranous": 0.0,
                                 "subendothelial": 0.0, "mesangial": 0.0},
                      manual_thickness_nm=210 + 55 * i, manual_gbm_grade=None,
                      manual_fpe_grade=["mild", "moderate", "severe"][i % 3],
                      manual_edd_presence={"subepithelial": i > 2})
            for i in range(6)]
    out = cohort_statistics(rows)
    assert set(out["ks"]) == {"MN", "IgAN"}
    assert out["pearson"]["r"] > 0.99
    assert out["roc"]["edd_subepithelial"]["auc"] == 1.0
    assert "error" in out["roc"]["gbm_normal"]
    assert "error" in out["roc"]["edd_mesangial"]
