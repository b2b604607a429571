import numpy as np
import pytest
from hypothesis import given, strategies as st

from glomquant.centerline import GfbPatch, SamplePoint
from glomquant.core import ProbabilityMap
from glomquant.fpe import NoPatches, aggregate_fpe, grade_fpe, patch_fpe_probability
from glomquant.phantom import PhantomSpec, build_phantom
from glomquant.pipeline import quantify_case_record

from conftest import SMALL


def _patch(x, y):
    return GfbPatch(SamplePoint(x, y, 1.0, 0.0, 0, 0.0), 150, 0, 0, 150, 150)


def test_patch_lookup():
    arr = np.zeros((64, 64), dtype=np.float32)
    arr[30, 20] = 0.95
    pm = ProbabilityMap(arr, "fpe")
    assert patch_fpe_probability(_patch(20.2, 29.8), pm) == pytest.approx(0.95)
    assert patch_fpe_probability(_patch(5, 5), ProbabilityMap(np.zeros((64, 64)), "fpe")) == 0.0


def test_phantom_fused_region_lookup():
    case, truth = build_phantom(PhantomSpec(fused_fraction=0.5, p_fused=0.9, p_intact=0.1, **SMALL))
    rec = case.images[0]
    info = truth["images"][0]
    cx, cy = info["center"]
    sector = info["fused_sectors"][0]
    theta = (sector + 0.5) / 36 * 2 * np.pi
    r = SMALL["mid_radius_nm"] / 10.0
    p = patch_fpe_probability(_patch(cx + r * np.cos(theta), cy + r * np.sin(theta)), rec.outputs.p_fpe)
    assert p == pytest.approx(0.9, abs=1e-4)


def test_aggregate_examples():
    assert aggregate_fpe([0, 0, 0]) == (0.0, "mild")
    r, g = aggregate_fpe([0.2, 0.8])
    assert r == pytest.approx(0.5) and g == "moderate"
    assert grade_fpe(0.75) == "severe"
    with pytest.raises(NoPatches):
        aggregate_fpe([])
    with pytest.raises(ValueError):
        aggregate_fpe([1.2])


def test_grade_boundaries():
    assert [grade_fpe(v) for v in (0.39, 0.40, 0.70, 0.71)] == ["mild", "moderate", "moderate", "severe"]


def test_extremes_exact():
    assert aggregate_fpe([1.0] * 37)[0] == 1.0
    assert aggregate_fpe([0.0] * 37)[0] == 0.0


probs = st.lists(st.floats(0, 1), min_size=1, max_size=50)


@given(probs, st.randoms())
def test_range_and_permutation(p, rnd):
    r, _ = aggregate_fpe(p)
    assert 0.0 <= r <= 1.0
    q = list(p)
    rnd.shuffle(q)
    assert aggregate_fpe(q)[0] == r


@given(probs, st.data())
def test_monotone_in_each_probability(p, data):
    i = data.draw(st.integers(0, len(p) - 1))
    bumped = list(p)
    bumped[i] = data.draw(st.floats(p[i], 1.0))
    assert aggregate_fpe(bumped)[0] >= aggregate_fpe(p)[0]


def test_gate_does_not_filter_fpe():
    spec = PhantomSpec(fused_fraction=0.5, unsuitable_fraction=0.5, **SMALL)
    case, truth = build_phantom(spec)
    res = quantify_case_record(case)
    assert res.fpe.n_patches > res.gbm.n_candidates
    assert abs(res.fpe.r_fpe - truth["fpe"]["expected_r_fpe"]) <= 0.05
