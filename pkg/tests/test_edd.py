import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glomquant.core import DetectionBox, Label, LabelMask, PipelineConfig, to_physical_area
from glomquant.edd import (
    EddAreas, Location, accumulate_edd, assign_box_location, assign_image, presence,
)
from glomquant.phantom import EddPlant, PhantomSpec, build_phantom

from conftest import SMALL


def _mask_with_block(fractions, size=10):
    """Label a size x size block at (10, 10) with the given label fractions, row-major."""
    lab = np.zeros((40, 40), dtype=np.uint8)
    flat = []
    for label, frac in fractions:
        flat += [label] * int(round(frac * size * size))
    flat += [Label.BACKGROUND] * (size * size - len(flat))
    lab[10:10 + size, 10:10 + size] = np.array(flat, dtype=np.uint8).reshape(size, size)
    return LabelMask(lab)


BOX = DetectionBox(10, 10, 20, 20)


def test_fully_inside_gbm():
    assert assign_box_location(BOX, _mask_with_block([(Label.GBM, 1.0)])) == Location.INTRAMEMBRANOUS


def test_plurality():
    m = _mask_with_block([(Label.PODOCYTE, 0.6), (Label.GBM, 0.3)])
    assert assign_box_location(BOX, m) == Location.SUBEPITHELIAL


def test_mostly_background_unassigned():
    assert assign_box_location(BOX, _mask_with_block([(Label.MESANGIUM, 0.05)])) is None
    assert assign_box_location(BOX, _mask_with_block([(Label.MESANGIUM, 0.25)])) is Location.MESANGIAL


def test_tie_prefers_gbm():
    m = _mask_with_block([(Label.PODOCYTE, 0.5), (Label.GBM, 0.5)])
    assert assign_box_location(BOX, m) == Location.INTRAMEMBRANOUS
    m = _mask_with_block([(Label.ENDOTHELIUM, 0.5), (Label.MESANGIUM, 0.5)])
    assert assign_box_location(BOX, m) == Location.SUBENDOTHELIAL


def test_confidence_filter_and_clipping():
    lab = np.full((40, 40), Label.GBM, dtype=np.uint8)
    boxes = [DetectionBox(0, 0, 10, 10, 0.4), DetectionBox(35, 35, 45, 45, 0.9)]
    out = assign_image("i", boxes, LabelMask(lab), 10.0, 0.5)
    assert len(out) == 1
    assert out[0].area_um2 == pytest.approx(to_physical_area(25, 10.0))


def test_no_boxes():
    case, _ = build_phantom(PhantomSpec(**SMALL))
    areas, pres = accumulate_edd(case, PipelineConfig())
    assert areas.by_location() == {loc: 0.0 for loc in Location}
    assert not any(pres.to_dict().values())


def test_presence_reported_cohort_values():
    pres = presence(EddAreas(t_p=11.16, t_e=0.0), 3.0)
    assert pres.subepithelial and not pres.subendothelial
    assert not presence(EddAreas(t_g=3.0), 3.0).intramembranous


@given(st.lists(st.tuples(st.integers(0, 35), st.integers(0, 35), st.integers(1, 12), st.integers(1, 12)),
                max_size=15), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_conservation(raw, seed):
    rng = np.random.default_rng(seed)
    lab = LabelMask(rng.integers(0, 5, size=(48, 48)).astype(np.uint8))
    boxes = [DetectionBox(x, y, x + w, y + h) for x, y, w, h in raw]
    assigned = assign_image("r", boxes, lab, 7.5)
    areas = EddAreas.from_assignments(assigned)
    total = sum(areas.by_location().values())
    expected = math.fsum(a.area_um2 for a in assigned)
    assert total == pytest.approx(expected, rel=1e-9, abs=1e-15)


@given(st.floats(0, 20), st.floats(0, 5), st.floats(0, 20))
def test_threshold_monotone(area, t, bump):
    a = EddAreas(t_p=area)
    if not presence(a, t).subepithelial:
        assert not presence(a, t + bump).subepithelial if t + bump > 0 else True


def test_additivity_over_images():
    spec = PhantomSpec(n_images=2, width_px=1024, height_px=1024, mid_radius_nm=2500, mesangium_radius_nm=1200,
                       edd=[EddPlant("mesangial", 200, 150, 3), EddPlant("subepithelial", 300, 200, 2)])
    case, truth = build_phantom(spec)
    cfg = PipelineConfig()
    whole, _ = accumulate_edd(case, cfg)
    parts = EddAreas()
    for rec in case.images:
        parts = parts + EddAreas.from_assignments(assign_image(
            rec.meta.image_id, rec.outputs.boxes, rec.outputs.mask, rec.meta.nm_per_pixel))
    for loc in Location:
        assert whole.by_location()[loc] == pytest.approx(parts.by_location()[loc], rel=1e-12)
    # planted boxes are assigned to their compartment and recovered exactly
    for loc in Location:
        assert whole.by_location()[loc] == pytest.approx(truth["edd"]["areas_um2"][loc.value], abs=1e-12)
    assert whole.t_m == pytest.approx(2 * 3 * 0.03)
