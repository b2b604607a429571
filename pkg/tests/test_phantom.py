import hashlib

import numpy as np
import pytest

from glomquant.core import Label, PipelineConfig, to_physical_area
from glomquant.phantom import (
    EddPlant, PhantomSpec, SpecInfeasible, build_phantom, generate_phantom_case, validate_report,
)
from glomquant.pipeline import quantify_case_record

from conftest import SMALL


def test_annulus_pixel_width():
    case, truth = build_phantom(PhantomSpec())
    lab = case.images[0].outputs.mask.labels
    cx, cy = truth["images"][0]["center"]
    # count GBM pixels along the four axis-aligned radii
    row = lab[int(round(cy)), int(round(cx)):]
    col = lab[int(round(cy)):, int(round(cx))]
    for line in (row, col):
        assert abs(int((line == Label.GBM).sum()) - 30) <= 1


def test_half_the_sectors_fused():
    case, truth = build_phantom(PhantomSpec(fused_fraction=0.5, **SMALL))
    assert len(truth["images"][0]["fused_sectors"]) == 18
    assert truth["fpe"]["expected_r_fpe"] == pytest.approx(0.5 * 0.95 + 0.5 * 0.05)


def test_planted_mesangial_boxes():
    spec = PhantomSpec(width_px=1024, height_px=1024, mid_radius_nm=2500, mesangium_radius_nm=1200,
                       edd=[EddPlant("mesangial", 200, 150, 3)])
    case, truth = build_phantom(spec)
    assert truth["edd"]["areas_um2"]["mesangial"] == pytest.approx(0.09)
    assert len(case.images[0].outputs.boxes) == 3
    assert to_physical_area(20 * 15, 10.0) == pytest.approx(0.03)


def _digest(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.iterdir())}


def test_same_seed_byte_identical(tmp_path):
    spec = PhantomSpec(n_images=2, fused_fraction=0.3, center_jitter_px=10,
                       edd=[EddPlant("subepithelial", 300, 200, 2)], seed=11, **SMALL)
    generate_phantom_case(spec, tmp_path / "a")
    generate_phantom_case(spec, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    other = PhantomSpec(**{**spec.__dict__, "seed": 12})
    generate_phantom_case(other, tmp_path / "c")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_infeasible_specs():
    with pytest.raises(SpecInfeasible):
        PhantomSpec(gbm_width_nm=20)
    with pytest.raises(SpecInfeasible):
        build_phantom(PhantomSpec(width_px=256, height_px=256))
    with pytest.raises(SpecInfeasible):
        build_phantom(PhantomSpec(edd=[EddPlant("intramembranous", 1000, 1000, 1)], **SMALL))
    with pytest.raises(SpecInfeasible):
        PhantomSpec.from_dict({"colour": "red"})


def test_self_consistency():
    spec = PhantomSpec(gbm_width_nm=450, fused_fraction=0.25, n_images=2,
                       edd=[EddPlant("subepithelial", 300, 300, 4), EddPlant("intramembranous", 200, 200, 3)],
                       **SMALL)
    case, truth = build_phantom(spec)
    # the small loop needs a finer stride to sample 36 sectors fairly
    report = quantify_case_record(case, PipelineConfig(stride_nm=250)).report()
    checks = validate_report(report, truth)
    assert all(ok for _, ok, _ in checks), checks
