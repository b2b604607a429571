"""Synthetic capillary-loop cases with analytically known answers.

A phantom image holds one annular GBM loop (label 1) with an endothelial band
inside and a podocyte band outside, plus a mesangial disk in the far corner.
Probability maps are piecewise constant over angular sectors of the loop, and
planted deposit boxes are placed so they lie entirely inside one compartment.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    CaseRecord, DetectionBox, GlomQuantError, ImageMeta, ImageRecord, Label, LabelMask,
    ManualReference, ModelOutputs, PROB_SCALE, ProbabilityMap, quantize_probability,
    save_case, to_physical_area,
)
from .edd import LOCATION_TO_LABEL, Location
from .gbm import STEREOLOGICAL_FACTOR, grade_thickness
from .render import mask_to_gray


class SpecInfeasible(GlomQuantError):
    pass


@dataclass(frozen=True)
class EddPlant:
    compartment: str
    width_nm: float
    height_nm: float
    count: int

    @classmethod
    def from_dict(cls, d):
        return cls(str(d["compartment"]), float(d["width_nm"]), float(d["height_nm"]), int(d["count"]))


@dataclass(frozen=True)
class PhantomSpec:
    width_px: int = 2048
    height_px: int = 2048
    nm_per_pixel: float = 10.0
    n_images: int = 1
    mid_radius_nm: float = 5000.0
    gbm_width_nm: float = 300.0
    modulation_amplitude: float = 0.0
    modulation_period_nm: Optional[float] = None
    # None draws a phase per image from the seed
    modulation_phase: Optional[float] = None
    podocyte_band_nm: float = 800.0
    endothelium_band_nm: float = 800.0
    mesangium_radius_nm: float = 2500.0
    center_jitter_px: int = 0
    n_sectors: int = 36
    fused_fraction: float = 0.0
    p_fused: float = 0.95
    p_intact: float = 0.05
    unsuitable_fraction: float = 0.0
    p_suitable: float = 0.9
    p_unsuitable: float = 0.1
    edd: tuple = ()
    detection_confidence: float = 0.9
    seed: int = 0
    case_id: str = "phantom"
    pathology: Optional[str] = None
    manual_reference: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "edd", tuple(
            e if isinstance(e, EddPlant) else EddPlant.from_dict(e) for e in self.edd))
        if self.gbm_width_nm * (1 - self.modulation_amplitude) / self.nm_per_pixel < 4:
            raise SpecInfeasible("GBM must be at least 4 px wide everywhere")
        if not 0 <= self.modulation_amplitude <= 0.5:
            raise SpecInfeasible("modulation amplitude must lie in [0, 0.5]")
        if self.modulation_amplitude > 0 and not self.modulation_period_nm:
            raise SpecInfeasible("modulated width needs modulation_period_nm")
        for name in ("fused_fraction", "unsuitable_fraction", "p_fused", "p_intact",
                     "p_suitable", "p_unsuitable", "detection_confidence"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpecInfeasible(f"{name} must lie in [0, 1]")
        if self.n_images < 1 or self.n_sectors < 1:
            raise SpecInfeasible("need at least one image and one sector")
        for e in self.edd:
            if e.compartment not in {loc.value for loc in Location}:
                raise SpecInfeasible(f"unknown compartment {e.compartment!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecInfeasible(f"unknown phantom spec keys: {sorted(unknown)}")
        return cls(**d)

    def px(self, nm):
        return nm / self.nm_per_pixel

    @property
    def n_periods(self):
        if self.modulation_amplitude == 0:
            return 0
        circumference = 2 * math.pi * self.mid_radius_nm
        return max(1, int(round(circumference / self.modulation_period_nm)))


def _sector_choice(rng, n_sectors, fraction):
    k = int(round(fraction * n_sectors))
    return np.sort(rng.choice(n_sectors, size=k, replace=False)) if k else np.zeros(0, dtype=int)


def _cell_candidates(region, bw, bh, rng):
    """Non-overlapping (row, col) grid cells of size bh x bw lying fully inside region."""
    h, w = region.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    sat[1:, 1:] = np.cumsum(np.cumsum(region, axis=0), axis=1)
    oy, ox = int(rng.integers(0, bh)), int(rng.integers(0, bw))
    rows = np.arange(oy, h - bh + 1, bh)
    cols = np.arange(ox, w - bw + 1, bw)
    if rows.size == 0 or cols.size == 0:
        return np.zeros((0, 2), dtype=int)
    r, c = np.meshgrid(rows, cols, indexing="ij")
    inside = sat[r + bh, c + bw] - sat[r, c + bw] - sat[r + bh, c] + sat[r, c]
    ok = inside == bw * bh
    return np.column_stack([r[ok], c[ok]])


def _render_image(spec: PhantomSpec, index, rng):
    h, w = spec.height_px, spec.width_px
    jitter = spec.center_jitter_px
    cx = (w - 1) / 2 + (rng.integers(-jitter, jitter + 1) if jitter else 0)
    cy = (h - 1) / 2 + (rng.integers(-jitter, jitter + 1) if jitter else 0)
    r = spec.px(spec.mid_radius_nm)
    half = spec.px(spec.gbm_width_nm) / 2
    amp = spec.modulation_amplitude
    phase = spec.modulation_phase
    if amp and phase is None:
        phase = float(rng.uniform(0, 2 * math.pi))
    phase = phase or 0.0
    endo = spec.px(spec.endothelium_band_nm)
    podo = spec.px(spec.podocyte_band_nm)
    outer = r + half * (1 + amp) + podo
    inner = r - half * (1 + amp) - endo
    if inner <= 0:
        raise SpecInfeasible("loop radius too small for the requested bands")
    if cx - outer < 1 or cy - outer < 1 or cx + outer > w - 2 or cy + outer > h - 2:
        raise SpecInfeasible("loop and its bands do not fit inside the image")

    labels = np.zeros((h, w), dtype=np.uint8)
    p_fpe = np.zeros((h, w), dtype=np.float64)
    p_mea = np.zeros((h, w), dtype=np.float64)

    y0, y1 = int(math.floor(cy - outer)) - 1, int(math.ceil(cy + outer)) + 2
    x0, x1 = int(math.floor(cx - outer)) - 1, int(math.ceil(cx + outer)) + 2
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = xx - cx, yy - cy
    rho = np.hypot(dx, dy)
    theta = np.mod(np.arctan2(dy, dx), 2 * math.pi)
    half_t = half * (1 + amp * np.sin(spec.n_periods * theta + phase)) if amp else np.full(rho.shape, half)
    sub = labels[y0:y1, x0:x1]
    dev = rho - r
    sub[(dev < -half_t) & (dev >= -half_t - endo)] = Label.ENDOTHELIUM
    sub[(dev > half_t) & (dev <= half_t + podo)] = Label.PODOCYTE
    sub[np.abs(dev) <= half_t] = Label.GBM

    sector = np.minimum((theta / (2 * math.pi) * spec.n_sectors).astype(int), spec.n_sectors - 1)
    fused = _sector_choice(rng, spec.n_sectors, spec.fused_fraction)
    unsuitable = _sector_choice(rng, spec.n_sectors, spec.unsuitable_fraction)
    band = (dev >= -half_t - endo) & (dev <= half_t + podo)
    is_fused = np.isin(sector, fused)
    p_fpe[y0:y1, x0:x1] = np.where(band, np.where(is_fused, spec.p_fused, spec.p_intact), 0.0)
    p_mea[y0:y1, x0:x1] = np.where(
        band, np.where(np.isin(sector, unsuitable), spec.p_unsuitable, spec.p_suitable), 0.0)

    # mesangial disk in the corner farthest from the loop centre
    rm = spec.px(spec.mesangium_radius_nm)
    mcx = w - 1 - rm - 0.02 * w if cx <= (w - 1) / 2 else rm + 0.02 * w
    mcy = h - 1 - rm - 0.02 * h if cy <= (h - 1) / 2 else rm + 0.02 * h
    if rm > 0:
        if math.hypot(mcx - cx, mcy - cy) - rm <= outer + 2:
            raise SpecInfeasible("mesangial disk would touch the capillary loop")
        if mcx - rm < 0 or mcy - rm < 0:
            raise SpecInfeasible("mesangial disk does not fit inside the image")
        my0, my1 = int(math.floor(mcy - rm)), int(math.ceil(mcy + rm)) + 1
        mx0, mx1 = int(math.floor(mcx - rm)), int(math.ceil(mcx + rm)) + 1
        myy, mxx = np.mgrid[my0:my1, mx0:mx1]
        disk = np.hypot(mxx - mcx, myy - mcy) <= rm
        labels[my0:my1, mx0:mx1][disk] = Label.MESANGIUM

    boxes = []
    occupied = np.zeros((h, w), dtype=bool)
    planted = {loc.value: 0.0 for loc in Location}
    n_boxes = {loc.value: 0 for loc in Location}
    for plant in spec.edd:
        bw = int(round(spec.px(plant.width_nm)))
        bh = int(round(spec.px(plant.height_nm)))
        if bw < 1 or bh < 1:
            raise SpecInfeasible("planted box smaller than a pixel")
        if plant.count == 0:
            continue
        target = LOCATION_TO_LABEL[Location(plant.compartment)]
        region = (labels == target) & ~occupied
        cells = _cell_candidates(region, bw, bh, rng)
        if len(cells) < plant.count:
            raise SpecInfeasible(
                f"only {len(cells)} free {bw}x{bh} px slots in {plant.compartment}, need {plant.count}")
        pick = cells[np.sort(rng.choice(len(cells), size=plant.count, replace=False))]
        for row, col in pick:
            occupied[row:row + bh, col:col + bw] = True
            boxes.append(DetectionBox(float(col), float(row), float(col + bw), float(row + bh),
                                      spec.detection_confidence))
        planted[plant.compartment] += plant.count * to_physical_area(bw * bh, spec.nm_per_pixel)
        n_boxes[plant.compartment] += plant.count

    gray = mask_to_gray(labels)

    quant = lambda a: quantize_probability(a).astype(np.float32) / np.float32(PROB_SCALE)  # noqa: E731
    image_id = f"{spec.case_id}_img{index:02d}"
    rec = ImageRecord(
        meta=ImageMeta(image_id, w, h, spec.nm_per_pixel),
        outputs=ModelOutputs(
            mask=LabelMask(labels),
            p_mea=ProbabilityMap(quant(p_mea), "measurement_suitability"),
            p_fpe=ProbabilityMap(quant(p_fpe), "fpe"),
            boxes=tuple(boxes),
        ),
        image=gray,
    )
    truth = {
        "image_id": image_id,
        "center": [float(cx), float(cy)],
        "modulation_phase": phase,
        "fused_sectors": fused.tolist(),
        "unsuitable_sectors": unsuitable.tolist(),
        "planted_areas_um2": planted,
        "n_boxes": n_boxes,
    }
    return rec, truth


def build_phantom(spec: PhantomSpec):
    """In-memory phantom case and its ground truth."""
    rng = np.random.default_rng(spec.seed)
    records, per_image = [], []
    for i in range(spec.n_images):
        rec, truth = _render_image(spec, i, rng)
        records.append(rec)
        per_image.append(truth)
    case = CaseRecord(
        case_id=spec.case_id,
        images=tuple(records),
        manual_reference=ManualReference.from_dict(spec.manual_reference),
        pathology=spec.pathology,
    )
    return case, ground_truth(spec, per_image)


def ground_truth(spec: PhantomSpec, per_image):
    n_fused = int(round(spec.fused_fraction * spec.n_sectors))
    f = n_fused / spec.n_sectors
    areas = {loc.value: math.fsum(t["planted_areas_um2"][loc.value] for t in per_image) for loc in Location}
    n_boxes = {loc.value: sum(t["n_boxes"][loc.value] for t in per_image) for loc in Location}
    expected_d_a = STEREOLOGICAL_FACTOR * spec.gbm_width_nm
    return {
        "case_id": spec.case_id,
        "nm_per_pixel": spec.nm_per_pixel,
        "gbm": {
            "true_width_nm": spec.gbm_width_nm,
            "mean_true_width_nm": spec.gbm_width_nm,
            "modulation_amplitude": spec.modulation_amplitude,
            "modulation_periods": spec.n_periods,
            "expected_d_a_nm": expected_d_a,
            "expected_grade": grade_thickness(expected_d_a),
        },
        "fpe": {
            "fused_fraction": f,
            "expected_r_fpe": spec.p_fused * f + spec.p_intact * (1 - f),
        },
        "edd": {
            "areas_um2": areas,
            "n_boxes": n_boxes,
            "box_px_area_um2": to_physical_area(1, spec.nm_per_pixel),
        },
        "images": per_image,
        "spec": _spec_to_json(spec),
    }


def _spec_to_json(spec):
    d = dataclasses.asdict(spec)
    d["edd"] = [dataclasses.asdict(e) for e in spec.edd]
    return d


def thickness_along_arc(truth, arc_fraction, image_index=0):
    """True GBM width (nm) at a fraction of the loop's angular position."""
    g = truth["gbm"]
    phase = truth["images"][image_index]["modulation_phase"]
    return g["true_width_nm"] * (
        1 + g["modulation_amplitude"] * math.sin(2 * math.pi * g["modulation_periods"] * arc_fraction + phase))


def generate_phantom_case(spec: PhantomSpec, out_dir):
    """Write the phantom case (manifest, rasters, detections, ground_truth.json)."""
    case, truth = build_phantom(spec)
    out_dir = Path(out_dir)
    manifest_path = save_case(case, out_dir)
    (out_dir / "ground_truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True))
    return manifest_path, truth


def validate_report(report, truth, tol_thickness_pct=3.0, tol_fpe=0.05):
    """Compare a case report against phantom ground truth; returns (name, ok, detail) checks."""
    checks = []
    g = report.get("gbm", {})
    true_w = truth["gbm"]["mean_true_width_nm"]
    if "mean_d_nm" in g:
        err = abs(g["mean_d_nm"] - true_w) / true_w * 100
        checks.append(("gbm_thickness", err <= tol_thickness_pct,
                       f"mean d {g['mean_d_nm']:.2f} nm vs true {true_w:.2f} nm ({err:.2f}% <= {tol_thickness_pct}%)"))
        rel = abs(g["d_a_nm"] - STEREOLOGICAL_FACTOR * g["mean_d_nm"]) / max(g["d_a_nm"], 1e-300)
        checks.append(("gbm_stereology_factor", rel <= 1e-12, f"relative deviation {rel:.3e}"))
    else:
        checks.append(("gbm_thickness", False, f"no thickness in report: {g.get('error')}"))
    f = report.get("fpe", {})
    expected = truth["fpe"]["expected_r_fpe"]
    if "r_fpe" in f:
        err = abs(f["r_fpe"] - expected)
        checks.append(("fpe_ratio", err <= tol_fpe, f"r_fpe {f['r_fpe']:.4f} vs {expected:.4f} (|diff| {err:.4f})"))
    else:
        checks.append(("fpe_ratio", False, f"no r_fpe in report: {f.get('error')}"))
    areas = report.get("edd", {}).get("areas_um2", {})
    px_area = truth["edd"]["box_px_area_um2"]
    for loc, planted in truth["edd"]["areas_um2"].items():
        got = areas.get(loc, 0.0)
        tol = truth["edd"]["n_boxes"][loc] * px_area + 1e-9
        checks.append((f"edd_{loc}", abs(got - planted) <= tol,
                       f"{got:.6f} um2 vs planted {planted:.6f} um2 (tol {tol:.2e})"))
    return checks
