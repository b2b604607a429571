"""GBM thickness: suitability gating, normal-line cross-sections, stereological mean."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import GlomQuantError, Label, LabelMask, ProbabilityMap, mean

STEREOLOGICAL_FACTOR = math.pi / 4.0
RAY_STEP_PX = 0.25


class DiscardReason(str, Enum):
    RAY_ESCAPED = "RayEscaped"
    NOT_ON_GBM = "NotOnGbm"


class Discarded(GlomQuantError):
    def __init__(self, reason: DiscardReason):
        super().__init__(reason.value)
        self.reason = reason


class NoMeasurements(GlomQuantError):
    """No retained cross-section in the whole case."""


@dataclass(frozen=True)
class Measurement:
    image_id: str
    x: float
    y: float
    d_nm: float
    # boundary points where the normal leaves the GBM on either side
    entry: tuple
    exit: tuple


@dataclass(frozen=True)
class GbmResult:
    d_a_nm: float
    mean_d_nm: float
    n_measurements: int
    n_candidates: int
    grade: str
    measurements: tuple = field(default=(), repr=False)

    def to_dict(self):
        return {
            "d_a_nm": self.d_a_nm,
            "mean_d_nm": self.mean_d_nm,
            "grade": self.grade,
            "n_measurements": self.n_measurements,
            "n_candidates": self.n_candidates,
            "measurements": [
                {"image_id": m.image_id, "x": m.x, "y": m.y, "d_nm": m.d_nm,
                 "entry": list(m.entry), "exit": list(m.exit)}
                for m in self.measurements
            ],
        }


def grade_thickness(d_a_nm, thin_nm=250.0, thick_nm=450.0):
    """Thinning below ``thin_nm``, thickening above ``thick_nm``, normal in between (inclusive)."""
    if d_a_nm < thin_nm:
        return "thinning"
    if d_a_nm > thick_nm:
        return "thickening"
    return "normal"


def gate_suitability(patch, p_mea_map: ProbabilityMap, threshold=0.5):
    return p_mea_map.at(patch.sample.x, patch.sample.y) > threshold


def _march(gbm, x, y, dx, dy, max_steps):
    """Distance (px) along each ray to the GBM boundary, NaN where the ray escapes.

    Rays advance in RAY_STEP_PX increments; the boundary is taken midway between the
    last GBM sample and the first non-GBM sample.
    """
    h, w = gbm.shape
    t = np.arange(1, max_steps + 1) * RAY_STEP_PX
    px = x[:, None] + dx[:, None] * t[None, :]
    py = y[:, None] + dy[:, None] * t[None, :]
    cols = np.floor(px + 0.5).astype(np.int64)
    rows = np.floor(py + 0.5).astype(np.int64)
    inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    on = np.zeros(px.shape, dtype=bool)
    on[inside] = gbm[rows[inside], cols[inside]]
    # first step that is in-image but off the GBM; an out-of-image step before it escapes
    leave = inside & ~on
    out = ~inside
    has_leave = leave.any(axis=1)
    first_leave = np.where(has_leave, leave.argmax(axis=1), max_steps)
    has_out = out.any(axis=1)
    first_out = np.where(has_out, out.argmax(axis=1), max_steps)
    ok = has_leave & (first_leave < first_out)
    dist = (first_leave + 0.5) * RAY_STEP_PX  # midpoint between steps k and k+1 (t starts one step out)
    return np.where(ok, dist, np.nan)


def measure_cross_sections(mask: LabelMask, samples, nm_per_pixel, max_ray_nm, image_id=""):
    """Vectorised cross-section measurement.

    Returns a list aligned with ``samples`` holding a Measurement or a DiscardReason.
    """
    if not samples:
        return []
    gbm = mask.labels == Label.GBM
    h, w = gbm.shape
    x = np.array([s.x for s in samples])
    y = np.array([s.y for s in samples])
    nx = np.array([-s.ty for s in samples])
    ny = np.array([s.tx for s in samples])
    cols = np.floor(x + 0.5).astype(np.int64)
    rows = np.floor(y + 0.5).astype(np.int64)
    valid = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    on_gbm = np.zeros(len(samples), dtype=bool)
    on_gbm[valid] = gbm[rows[valid], cols[valid]]
    max_steps = max(1, int(math.floor(max_ray_nm / nm_per_pixel / RAY_STEP_PX)))
    t_plus = _march(gbm, x, y, nx, ny, max_steps)
    t_minus = _march(gbm, x, y, -nx, -ny, max_steps)
    out = []
    for k, s in enumerate(samples):
        if not on_gbm[k]:
            out.append(DiscardReason.NOT_ON_GBM)
        elif np.isnan(t_plus[k]) or np.isnan(t_minus[k]):
            out.append(DiscardReason.RAY_ESCAPED)
        else:
            tp, tm = float(t_plus[k]), float(t_minus[k])
            exit_pt = (s.x + nx[k] * tp, s.y + ny[k] * tp)
            entry_pt = (s.x - nx[k] * tm, s.y - ny[k] * tm)
            d_px = math.hypot(exit_pt[0] - entry_pt[0], exit_pt[1] - entry_pt[1])
            out.append(Measurement(
                image_id=image_id, x=s.x, y=s.y, d_nm=d_px * nm_per_pixel,
                entry=(float(entry_pt[0]), float(entry_pt[1])),
                exit=(float(exit_pt[0]), float(exit_pt[1])),
            ))
    return out


def measure_cross_section(mask: LabelMask, sample, nm_per_pixel, max_ray_nm, image_id=""):
    """Measure GBM width along the normal at one sample; raises Discarded."""
    (res,) = measure_cross_sections(mask, [sample], nm_per_pixel, max_ray_nm, image_id)
    if isinstance(res, DiscardReason):
        raise Discarded(res)
    return res


def aggregate_thickness(d_values, thin_nm=250.0, thick_nm=450.0):
    """Stereologically corrected mean thickness and its grade."""
    d_values = list(d_values)
    if not d_values:
        raise NoMeasurements("no retained cross-section measurements")
    d_a = STEREOLOGICAL_FACTOR * mean(d_values)
    return d_a, grade_thickness(d_a, thin_nm, thick_nm)


def build_result(measurements, n_candidates, thin_nm=250.0, thick_nm=450.0):
    d = [m.d_nm for m in measurements]
    d_a, grade = aggregate_thickness(d, thin_nm, thick_nm)
    return GbmResult(
        d_a_nm=d_a,
        mean_d_nm=mean(d),
        n_measurements=len(d),
        n_candidates=n_candidates,
        grade=grade,
        measurements=tuple(measurements),
    )
