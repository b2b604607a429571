import math

import numpy as np
import pytest

from glomquant.core import (
    DetectionBox, ImageMeta, ImageRecord, Label, LabelMask, ModelOutputs, ProbabilityMap,
)
from glomquant.phantom import PhantomSpec


def band_mask(h, w, rows, label=Label.GBM):
    """Horizontal band covering rows[0]..rows[1] inclusive."""
    lab = np.zeros((h, w), dtype=np.uint8)
    lab[rows[0]:rows[1] + 1, :] = label
    return lab


def annulus_mask(h, w, r_in, r_out, center=None):
    cy, cx = center if center is not None else ((h - 1) / 2, (w - 1) / 2)
    yy, xx = np.mgrid[0:h, 0:w]
    rho = np.hypot(xx - cx, yy - cy)
    lab = np.zeros((h, w), dtype=np.uint8)
    lab[(rho >= r_in) & (rho <= r_out)] = Label.GBM
    return lab


def rotated_band(h, w, width_px, angle_deg, length_px=None):
    """Straight band of given width through the image centre at an angle (degrees)."""
    cy, cx = (h - 1) / 2, (w - 1) / 2
    a = math.radians(angle_deg)
    yy, xx = np.mgrid[0:h, 0:w]
    along = (xx - cx) * math.cos(a) + (yy - cy) * math.sin(a)
    across = -(xx - cx) * math.sin(a) + (yy - cy) * math.cos(a)
    keep = np.abs(across) < width_px / 2
    if length_px is not None:
        keep &= np.abs(along) <= length_px / 2
    lab = np.zeros((h, w), dtype=np.uint8)
    lab[keep] = Label.GBM
    return lab


def make_record(labels, nm=10.0, p_mea=0.9, p_fpe=0.1, boxes=(), image_id="img"):
    h, w = labels.shape
    return ImageRecord(
        meta=ImageMeta(image_id, w, h, nm),
        outputs=ModelOutputs(
            mask=LabelMask(labels),
            p_mea=ProbabilityMap(np.full((h, w), p_mea, dtype=np.float32), "measurement_suitability"),
            p_fpe=ProbabilityMap(np.full((h, w), p_fpe, dtype=np.float32), "fpe"),
            boxes=tuple(boxes),
        ),
    )


# a loop small enough for fast unit tests (640 px, radius 200 px)
SMALL = dict(width_px=640, height_px=640, mid_radius_nm=2000.0, podocyte_band_nm=600.0,
             endothelium_band_nm=600.0, mesangium_radius_nm=0.0)


@pytest.fixture
def small_spec():
    return PhantomSpec(**SMALL)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
