"""Overlay views: measurement segments, FPE blocks, colour-coded deposit boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Label
from .edd import Location

LABEL_GRAY = {
    Label.BACKGROUND: 205,
    Label.GBM: 70,
    Label.PODOCYTE: 140,
    Label.ENDOTHELIUM: 165,
    Label.MESANGIUM: 115,
}

FPE_BLOCK_THRESHOLD = 0.5


@dataclass(frozen=True)
class OverlayStyle:
    measurement: tuple = (255, 140, 0)
    intact: tuple = (0, 200, 0)
    fused: tuple = (0, 90, 255)
    edd: dict = field(default_factory=lambda: {
        Location.SUBEPITHELIAL: (0, 0, 255),
        Location.INTRAMEMBRANOUS: (255, 0, 0),
        Location.SUBENDOTHELIAL: (0, 255, 0),
        Location.MESANGIAL: (0, 255, 255),
    })
    line_width: int = 1
    box_width: int = 2
    block_opacity: float = 0.35


def mask_to_gray(labels):
    lut = np.zeros(256, dtype=np.uint8)
    for lab, level in LABEL_GRAY.items():
        lut[lab] = level
    return lut[labels]


def _rgb(gray):
    return np.repeat(np.asarray(gray, dtype=np.uint8)[:, :, None], 3, axis=2)


def _plot(img, cols, rows, color):
    h, w = img.shape[:2]
    ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    img[rows[ok], cols[ok]] = color


def draw_segment(img, p0, p1, color, width=1):
    n = int(math.ceil(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1])) * 2)) + 1
    t = np.linspace(0.0, 1.0, n)
    xs = p0[0] + t * (p1[0] - p0[0])
    ys = p0[1] + t * (p1[1] - p0[1])
    cols = np.floor(xs + 0.5).astype(np.int64)
    rows = np.floor(ys + 0.5).astype(np.int64)
    r = (width - 1) // 2
    for dr in range(-r, width - r):
        for dc in range(-r, width - r):
            _plot(img, cols + dc, rows + dr, color)


def draw_rect(img, x0, y0, x1, y1, color, width=1):
    """Outline covering pixel columns x0..x1-1 and rows y0..y1-1, drawn inward."""
    h, w = img.shape[:2]
    x0, y0 = max(int(x0), 0), max(int(y0), 0)
    x1, y1 = min(int(x1), w), min(int(y1), h)
    if x0 >= x1 or y0 >= y1:
        return
    k = max(1, min(width, (x1 - x0 + 1) // 2, (y1 - y0 + 1) // 2))
    img[y0:y0 + k, x0:x1] = color
    img[y1 - k:y1, x0:x1] = color
    img[y0:y1, x0:x0 + k] = color
    img[y0:y1, x1 - k:x1] = color


def fill_rect(img, x0, y0, x1, y1, color, opacity):
    region = img[y0:y1, x0:x1].astype(np.float32)
    blended = (1 - opacity) * region + opacity * np.asarray(color, dtype=np.float32)
    img[y0:y1, x0:x1] = np.rint(blended).astype(np.uint8)


def render_overlays(base_gray, result, style: OverlayStyle = OverlayStyle()):
    """Return the gbm, fpe and edd views of one image as RGB uint8 arrays."""
    base = _rgb(base_gray)
    gbm_view = base.copy()
    for m in result.measurements:
        draw_segment(gbm_view, m.entry, m.exit, style.measurement, style.line_width)
    fpe_view = base.copy()
    for patch, prob in zip(result.patches, result.fpe_probs):
        color = style.intact if prob < FPE_BLOCK_THRESHOLD else style.fused
        fill_rect(fpe_view, patch.x0, patch.y0, patch.x1, patch.y1, color, style.block_opacity)
    edd_view = base.copy()
    for a in result.edd_assignments:
        b = a.box
        c0, r0 = int(math.ceil(b.x_min - 0.5)), int(math.ceil(b.y_min - 0.5))
        c1, r1 = int(math.ceil(b.x_max - 0.5)), int(math.ceil(b.y_max - 0.5))
        draw_rect(edd_view, c0, r0, c1, r1, style.edd[a.location], style.box_width)
    return {"gbm": gbm_view, "fpe": fpe_view, "edd": edd_view}


def write_overlays(out_dir, image_id, views):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, arr in views.items():
        path = out_dir / f"{image_id}.{name}.png"
        # low compression keeps rendering off the critical path
        Image.fromarray(arr, mode="RGB").save(path, compress_level=1)
        paths[name] = path
    return paths
