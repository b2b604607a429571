import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from glomquant.core import DetectionBox, Label, PipelineConfig
from glomquant.phantom import EddPlant, PhantomSpec, build_phantom
from glomquant.pipeline import ImageResult, quantify_image
from glomquant.render import OverlayStyle, mask_to_gray, render_overlays, write_overlays

from conftest import SMALL

STYLE = OverlayStyle()


def _quantify(spec, config):
    case, truth = build_phantom(spec)
    rec = case.images[0]
    res = quantify_image(rec.meta.image_id, rec.meta.nm_per_pixel, rec.meta, rec.outputs, config)
    return rec, res


def _decode(paths, view):
    return np.array(Image.open(paths[view]).convert("RGB"))


def test_no_measurements_leaves_image_untouched(tmp_path):
    base = mask_to_gray(np.zeros((40, 50), dtype=np.uint8))
    views = render_overlays(base, ImageResult("empty", 10.0))
    paths = write_overlays(tmp_path, "empty", views)
    for view in ("gbm", "fpe", "edd"):
        assert np.array_equal(_decode(paths, view), np.repeat(base[:, :, None], 3, axis=2))


def test_five_segments(tmp_path):
    # circumference 12566 nm at stride 2500 nm gives five samples on the loop
    rec, res = _quantify(PhantomSpec(**SMALL), PipelineConfig(stride_nm=2500, window_nm=3000))
    assert len(res.measurements) == 5
    base = rec.image
    paths = write_overlays(tmp_path, rec.meta.image_id, render_overlays(base, res))
    gbm_view = _decode(paths, "gbm")
    changed = np.any(gbm_view != base[:, :, None], axis=2)
    orange = np.all(gbm_view == STYLE.measurement, axis=2)
    # purity: the only changed pixels are the drawn segments
    assert np.array_equal(changed, orange)
    _, n = ndimage.label(orange, structure=np.ones((3, 3)))
    assert n == 5
    gbm = rec.outputs.mask.labels == Label.GBM
    for m in res.measurements:
        sx, sy = m.x, m.y
        for px, py in (m.entry, m.exit):
            d = np.array([px - sx, py - sy])
            d /= np.linalg.norm(d)
            inside = np.floor(np.array([px, py]) - 0.5 * d + 0.5).astype(int)
            outside = np.floor(np.array([px, py]) + 0.5 * d + 0.5).astype(int)
            assert gbm[inside[1], inside[0]] and not gbm[outside[1], outside[0]]


def test_fpe_blocks_one_per_patch():
    # stride equal to the window keeps neighbouring blocks off each other's centres
    rec, res = _quantify(PhantomSpec(fused_fraction=0.5, **SMALL), PipelineConfig(stride_nm=1500))
    views = render_overlays(rec.image, res)
    fused_blocks = sum(p >= 0.5 for p in res.fpe_probs)
    assert 0 < fused_blocks < len(res.patches)
    # each patch centre is tinted with the colour of its classification
    for patch, prob in zip(res.patches, res.fpe_probs):
        cx, cy = int(round(patch.sample.x)), int(round(patch.sample.y))
        pixel = views["fpe"][cy, cx].astype(int)
        target = np.array(STYLE.fused if prob >= 0.5 else STYLE.intact)
        other = np.array(STYLE.intact if prob >= 0.5 else STYLE.fused)
        assert np.abs(pixel - target).sum() < np.abs(pixel - other).sum()


def test_intramembranous_box_is_red():
    spec = PhantomSpec(gbm_width_nm=400, edd=[EddPlant("intramembranous", 200, 200, 1)], **SMALL)
    rec, res = _quantify(spec, PipelineConfig())
    (a,) = res.edd_assignments
    assert a.location.value == "intramembranous"
    view = render_overlays(rec.image, res)["edd"]
    b = a.box
    x0, y0, x1, y1 = int(b.x_min), int(b.y_min), int(b.x_max), int(b.y_max)
    red = np.all(view == (255, 0, 0), axis=2)
    assert red[y0, x0:x1].all() and red[y1 - 1, x0:x1].all()
    assert red[y0:y1, x0].all() and red[y0:y1, x1 - 1].all()
    ys, xs = np.nonzero(red)
    assert (xs.min(), xs.max() + 1, ys.min(), ys.max() + 1) == (x0, x1, y0, y1)
