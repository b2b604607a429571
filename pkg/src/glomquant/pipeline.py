"""Per-image processing, case-level reduction and runtime accounting."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import edd, fpe, gbm
from .centerline import crop_patches, extract_centerline, sample_centerline
from .core import (
    EmptyStructure, ImageEntry, ModelOutputs, PipelineConfig, read_base_image, read_manifest,
)
from .provider import FileProvider
from .render import mask_to_gray, render_overlays, write_overlays

BUCKETS = ("load_process", "gbm", "fpe", "edd")


@dataclass
class ImageResult:
    image_id: str
    nm_per_pixel: float
    patches: list = field(default_factory=list)
    gated: list = field(default_factory=list)
    measurements: list = field(default_factory=list)
    discards: dict = field(default_factory=dict)
    fpe_probs: list = field(default_factory=list)
    edd_assignments: list = field(default_factory=list)
    n_samples: int = 0
    error: Optional[str] = None
    timings: dict = field(default_factory=dict)

    @property
    def n_candidates(self):
        return sum(self.gated)

    def summary(self):
        return {
            "image_id": self.image_id,
            "n_samples": self.n_samples,
            "n_patches": len(self.patches),
            "n_candidates": self.n_candidates,
            "n_measurements": len(self.measurements),
            "discarded": dict(sorted(self.discards.items())),
            "edd_boxes": len(self.edd_assignments),
            "error": self.error,
        }


def quantify_image(image_id, nm_per_pixel, meta, outputs: ModelOutputs, config: PipelineConfig, timings=None):
    """Cropping, GBM measurement, FPE lookup and EDD assignment for one image."""
    timings = {} if timings is None else timings
    res = ImageResult(image_id=image_id, nm_per_pixel=nm_per_pixel, timings=timings)

    t0 = time.perf_counter()
    try:
        cl = extract_centerline(outputs.mask, nm_per_pixel, config.min_branch_nm, image_id)
        samples = sample_centerline(cl, config.stride_nm, nm_per_pixel)
        res.n_samples = len(samples)
        res.patches = crop_patches(meta, samples, config.window_nm)
    except EmptyStructure as exc:
        res.error = f"EmptyStructure: {exc}"
    timings["load_process"] = timings.get("load_process", 0.0) + time.perf_counter() - t0

    t0 = time.perf_counter()
    res.gated = [gbm.gate_suitability(p, outputs.p_mea, config.suitability_threshold) for p in res.patches]
    chosen = [p.sample for p, ok in zip(res.patches, res.gated) if ok]
    for out in gbm.measure_cross_sections(outputs.mask, chosen, nm_per_pixel,
                                          config.effective_max_ray_nm, image_id):
        if isinstance(out, gbm.DiscardReason):
            res.discards[out.value] = res.discards.get(out.value, 0) + 1
        else:
            res.measurements.append(out)
    timings["gbm"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res.fpe_probs = [fpe.patch_fpe_probability(p, outputs.p_fpe) for p in res.patches]
    timings["fpe"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res.edd_assignments = edd.assign_image(image_id, outputs.boxes, outputs.mask, nm_per_pixel,
                                           config.detection_confidence_threshold)
    timings["edd"] = time.perf_counter() - t0
    return res


def process_entry(entry: ImageEntry, config: PipelineConfig, provider=None, render_dir=None):
    """Worker task: fetch outputs for one manifest entry, quantify, optionally render."""
    provider = provider or FileProvider()
    t_start = time.perf_counter()
    outputs = provider.fetch_outputs(entry)
    timings = {"load_process": time.perf_counter() - t_start}
    meta = entry.meta
    res = quantify_image(meta.image_id, meta.nm_per_pixel, meta, outputs, config, timings)
    if render_dir is not None:
        t0 = time.perf_counter()
        base = read_base_image(entry)
        if base is None:
            base = mask_to_gray(outputs.mask.labels)
        write_overlays(render_dir, meta.image_id, render_overlays(base, res))
        timings["render"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    return res


def _task(args):
    return process_entry(*args)


@dataclass
class CaseResult:
    case_id: str
    config: PipelineConfig
    images: list
    gbm: Optional[gbm.GbmResult]
    gbm_error: Optional[str]
    fpe: Optional[fpe.FpeResult]
    fpe_error: Optional[str]
    edd_areas: edd.EddAreas
    edd_presence: edd.EddPresence
    runtime: dict
    pathology: Optional[str] = None
    manual_reference: Optional[object] = None

    @property
    def all_empty(self):
        return all(r.error is not None and r.error.startswith("EmptyStructure") for r in self.images)

    def report(self):
        doc = {
            "case_id": self.case_id,
            "n_images": len(self.images),
            "config": self.config.to_dict(),
            "gbm": self.gbm.to_dict() if self.gbm else {"error": self.gbm_error},
            "fpe": self.fpe.to_dict() if self.fpe else {"error": self.fpe_error},
            "edd": edd.edd_report(self.edd_areas, self.edd_presence),
            "images": [r.summary() for r in self.images],
            "diagnostics": [f"{r.image_id}: {r.error}" for r in self.images if r.error],
            "runtime": self.runtime,
        }
        if self.pathology is not None:
            doc["pathology"] = self.pathology
        if self.manual_reference is not None:
            doc["manual_reference"] = self.manual_reference.to_dict()
        return doc


def _mean_sd(values):
    values = list(values)
    m = math.fsum(values) / len(values)
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return {"mean": m, "sd": sd}


def runtime_report(results, wall_s, workers):
    per_image = []
    for r in results:
        row = {"image_id": r.image_id}
        row.update({k: r.timings.get(k, 0.0) for k in BUCKETS})
        if "render" in r.timings:
            row["render"] = r.timings["render"]
        row["total"] = r.timings.get("total", sum(r.timings.get(k, 0.0) for k in BUCKETS))
        per_image.append(row)
    summary = {k: _mean_sd(row[k] for row in per_image) for k in BUCKETS + ("total",)}
    return {"per_image": per_image, "summary": summary, "case_wall_s": wall_s, "workers": workers}


def reduce_case(case_id, results, config: PipelineConfig, runtime, pathology=None, manual_reference=None):
    """Fold per-image results, in image order, into case-level quantities."""
    measurements = [m for r in results for m in r.measurements]
    n_candidates = sum(r.n_candidates for r in results)
    gbm_res, gbm_err = None, None
    try:
        gbm_res = gbm.build_result(measurements, n_candidates, config.gbm_thin_nm, config.gbm_thick_nm)
    except gbm.NoMeasurements as exc:
        gbm_err = f"NoMeasurements: {exc}"
    probs = [p for r in results for p in r.fpe_probs]
    fpe_res, fpe_err = None, None
    try:
        fpe_res = fpe.build_result(probs, config.fpe_mild, config.fpe_severe)
    except fpe.NoPatches as exc:
        fpe_err = f"NoPatches: {exc}"
    areas = edd.EddAreas.from_assignments([a for r in results for a in r.edd_assignments])
    return CaseResult(
        case_id=case_id, config=config, images=list(results),
        gbm=gbm_res, gbm_error=gbm_err, fpe=fpe_res, fpe_error=fpe_err,
        edd_areas=areas, edd_presence=edd.presence(areas, config.t_edd_um2),
        runtime=runtime, pathology=pathology, manual_reference=manual_reference,
    )


def default_workers():
    return os.cpu_count() or 1


def process_case(manifest_path, config: PipelineConfig = PipelineConfig(), workers=1,
                 provider=None, render_dir=None) -> CaseResult:
    """Run the full quantification over a case manifest.

    Images are processed independently (in worker processes when ``workers > 1``);
    the reduction always runs in manifest order so results do not depend on the
    worker count.
    """
    t0 = time.perf_counter()
    manifest = read_manifest(manifest_path)
    tasks = [(e, config, provider, render_dir) for e in manifest.entries]
    workers = max(1, int(workers))
    if workers == 1 or len(tasks) == 1:
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_task, tasks))
    wall = time.perf_counter() - t0
    return reduce_case(manifest.case_id, results, config, runtime_report(results, wall, workers),
                       manifest.pathology, manifest.manual_reference)


def quantify_case_record(case, config: PipelineConfig = PipelineConfig()) -> CaseResult:
    """Same pipeline over an in-memory CaseRecord (no files, single process)."""
    t0 = time.perf_counter()
    results = []
    for rec in case.images:
        t_img = time.perf_counter()
        timings = {"load_process": 0.0}
        r = quantify_image(rec.meta.image_id, rec.meta.nm_per_pixel, rec.meta, rec.outputs, config, timings)
        timings["total"] = time.perf_counter() - t_img
        results.append(r)
    wall = time.perf_counter() - t0
    return reduce_case(case.case_id, results, config, runtime_report(results, wall, 1),
                       case.pathology, case.manual_reference)
