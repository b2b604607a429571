"""Domain types, units, configuration and case manifest I/O."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

MIN_IMAGE_SIDE = 32
PROB_SCALE = 65535


class Label(IntEnum):
    BACKGROUND = 0
    GBM = 1
    PODOCYTE = 2
    ENDOTHELIUM = 3
    MESANGIUM = 4


N_LABELS = len(Label)


# --------------------------------------------------------------------------
# errors
# --------------------------------------------------------------------------

class GlomQuantError(Exception):
    """Base class for all package errors."""


class InputError(GlomQuantError):
    """Malformed or inconsistent case input. Maps to CLI exit code 2."""

    def __init__(self, message, image_id=None):
        if image_id is not None:
            message = f"[{image_id}] {message}"
        super().__init__(message)
        self.image_id = image_id


class MissingFile(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class IllegalLabel(InputError):
    pass


class ConfigError(InputError):
    pass


class EmptyStructure(GlomQuantError):
    """No GBM structure left to measure."""


# --------------------------------------------------------------------------
# units
# --------------------------------------------------------------------------

def to_physical_area(px_area, nm_per_pixel):
    """Convert a pixel area to square micrometres."""
    return px_area * nm_per_pixel * nm_per_pixel * 1e-6


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

def _frozen_array(arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    width_px: int
    height_px: int
    nm_per_pixel: float
    magnification_k: Optional[float] = None

    def __post_init__(self):
        if not self.nm_per_pixel > 0:
            raise InputError("nm_per_pixel must be positive", self.image_id)
        if self.width_px < MIN_IMAGE_SIDE or self.height_px < MIN_IMAGE_SIDE:
            raise InputError(
                f"image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} px, "
                f"got {self.width_px}x{self.height_px}",
                self.image_id,
            )
        if self.magnification_k is not None and not self.magnification_k > 0:
            raise InputError("magnification_k must be positive", self.image_id)

    @property
    def shape(self):
        return (self.height_px, self.width_px)


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Per-pixel ultrastructure labels, shape (height, width), values 0..4."""

    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen_array(self.labels, np.uint8))
        if self.labels.ndim != 2:
            raise DimensionMismatch("label mask must be 2-D")
        if self.labels.size and int(self.labels.max()) >= N_LABELS:
            bad = sorted(int(v) for v in np.unique(self.labels[self.labels >= N_LABELS]))
            raise IllegalLabel(f"label mask contains labels {bad} outside 0..{N_LABELS - 1}")

    @property
    def shape(self):
        return self.labels.shape

    def __eq__(self, other):
        return isinstance(other, LabelMask) and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    values: np.ndarray
    kind: str

    KINDS = ("measurement_suitability", "fpe")

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, np.float32))
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown probability map kind {self.kind!r}")
        if self.values.ndim != 2:
            raise DimensionMismatch(f"{self.kind} map must be 2-D")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise InputError(f"{self.kind} map has values outside [0, 1]")

    @property
    def shape(self):
        return self.values.shape

    def at(self, x, y):
        """Value at the pixel containing sub-pixel point (x, y)."""
        col, row = pixel_of(x, y)
        return float(self.values[row, col])

    def __eq__(self, other):
        return (
            isinstance(other, ProbabilityMap)
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )


def pixel_of(x, y):
    """Pixel (col, row) containing a sub-pixel point; pixel i spans [i-0.5, i+0.5)."""
    return int(math.floor(x + 0.5)), int(math.floor(y + 0.5))


@dataclass(frozen=True)
class DetectionBox:
    """Axis-aligned detection box in pixel-edge coordinates.

    The box covers columns ``x_min <= c < x_max`` and rows ``y_min <= r < y_max``,
    so its area is ``(x_max - x_min) * (y_max - y_min)``.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InputError(f"degenerate detection box {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"detection confidence {self.confidence} outside [0, 1]")

    @property
    def area_px(self):
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def clipped(self, width, height):
        """Box intersected with the image, or None if it lies fully outside."""
        x0, y0 = max(self.x_min, 0.0), max(self.y_min, 0.0)
        x1, y1 = min(self.x_max, float(width)), min(self.y_max, float(height))
        if x0 >= x1 or y0 >= y1:
            return None
        return DetectionBox(x0, y0, x1, y1, self.confidence)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class ModelOutputs:
    """Everything the three models produce for one image."""

    mask: LabelMask
    p_mea: ProbabilityMap
    p_fpe: ProbabilityMap
    boxes: tuple = ()

    def __eq__(self, other):
        return (
            isinstance(other, ModelOutputs)
            and self.mask == other.mask
            and self.p_mea == other.p_mea
            and self.p_fpe == other.p_fpe
            and tuple(self.boxes) == tuple(other.boxes)
        )


@dataclass(frozen=True)
class ManualReference:
    gbm_thickness_nm: Optional[float] = None
    gbm_grade: Optional[str] = None
    fpe_grade: Optional[str] = None
    edd_presence: Optional[dict] = None

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return None
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self):
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


@dataclass(frozen=True)
class ImageRecord:
    meta: ImageMeta
    outputs: ModelOutputs
    image: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        o = self.outputs
        for name, shape in (("mask", o.mask.shape), ("p_mea", o.p_mea.shape), ("p_fpe", o.p_fpe.shape)):
            if shape != self.meta.shape:
                raise DimensionMismatch(f"{name} dims {shape} differ from image dims {self.meta.shape}",
                                        self.meta.image_id)


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    images: tuple
    manual_reference: Optional[ManualReference] = None
    pathology: Optional[str] = None

    def __post_init__(self):
        if len(self.images) < 1:
            raise InputError(f"case {self.case_id!r} has no images")

    @property
    def n_images(self):
        return len(self.images)


@dataclass(frozen=True)
class PipelineConfig:
    stride_nm: float = 750.0
    window_nm: float = 1500.0
    suitability_threshold: float = 0.5
    detection_confidence_threshold: float = 0.5
    t_edd_um2: float = 3.0
    gbm_thin_nm: float = 250.0
    gbm_thick_nm: float = 450.0
    fpe_mild: float = 0.4
    fpe_severe: float = 0.7
    min_branch_nm: float = 300.0
    # None means 3 * window_nm
    max_ray_nm: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.stride_nm <= self.window_nm:
            raise ConfigError("require 0 < stride_nm <= window_nm")
        if not self.gbm_thin_nm < self.gbm_thick_nm:
            raise ConfigError("require gbm_thin_nm < gbm_thick_nm")
        if not self.fpe_mild < self.fpe_severe:
            raise ConfigError("require fpe_mild < fpe_severe")
        if not self.t_edd_um2 > 0:
            raise ConfigError("t_edd_um2 must be positive")
        if self.min_branch_nm < 0:
            raise ConfigError("min_branch_nm must be non-negative")
        if self.max_ray_nm is not None and not self.max_ray_nm > 0:
            raise ConfigError("max_ray_nm must be positive")

    @property
    def effective_max_ray_nm(self):
        return 3.0 * self.window_nm if self.max_ray_nm is None else self.max_ray_nm

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise MissingFile(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


# --------------------------------------------------------------------------
# raster and detection file formats
# --------------------------------------------------------------------------

def read_mask_png(path, image_id=None):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"mask file not found: {path}", image_id)
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise InputError(f"mask {path.name} must be 8-bit single-channel, got mode {im.mode}", image_id)
        arr = np.array(im)
    if arr.size and arr.max() >= N_LABELS:
        bad = sorted(int(v) for v in np.unique(arr[arr >= N_LABELS]))
        raise IllegalLabel(f"mask {path.name} contains labels {bad} outside 0..4", image_id)
    return arr


def write_mask_png(path, labels):
    Image.fromarray(np.ascontiguousarray(labels, dtype=np.uint8), mode="L").save(path, optimize=False)


def read_probability_png(path, image_id=None):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"probability file not found: {path}", image_id)
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise InputError(f"probability map {path.name} must be single-channel", image_id)
    if arr.dtype == np.uint8:
        # tolerated, though the documented format is 16-bit
        return arr.astype(np.float32) / np.float32(255)
    if arr.size and (arr.min() < 0 or arr.max() > PROB_SCALE):
        raise InputError(f"probability map {path.name} values outside 0..65535", image_id)
    return arr.astype(np.float32) / np.float32(PROB_SCALE)


def quantize_probability(values):
    return np.rint(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * PROB_SCALE).astype(np.uint16)


def write_probability_png(path, values):
    Image.fromarray(quantize_probability(values)).save(path, optimize=False)


def read_detections(path, image_id=None):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"detections file not found: {path}", image_id)
    try:
        data = json.loads(path.read_text())
        return tuple(
            DetectionBox(
                float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"]),
                float(d.get("confidence", 1.0)),
            )
            for d in data
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"malformed detections file {path.name}: {exc}", image_id) from exc


def write_detections(path, boxes):
    Path(path).write_text(json.dumps([b.to_dict() for b in boxes], indent=1))


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

_REQUIRED_IMAGE_KEYS = ("image_id", "width_px", "height_px", "nm_per_pixel",
                        "mask_file", "p_mea_file", "p_fpe_file", "detections_file")


@dataclass(frozen=True)
class ImageEntry:
    """One image entry of a manifest, with file paths resolved."""

    meta: ImageMeta
    mask_file: Path
    p_mea_file: Path
    p_fpe_file: Path
    detections_file: Path
    image_file: Optional[Path] = None


@dataclass(frozen=True)
class Manifest:
    case_id: str
    entries: tuple
    manual_reference: Optional[ManualReference] = None
    pathology: Optional[str] = None
    path: Optional[Path] = None


def read_manifest(manifest_path):
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "case_id" not in doc or not doc.get("images"):
        raise InputError(f"manifest {manifest_path} needs a case_id and a non-empty images list")
    base = manifest_path.parent
    entries = []
    for i, img in enumerate(doc["images"]):
        image_id = img.get("image_id", f"#{i}")
        for key in _REQUIRED_IMAGE_KEYS:
            if key not in img:
                if key.endswith("_file"):
                    raise MissingFile(f"manifest entry lacks {key}", image_id)
                raise InputError(f"manifest entry lacks {key}", image_id)
        meta = ImageMeta(
            image_id=str(img["image_id"]),
            width_px=int(img["width_px"]),
            height_px=int(img["height_px"]),
            nm_per_pixel=float(img["nm_per_pixel"]),
            magnification_k=None if img.get("magnification_k") is None else float(img["magnification_k"]),
        )
        entries.append(ImageEntry(
            meta=meta,
            mask_file=base / img["mask_file"],
            p_mea_file=base / img["p_mea_file"],
            p_fpe_file=base / img["p_fpe_file"],
            detections_file=base / img["detections_file"],
            image_file=base / img["image_file"] if img.get("image_file") else None,
        ))
    ids = [e.meta.image_id for e in entries]
    if len(set(ids)) != len(ids):
        raise InputError(f"duplicate image_id in manifest {manifest_path}")
    return Manifest(
        case_id=str(doc["case_id"]),
        entries=tuple(entries),
        manual_reference=ManualReference.from_dict(doc.get("manual_reference")),
        pathology=doc.get("pathology"),
        path=manifest_path,
    )


def read_image_outputs(entry: ImageEntry) -> ModelOutputs:
    """Read and cross-validate the model output files of one manifest entry."""
    meta = entry.meta
    labels = read_mask_png(entry.mask_file, meta.image_id)
    p_mea = read_probability_png(entry.p_mea_file, meta.image_id)
    p_fpe = read_probability_png(entry.p_fpe_file, meta.image_id)
    boxes = read_detections(entry.detections_file, meta.image_id)
    for name, arr in (("mask", labels), ("p_mea", p_mea), ("p_fpe", p_fpe)):
        if arr.shape != meta.shape:
            raise DimensionMismatch(
                f"{name} is {arr.shape[1]}x{arr.shape[0]} but image is {meta.width_px}x{meta.height_px}",
                meta.image_id,
            )
    for b in boxes:
        if b.clipped(meta.width_px, meta.height_px) is None:
            raise InputError(f"detection box {b} lies outside the image", meta.image_id)
    return ModelOutputs(
        mask=LabelMask(labels),
        p_mea=ProbabilityMap(p_mea, "measurement_suitability"),
        p_fpe=ProbabilityMap(p_fpe, "fpe"),
        boxes=boxes,
    )


def read_base_image(entry: ImageEntry):
    """Optional grayscale micrograph used as the overlay background."""
    if entry.image_file is None:
        return None
    if not entry.image_file.is_file():
        raise MissingFile(f"image file not found: {entry.image_file}", entry.meta.image_id)
    with Image.open(entry.image_file) as im:
        arr = np.array(im.convert("L"))
    if arr.shape != entry.meta.shape:
        raise DimensionMismatch("image file dims differ from manifest", entry.meta.image_id)
    return arr


def load_case(manifest_path) -> CaseRecord:
    """Load and validate every image of a case manifest."""
    manifest = read_manifest(manifest_path)
    images = tuple(
        ImageRecord(meta=e.meta, outputs=read_image_outputs(e), image=read_base_image(e))
        for e in manifest.entries
    )
    return CaseRecord(
        case_id=manifest.case_id,
        images=images,
        manual_reference=manifest.manual_reference,
        pathology=manifest.pathology,
    )


def manifest_document(case_id, image_docs, manual_reference=None, pathology=None):
    doc = {"case_id": case_id, "images": list(image_docs)}
    if pathology is not None:
        doc["pathology"] = pathology
    if manual_reference is not None:
        doc["manual_reference"] = manual_reference.to_dict()
    return doc


def save_case(case: CaseRecord, out_dir) -> Path:
    """Write a case in manifest form; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs = []
    for rec in case.images:
        iid = rec.meta.image_id
        doc = {
            "image_id": iid,
            "width_px": rec.meta.width_px,
            "height_px": rec.meta.height_px,
            "nm_per_pixel": rec.meta.nm_per_pixel,
            "mask_file": f"{iid}.mask.png",
            "p_mea_file": f"{iid}.p_mea.png",
            "p_fpe_file": f"{iid}.p_fpe.png",
            "detections_file": f"{iid}.detections.json",
        }
        if rec.meta.magnification_k is not None:
            doc["magnification_k"] = rec.meta.magnification_k
        write_mask_png(out_dir / doc["mask_file"], rec.outputs.mask.labels)
        write_probability_png(out_dir / doc["p_mea_file"], rec.outputs.p_mea.values)
        write_probability_png(out_dir / doc["p_fpe_file"], rec.outputs.p_fpe.values)
        write_detections(out_dir / doc["detections_file"], rec.outputs.boxes)
        if rec.image is not None:
            doc["image_file"] = f"{iid}.image.png"
            Image.fromarray(np.asarray(rec.image, dtype=np.uint8), mode="L").save(out_dir / doc["image_file"])
        docs.append(doc)
    manifest_path = out_dir / "manifest.json"
    doc = manifest_document(case.case_id, docs, case.manual_reference, case.pathology)
    manifest_path.write_text(json.dumps(doc, indent=2))
    return manifest_path


def mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)
