"""Electron-dense deposit location and area per ultrastructural compartment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import DetectionBox, Label, LabelMask, N_LABELS, to_physical_area

BACKGROUND_CUTOFF = 0.8


class Location(str, Enum):
    SUBEPITHELIAL = "subepithelial"
    INTRAMEMBRANOUS = "intramembranous"
    SUBENDOTHELIAL = "subendothelial"
    MESANGIAL = "mesangial"


LOCATIONS = tuple(Location)

LABEL_TO_LOCATION = {
    Label.PODOCYTE: Location.SUBEPITHELIAL,
    Label.GBM: Location.INTRAMEMBRANOUS,
    Label.ENDOTHELIUM: Location.SUBENDOTHELIAL,
    Label.MESANGIUM: Location.MESANGIAL,
}
LOCATION_TO_LABEL = {v: k for k, v in LABEL_TO_LOCATION.items()}

# tie-break order for equal pixel counts
_PRIORITY = (Label.GBM, Label.PODOCYTE, Label.ENDOTHELIUM, Label.MESANGIUM)


@dataclass(frozen=True)
class BoxAssignment:
    image_id: str
    box: DetectionBox
    location: Location
    area_um2: float

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "box": self.box.to_dict(),
            "location": self.location.value,
            "area_um2": self.area_um2,
        }


@dataclass(frozen=True)
class EddAreas:
    t_p: float = 0.0
    t_g: float = 0.0
    t_e: float = 0.0
    t_m: float = 0.0
    assignments: tuple = field(default=(), repr=False)

    def by_location(self):
        return {
            Location.SUBEPITHELIAL: self.t_p,
            Location.INTRAMEMBRANOUS: self.t_g,
            Location.SUBENDOTHELIAL: self.t_e,
            Location.MESANGIAL: self.t_m,
        }

    def __add__(self, other):
        return EddAreas(
            self.t_p + other.t_p, self.t_g + other.t_g, self.t_e + other.t_e, self.t_m + other.t_m,
            self.assignments + other.assignments,
        )

    @classmethod
    def from_assignments(cls, assignments):
        totals = {loc: [] for loc in LOCATIONS}
        for a in assignments:
            totals[a.location].append(a.area_um2)
        s = {loc: math.fsum(v) for loc, v in totals.items()}
        return cls(
            t_p=s[Location.SUBEPITHELIAL], t_g=s[Location.INTRAMEMBRANOUS],
            t_e=s[Location.SUBENDOTHELIAL], t_m=s[Location.MESANGIAL],
            assignments=tuple(assignments),
        )


@dataclass(frozen=True)
class EddPresence:
    subepithelial: bool = False
    intramembranous: bool = False
    subendothelial: bool = False
    mesangial: bool = False

    def to_dict(self):
        return {loc.value: getattr(self, loc.value) for loc in LOCATIONS}


def box_pixel_slice(box: DetectionBox, width, height):
    """Row/column slices of the pixels whose centres fall inside the box."""
    c0 = max(int(math.ceil(box.x_min - 0.5)), 0)
    c1 = min(int(math.ceil(box.x_max - 0.5)), width)
    r0 = max(int(math.ceil(box.y_min - 0.5)), 0)
    r1 = min(int(math.ceil(box.y_max - 0.5)), height)
    return slice(r0, max(r1, r0)), slice(c0, max(c1, c0))


def assign_box_location(box: DetectionBox, mask: LabelMask):
    """Plurality non-background label over the box interior, or None if mostly background."""
    h, w = mask.shape
    rs, cs = box_pixel_slice(box, w, h)
    counts = np.bincount(mask.labels[rs, cs].ravel(), minlength=N_LABELS)
    total = counts.sum()
    if total == 0 or counts[Label.BACKGROUND] >= BACKGROUND_CUTOFF * total:
        return None
    best = max(_PRIORITY, key=lambda lab: (counts[lab], -_PRIORITY.index(lab)))
    if counts[best] == 0:
        return None
    return LABEL_TO_LOCATION[best]


def assign_image(image_id, boxes, mask: LabelMask, nm_per_pixel, confidence_threshold=0.5):
    """Assign every sufficiently confident box of one image."""
    h, w = mask.shape
    out = []
    for box in boxes:
        if box.confidence < confidence_threshold:
            continue
        clipped = box.clipped(w, h)
        if clipped is None:
            continue
        loc = assign_box_location(clipped, mask)
        if loc is None:
            continue
        out.append(BoxAssignment(image_id, box, loc, to_physical_area(clipped.area_px, nm_per_pixel)))
    return out


def presence(areas: EddAreas, t_edd_um2=3.0):
    a = areas.by_location()
    return EddPresence(**{loc.value: a[loc] > t_edd_um2 for loc in LOCATIONS})


def accumulate_edd(case, config):
    """Per-location deposit areas summed over all images of a case, and presence flags."""
    assignments = []
    for rec in case.images:
        assignments.extend(assign_image(
            rec.meta.image_id, rec.outputs.boxes, rec.outputs.mask,
            rec.meta.nm_per_pixel, config.detection_confidence_threshold,
        ))
    areas = EddAreas.from_assignments(assignments)
    return areas, presence(areas, config.t_edd_um2)


def edd_report(areas: EddAreas, pres: EddPresence):
    return {
        "areas_um2": {loc.value: v for loc, v in areas.by_location().items()},
        "presence": pres.to_dict(),
        "boxes": [a.to_dict() for a in areas.assignments],
    }
