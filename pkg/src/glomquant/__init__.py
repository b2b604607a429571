"""Post-inference morphometry for glomerular electron micrographs.

Takes segmentation masks, patch classifier probability maps and deposit
detections, and turns them into GBM thickness, foot process effacement and
electron-dense deposit measurements per case.
"""

from .core import (
    CaseRecord, DetectionBox, GlomQuantError, ImageMeta, ImageRecord, InputError, Label,
    LabelMask, ManualReference, ModelOutputs, PipelineConfig, ProbabilityMap, load_case, save_case,
)
from .gbm import grade_thickness
from .fpe import grade_fpe
from .phantom import PhantomSpec, build_phantom, generate_phantom_case
from .pipeline import process_case, quantify_case_record

__version__ = "0.1.0"

__all__ = [
    "CaseRecord", "DetectionBox", "GlomQuantError", "ImageMeta", "ImageRecord", "InputError", "Label",
    "LabelMask", "ManualReference", "ModelOutputs", "PipelineConfig", "ProbabilityMap",
    "build_phantom", "generate_phantom_case", "grade_fpe", "grade_thickness", "load_case",
    "process_case", "quantify_case_record", "save_case", "PhantomSpec",
]
