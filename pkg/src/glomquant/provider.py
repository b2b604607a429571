"""Where model outputs enter the pipeline.

A provider answers one question per image: what did the segmentation,
classification and detection models produce? The file-backed provider reads the
rasters and detection lists referenced by a case manifest. An inference backend
only has to implement ``fetch_outputs`` with the same return type.
"""

from __future__ import annotations

from typing import Protocol

from .core import DimensionMismatch, ImageEntry, ModelOutputs, read_image_outputs


class ModelOutputProvider(Protocol):
    def fetch_outputs(self, image_ref: ImageEntry) -> ModelOutputs:
        ...


class FileProvider:
    """Stateless reader of manifest-referenced files; safe to share across workers."""

    def fetch_outputs(self, image_ref: ImageEntry) -> ModelOutputs:
        return read_image_outputs(image_ref)


class InMemoryProvider:
    """Serves pre-built outputs keyed by image_id (tests, notebooks)."""

    def __init__(self, outputs):
        self._outputs = dict(outputs)

    def fetch_outputs(self, image_ref: ImageEntry) -> ModelOutputs:
        out = self._outputs[image_ref.meta.image_id]
        if {out.mask.shape, out.p_mea.shape, out.p_fpe.shape} != {image_ref.meta.shape}:
            raise DimensionMismatch("provided output dims differ from the manifest", image_ref.meta.image_id)
        return out
