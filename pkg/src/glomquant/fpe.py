"""Foot process effacement degree from per-patch probabilities."""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import GlomQuantError, ProbabilityMap, mean


class NoPatches(GlomQuantError):
    pass


@dataclass(frozen=True)
class FpeResult:
    r_fpe: float
    n_patches: int
    grade: str
    probabilities: tuple = field(default=(), repr=False)

    def to_dict(self):
        return {"r_fpe": self.r_fpe, "grade": self.grade, "n_patches": self.n_patches}


def grade_fpe(r_fpe, mild=0.4, severe=0.7):
    if r_fpe < mild:
        return "mild"
    if r_fpe > severe:
        return "severe"
    return "moderate"


def patch_fpe_probability(patch, p_fpe_map: ProbabilityMap):
    return p_fpe_map.at(patch.sample.x, patch.sample.y)


def aggregate_fpe(probs, mild=0.4, severe=0.7):
    probs = list(probs)
    if not probs:
        raise NoPatches("no GFB patches to average")
    if any(not 0.0 <= p <= 1.0 for p in probs):
        raise ValueError("FPE probabilities must lie in [0, 1]")
    # fsum keeps the mean exactly 0 / 1 at the extremes and order independent
    r = min(1.0, max(0.0, mean(probs)))
    return r, grade_fpe(r, mild, severe)


def build_result(probs, mild=0.4, severe=0.7):
    r, grade = aggregate_fpe(probs, mild, severe)
    return FpeResult(r_fpe=r, n_patches=len(probs), grade=grade, probabilities=tuple(probs))
