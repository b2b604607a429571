"""Agreement and discrimination statistics for automated vs. reference gradings."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov

from .core import GlomQuantError

LOA_MULTIPLIER = 1.96


class EmptySample(GlomQuantError):
    pass


class DegenerateVariance(GlomQuantError):
    pass


class DegenerateVarianceWarning(UserWarning):
    pass


class SingleClass(GlomQuantError):
    pass


@dataclass(frozen=True)
class KsResult:
    d: float
    p: float

    @property
    def significant(self):
        return not self.p > 0.05


@dataclass(frozen=True)
class BlandAltman:
    mean_diff: float
    loa_low: float
    loa_high: float
    pct_within: float
    n: int
    degenerate: bool = False


@dataclass(frozen=True)
class RocCurve:
    fpr: tuple
    tpr: tuple
    thresholds: tuple
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr, self.tpr))


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value.

    The p-value uses the limiting Kolmogorov distribution at the effective sample size
    n_a*n_b/(n_a+n_b); it is approximate for small samples.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be non-empty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = a.size * b.size / (a.size + b.size)
    p = float(kolmogorov(math.sqrt(n_eff) * d))
    return KsResult(d=d, p=min(1.0, max(0.0, p)))


def pearson(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson needs two paired 1-D sequences")
    if a.size < 2:
        raise DegenerateVariance("need at least two pairs")
    da = a - a.mean()
    db = b - b.mean()
    saa, sbb = float(np.dot(da, da)), float(np.dot(db, db))
    if saa == 0 or sbb == 0:
        raise DegenerateVariance("zero variance in one of the samples")
    r = float(np.dot(da, db)) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


def bland_altman(a, b):
    """Mean difference, 1.96-sd limits of agreement and fraction of pairs inside them.

    Zero spread in the differences is flagged (``degenerate``) with a warning rather
    than raised, since identical measurements are a legitimate outcome.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("bland_altman needs two paired 1-D sequences")
    if a.size < 2:
        raise EmptySample("need at least two pairs")
    diffs = a - b
    md = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0:
        warnings.warn("differences have zero spread; limits collapse to the mean",
                      DegenerateVarianceWarning, stacklevel=2)
        return BlandAltman(md, md, md, 1.0, int(a.size), degenerate=True)
    lo, hi = md - LOA_MULTIPLIER * sd, md + LOA_MULTIPLIER * sd
    within = float(np.mean((diffs >= lo) & (diffs <= hi)))
    return BlandAltman(md, lo, hi, within, int(a.size))


def roc_auc(scores, labels):
    """ROC curve over every distinct score threshold, AUC by the trapezoidal rule."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be paired 1-D sequences")
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("need at least one positive and one negative label")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    # last index of each run of equal scores
    distinct = np.flatnonzero(np.diff(s) != 0)
    ends = np.concatenate([distinct, [s.size - 1]])
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    thresholds = np.concatenate([[np.inf], s[ends]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(
        fpr=tuple(fpr.tolist()), tpr=tuple(tpr.tolist()),
        thresholds=tuple(thresholds.tolist()), auc=auc,
    )


# one-vs-rest scores for graded outcomes: larger means "more like this grade"
def gbm_grade_score(d_a_nm, grade, thin_nm=250.0, thick_nm=450.0):
    if grade == "thinning":
        return -d_a_nm
    if grade == "thickening":
        return d_a_nm
    return -abs(d_a_nm - 0.5 * (thin_nm + thick_nm))


def fpe_grade_score(r_fpe, grade, mild=0.4, severe=0.7):
    if grade == "mild":
        return -r_fpe
    if grade == "severe":
        return r_fpe
    return -abs(r_fpe - 0.5 * (mild + severe))


def one_vs_rest_roc(values, true_grades, grade, score_fn):
    scores = [score_fn(v, grade) for v in values]
    labels = [g == grade for g in true_grades]
    return roc_auc(scores, labels)


# --------------------------------------------------------------------------
# cohort-level comparison
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CohortRow:
    case_id: str
    pathology: str
    d_a_nm: float = None
    gbm_grade: str = None
    r_fpe: float = None
    fpe_grade: str = None
    edd_areas: dict = None
    manual_thickness_nm: float = None
    manual_gbm_grade: str = None
    manual_fpe_grade: str = None
    manual_edd_presence: dict = None

    @classmethod
    def from_report(cls, report, thin_nm=250.0, thick_nm=450.0):
        from .gbm import grade_thickness

        g, f = report.get("gbm", {}), report.get("fpe", {})
        man = report.get("manual_reference") or {}
        manual_grade = man.get("gbm_grade")
        if manual_grade is None and man.get("gbm_thickness_nm") is not None:
            manual_grade = grade_thickness(man["gbm_thickness_nm"], thin_nm, thick_nm)
        return cls(
            case_id=report["case_id"],
            pathology=report.get("pathology") or "unlabeled",
            d_a_nm=g.get("d_a_nm"), gbm_grade=g.get("grade"),
            r_fpe=f.get("r_fpe"), fpe_grade=f.get("grade"),
            edd_areas=report.get("edd", {}).get("areas_um2"),
            manual_thickness_nm=man.get("gbm_thickness_nm"),
            manual_gbm_grade=manual_grade,
            manual_fpe_grade=man.get("fpe_grade"),
            manual_edd_presence=man.get("edd_presence"),
        )


def _roc_entry(values, truths, positive, score_fn):
    pairs = [(v, t) for v, t in zip(values, truths) if v is not None and t is not None]
    if not pairs:
        return {"error": "no paired values"}
    try:
        roc = roc_auc([score_fn(v) for v, _ in pairs], [t == positive for _, t in pairs])
    except SingleClass as exc:
        return {"error": f"SingleClass: {exc}", "n": len(pairs)}
    return {"auc": roc.auc, "n": len(pairs), "fpr": list(roc.fpr), "tpr": list(roc.tpr)}


def cohort_statistics(rows, config=None):
    """K-S per pathology group, pooled Pearson and Bland-Altman, one-vs-rest ROC tasks."""
    thin = getattr(config, "gbm_thin_nm", 250.0)
    thick = getattr(config, "gbm_thick_nm", 450.0)
    mild = getattr(config, "fpe_mild", 0.4)
    severe = getattr(config, "fpe_severe", 0.7)
    out = {"n_cases": len(rows), "ks": {}, "pearson": None, "bland_altman": None, "roc": {}}

    for group in sorted({r.pathology for r in rows}):
        auto = [r.d_a_nm for r in rows if r.pathology == group and r.d_a_nm is not None]
        manual = [r.manual_thickness_nm for r in rows
                  if r.pathology == group and r.manual_thickness_nm is not None]
        try:
            ks = ks_two_sample(auto, manual)
            out["ks"][group] = {"d": ks.d, "p": ks.p, "significant": ks.significant,
                                "n_auto": len(auto), "n_manual": len(manual)}
        except EmptySample as exc:
            out["ks"][group] = {"error": f"EmptySample: {exc}"}

    paired = [(r.d_a_nm, r.manual_thickness_nm) for r in rows
              if r.d_a_nm is not None and r.manual_thickness_nm is not None]
    a = [p[0] for p in paired]
    b = [p[1] for p in paired]
    try:
        out["pearson"] = {"r": pearson(a, b), "n": len(paired)}
    except DegenerateVariance as exc:
        out["pearson"] = {"error": f"DegenerateVariance: {exc}", "n": len(paired)}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateVarianceWarning)
            ba = bland_altman(a, b)
        out["bland_altman"] = {"mean_diff": ba.mean_diff, "loa_low": ba.loa_low, "loa_high": ba.loa_high,
                               "pct_within": ba.pct_within, "n": ba.n, "degenerate": ba.degenerate}
    except EmptySample as exc:
        out["bland_altman"] = {"error": f"EmptySample: {exc}", "n": len(paired)}

    d_a = [r.d_a_nm for r in rows]
    for grade in ("thinning", "normal", "thickening"):
        out["roc"][f"gbm_{grade}"] = _roc_entry(
            d_a, [r.manual_gbm_grade for r in rows], grade,
            lambda v, g=grade: gbm_grade_score(v, g, thin, thick))
    r_fpe = [r.r_fpe for r in rows]
    for grade in ("mild", "moderate", "severe"):
        out["roc"][f"fpe_{grade}"] = _roc_entry(
            r_fpe, [r.manual_fpe_grade for r in rows], grade,
            lambda v, g=grade: fpe_grade_score(v, g, mild, severe))
    for loc in ("subepithelial", "intramembranous", "subendothelial", "mesangial"):
        areas = [None if r.edd_areas is None else r.edd_areas.get(loc) for r in rows]
        truth = [None if r.manual_edd_presence is None else r.manual_edd_presence.get(loc) for r in rows]
        out["roc"][f"edd_{loc}"] = _roc_entry(areas, truth, True, lambda v: v)
    return out


def roc_point_rows(cohort_stats):
    """Flatten every ROC curve into (task, fpr, tpr) rows for CSV export."""
    rows = []
    for task, entry in cohort_stats["roc"].items():
        for fpr, tpr in zip(entry.get("fpr", ()), entry.get("tpr", ())):
            rows.append((task, fpr, tpr))
    return rows
