"""Threshold-swept ROC, trapezoidal AUC and sensitivity at fixed specificity.

The ROC is sampled on the fixed grid 0, 0.0001, ..., 1.0; a file is called
positive at threshold ``t`` when ``score >= t``.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .errors import CoverageMismatch, DegenerateLabels

THRESHOLD_STEP = 1e-4
N_THRESHOLDS = 10001
TARGET_SPECIFICITY = 0.95


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    specificity: np.ndarray
    sensitivity: np.ndarray

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.specificity.tolist(), self.sensitivity.tolist()))

    @property
    def fpr(self) -> np.ndarray:
        return 1.0 - self.specificity


@dataclass(frozen=True)
class EvalResult:
    auc: float
    sensitivity_at_95_specificity: float
    n_positive: int
    n_negative: int

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "sens_at_95spec": self.sensitivity_at_95_specificity,
            "n_pos": self.n_positive,
            "n_neg": self.n_negative,
        }


def threshold_grid() -> np.ndarray:
    # integer division keeps grid values correctly rounded (0.3 == 3000/10000)
    return np.arange(N_THRESHOLDS) / (N_THRESHOLDS - 1)


def align(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Pair scores with labels, either positionally or by file id when both are mappings."""
    if isinstance(scores, Mapping) or isinstance(labels, Mapping):
        if not (isinstance(scores, Mapping) and isinstance(labels, Mapping)):
            raise TypeError("scores and labels must both be mappings or both be sequences")
        missing = sorted(set(labels) - set(scores))
        if missing:
            raise CoverageMismatch(f"no score for {len(missing)} file(s): {missing[:5]}")
        ids = sorted(labels)
        s = np.array([scores[i] for i in ids], dtype=np.float64)
        y = np.array([labels[i] for i in ids])
    else:
        s = np.asarray(scores, dtype=np.float64)
        y = np.asarray(labels)
        if s.shape != y.shape:
            raise CoverageMismatch(f"{s.size} scores for {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(int)


def roc_curve(scores, labels) -> RocCurve:
    s, y = align(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative file")
    t = threshold_grid()
    pos = np.sort(s[y == 1])
    neg = np.sort(s[y == 0])
    # count of scores >= t
    tp = n_pos - np.searchsorted(pos, t, side="left")
    fp = n_neg - np.searchsorted(neg, t, side="left")
    return RocCurve(t, (n_neg - fp) / n_neg, tp / n_pos)


def auc_trapezoid(curve: RocCurve) -> float:
    """Area under sensitivity vs. false-positive rate by the trapezoidal rule."""
    fpr = np.concatenate([[0.0], curve.fpr, [1.0]])
    tpr = np.concatenate([[0.0], curve.sensitivity, [1.0]])
    order = np.lexsort((tpr, fpr))
    area = np.trapezoid(tpr[order], fpr[order])
    return float(min(1.0, max(0.0, area)))


def sensitivity_at_specificity(curve: RocCurve, target: float = TARGET_SPECIFICITY) -> float:
    ok = curve.specificity >= target
    return float(curve.sensitivity[ok].max()) if ok.any() else 0.0


def evaluate(scores, labels) -> EvalResult:
    s, y = align(scores, labels)
    curve = roc_curve(s, y)
    return EvalResult(
        auc=auc_trapezoid(curve),
        sensitivity_at_95_specificity=sensitivity_at_specificity(curve),
        n_positive=int(y.sum()),
        n_negative=int((y == 0).sum()),
    )
