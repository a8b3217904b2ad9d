"""Evaluation metrics for hallucination detection: ranking quality (AUROC),
selective-prediction quality (rejection-accuracy curve, its area, retained
accuracy at 50% coverage), and the best-threshold F1 of the hallucination
class.

Conventions, stated once because the literature leaves them implicit:

* ``uncertainty`` scores rank records, higher = more likely hallucinated.
* ``certainty`` orders records for rejection; the supervised rule is
  |p - 0.5| (predictions near 0.5 are rejected first). Unsupervised scorers
  are min-max normalized per evaluation set and use 1 - normalized score.
* Retained accuracy is the fraction of retained records with label 0.
* Certainty ties are broken by record order, for reproducibility.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class ScoredSet:
    """Per-record uncertainty scores with ground-truth labels."""

    ids: list[str]
    scores: np.ndarray  # float64, higher = more likely hallucinated
    labels: np.ndarray  # int, 1 = hallucinatory

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.ids) == self.scores.shape[0] == self.labels.shape[0]):
            raise MetricError("ScoredSet: ids, scores and labels must align")
        if not np.isfinite(self.scores).all():
            raise MetricError("ScoredSet: non-finite score")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i, s, y in zip(self.ids, self.scores, self.labels):
                f.write(f"{i}\t{float(s)!r}\t{int(y)}\n")

    @classmethod
    def load(cls, path) -> "ScoredSet":
        ids, scores, labels = [], [], []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise MetricError(f"score file line {lineno}: expected id<TAB>score<TAB>label")
                ids.append(parts[0])
                scores.append(float(parts[1]))
                labels.append(int(parts[2]))
        return cls(ids, np.array(scores), np.array(labels))


@dataclass
class EvalReport:
    auroc: float
    aurac: float
    ra_at_50: float
    f1_at_best: float
    f1_best_threshold: float
    rejection_curve: list[tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "aurac": self.aurac,
            "ra_at_50": self.ra_at_50,
            "f1_at_best": self.f1_at_best,
            "f1_best_threshold": self.f1_best_threshold,
            "n": len(self.rejection_curve),
            "rejection_curve": [[f, a] for f, a in self.rejection_curve],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(self.to_dict()) + "\n")

    def save_curve(self, path) -> None:
        """Two-column plain text (rejection_fraction, retained_accuracy)."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for frac, acc in self.rejection_curve:
                f.write(f"{frac!r}\t{acc!r}\n")


def certainty_supervised(p) -> np.ndarray | float:
    """Certainty of a probabilistic prediction: |p - 0.5|."""
    p = np.asarray(p, dtype=np.float64)
    out = np.abs(p - 0.5)
    return out if out.ndim else float(out)


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Map raw scores to [0, 1]; a constant vector maps to all 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full_like(s, 0.5)
    return (s - lo) / (hi - lo)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: over all (hallucinated, faithful) pairs, the
    fraction where the hallucinated record scores strictly higher, ties 0.5.

    Computed via tie-averaged ranks; exactly equal to pair counting because
    average ranks are multiples of one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auroc: both labels must be present")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _certainty_order(certainty: np.ndarray) -> np.ndarray:
    """Indices by decreasing certainty, ties broken by record order."""
    c = np.asarray(certainty, dtype=np.float64)
    return np.argsort(-c, kind="stable")


def rejection_accuracy_curve(labels, certainty) -> list[tuple[float, float]]:
    """Retained accuracy as a function of the rejected fraction.

    For k = 0..n-1 rejected (the k least certain records), retained accuracy
    is the fraction of the n-k most certain records with label 0.
    """
    y = np.asarray(labels, dtype=np.int64)
    n = y.shape[0]
    if n == 0:
        raise MetricError("rejection_accuracy_curve: empty input")
    order = _certainty_order(certainty)
    sorted_faithful = (y[order] == 0).astype(np.int64)
    prefix = np.cumsum(sorted_faithful)
    return [(k / n, int(prefix[n - k - 1]) / (n - k)) for k in range(n)]


def aurac(curve: list[tuple[float, float]]) -> float:
    """Rectangle-rule mean of retained accuracies over the n rejection
    fractions. (The trapezoid variant is available for sensitivity checks.)"""
    if not curve:
        raise MetricError("aurac: empty curve")
    return sum(acc for _, acc in curve) / len(curve)


def aurac_trapezoid(curve: list[tuple[float, float]]) -> float:
    """Trapezoid-rule alternative over the same curve, for comparison."""
    if len(curve) < 2:
        return curve[0][1] if curve else math.nan
    fracs = [f for f, _ in curve]
    accs = [a for _, a in curve]
    total = 0.0
    for i in range(len(curve) - 1):
        total += (fracs[i + 1] - fracs[i]) * (accs[i] + accs[i + 1]) / 2.0
    return total / (fracs[-1] - fracs[0])


def ra_at_50(labels, certainty) -> float:
    """Fraction label 0 among the ceil(n/2) most certain records."""
    y = np.asarray(labels, dtype=np.int64)
    n = y.shape[0]
    if n == 0:
        raise MetricError("ra_at_50: empty input")
    m = (n + 1) // 2
    order = _certainty_order(certainty)
    kept = y[order[:m]]
    return int((kept == 0).sum()) / m


def f1_at_best(scores, labels) -> tuple[float, float]:
    """Maximum F1 of the hallucination class over score thresholds.

    Predicts hallucination when score >= threshold. Candidate thresholds are
    midpoints between consecutive distinct sorted scores plus -inf and +inf
    sentinels; returns (best F1, lowest threshold achieving it).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise MetricError("f1_at_best: no positive labels")
    distinct = np.unique(s)
    thresholds = [-math.inf]
    thresholds += [(distinct[i] + distinct[i + 1]) / 2.0 for i in range(len(distinct) - 1)]
    thresholds.append(math.inf)
    best_f1, best_thr = -1.0, math.inf
    for thr in thresholds:
        pred = s >= thr
        tp = int((pred & (y == 1)).sum())
        fp = int((pred & (y == 0)).sum())
        fn = n_pos - tp
        f1 = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        if f1 > best_f1:
            best_f1, best_thr = f1, thr
    return float(best_f1), float(best_thr)


def f1_at_threshold(scores, labels, threshold: float) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def evaluate(uncertainty, labels, certainty) -> EvalReport:
    """Assemble the full report from an uncertainty ranking and a certainty
    ordering (which may come from different rules, see module docstring)."""
    curve = rejection_accuracy_curve(labels, certainty)
    f1, thr = f1_at_best(uncertainty, labels)
    return EvalReport(
        auroc=auroc(uncertainty, labels),
        aurac=aurac(curve),
        ra_at_50=ra_at_50(labels, certainty),
        f1_at_best=f1,
        f1_best_threshold=thr,
        rejection_curve=curve,
    )


def evaluate_supervised(p, labels) -> EvalReport:
    """Report for a probabilistic detector: p ranks hallucinations, |p - 0.5|
    orders rejection."""
    p = np.asarray(p, dtype=np.float64)
    return evaluate(p, labels, certainty_supervised(p))


def evaluate_unsupervised(raw_scores, labels) -> EvalReport:
    """Report for a raw uncertainty scorer: scores are min-max normalized so
    threshold metrics live on [0, 1]; certainty is 1 - normalized score."""
    u = minmax_normalize(raw_scores)
    return evaluate(u, labels, 1.0 - u)
