"""Binary-classification evaluation: confusion counts, threshold metrics,
ROC curve, and AUC.

AUC is computed two ways on every call, by pairwise ranking (ties count
half) and by trapezoidal area under the ROC curve, and the two must agree
to 1e-9; the pairwise value is returned. Disagreement means a bug, so it
raises rather than silently picking one.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ScoredExample:
    score: float
    label: int


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ClassificationScores:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: bool  # True when a zero denominator forced the 0 sentinel


@dataclass(frozen=True)
class RocCurve:
    """(FPR, TPR) points from threshold +inf down to min score; both
    coordinates are non-decreasing, from (0, 0) to (1, 1)."""

    points: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    degenerate: bool = False


def confusion(scored: list[ScoredExample], threshold: float) -> ConfusionMatrix:
    """Tally predictions at ``threshold``: positive iff score >= threshold."""
    if not scored:
        raise ValueError("confusion matrix needs at least one example")
    tp = fp = tn = fn = 0
    for ex in scored:
        predicted_pos = ex.score >= threshold
        if ex.label == 1:
            if predicted_pos:
                tp += 1
            else:
                fn += 1
        else:
            if predicted_pos:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def classification_metrics(cm: ConfusionMatrix) -> ClassificationScores:
    """Accuracy, precision, recall, F1 from the four counts.

    Zero-denominator cases return 0 for the affected metrics and set the
    degenerate flag instead of dividing by zero.
    """
    if cm.total < 1:
        raise ValueError("empty confusion matrix")
    accuracy = (cm.tp + cm.tn) / cm.total
    degenerate = False
    if cm.tp + cm.fp > 0:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        precision, degenerate = 0.0, True
    if cm.tp + cm.fn > 0:
        recall = cm.tp / (cm.tp + cm.fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return ClassificationScores(accuracy=accuracy, precision=precision, recall=recall, f1=f1, degenerate=degenerate)


def _check_two_classes(scored: list[ScoredExample]) -> tuple[int, int]:
    n_pos = sum(1 for ex in scored if ex.label == 1)
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative example")
    return n_pos, n_neg


def roc_curve(scored: list[ScoredExample]) -> RocCurve:
    """Sweep thresholds at each distinct score descending, starting from
    a +inf sentinel, emitting one (FPR, TPR) point per threshold."""
    n_pos, n_neg = _check_two_classes(scored)
    by_score = sorted(scored, key=lambda ex: -ex.score)
    points = [(0.0, 0.0)]  # threshold +inf: nothing predicted positive
    tp = fp = 0
    i = 0
    while i < len(by_score):
        score = by_score[i].score
        while i < len(by_score) and by_score[i].score == score:
            if by_score[i].label == 1:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos))
    return RocCurve(points=tuple(points))


def _auc_trapezoid(curve: RocCurve) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(curve.points, curve.points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def _auc_pairwise(scored: list[ScoredExample]) -> float:
    """P(random positive ranked above random negative), ties counting 0.5,
    via midranks in O(n log n)."""
    n_pos, n_neg = _check_two_classes(scored)
    by_score = sorted(scored, key=lambda ex: ex.score)
    rank_sum_pos = 0.0
    i = 0
    while i < len(by_score):
        j = i
        while j < len(by_score) and by_score[j].score == by_score[i].score:
            j += 1
        midrank = (i + 1 + j) / 2.0  # average of 1-based ranks i+1 .. j
        for k in range(i, j):
            if by_score[k].label == 1:
                rank_sum_pos += midrank
        i = j
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc(scored: list[ScoredExample]) -> float:
    """Pairwise-ranking AUC, cross-checked against the trapezoidal area
    under the ROC curve on every call."""
    pairwise = _auc_pairwise(scored)
    trapezoid = _auc_trapezoid(roc_curve(scored))
    if abs(pairwise - trapezoid) > 1e-9:
        raise RuntimeError(f"AUC computations disagree: pairwise={pairwise!r}, trapezoid={trapezoid!r}")
    return pairwise


def auc_from_scores(scores, labels) -> float:
    return auc([ScoredExample(float(s), int(y)) for s, y in zip(scores, labels)])


def report(scored: list[ScoredExample], threshold: float = 0.5) -> MetricsReport:
    """Threshold metrics at 0.5 plus AUC, as one record."""
    cm = confusion(scored, threshold)
    cls = classification_metrics(cm)
    return MetricsReport(
        accuracy=cls.accuracy,
        precision=cls.precision,
        recall=cls.recall,
        f1=cls.f1,
        auc=auc(scored),
        degenerate=cls.degenerate,
    )
