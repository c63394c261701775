"""Detection quality: IOU, greedy matching, precision/recall curves, AP and mAP."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBox, NoGroundTruth


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    class_id: int
    box: tuple       # x_min, y_min, x_max, y_max in pixels

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise InvalidBox(f"degenerate box {self.box}")


def iou_boxes(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    if not (ax0 < ax1 and ay0 < ay1 and bx0 < bx1 and by0 < by1):
        raise InvalidBox(f"degenerate box in {a} / {b}")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


@dataclass
class MatchOutcome:
    """Detections in processing order with their TP/FP flag.

    ``TP(c)``/``FP(c)`` count flagged detections scoring at least ``c``;
    ``FN(c) = num_gt - TP(c)``.
    """

    scores: np.ndarray
    is_tp: np.ndarray
    num_gt: int
    matched_gt: list = field(default_factory=list)   # gt index or -1, per detection

    def counts(self, c):
        above = self.scores >= c
        tp = int(np.count_nonzero(self.is_tp & above))
        fp = int(np.count_nonzero(~self.is_tp & above))
        return tp, fp, self.num_gt - tp


def match_detections(dets, gts, iou_target=0.5, inclusive=False):
    """Greedy dataset-wide matching in score order.

    A detection is a true positive when an unmatched ground truth of the same
    image and class overlaps it with IOU > ``iou_target`` (``>=`` when
    ``inclusive``); it takes the best-overlapping such ground truth.
    """
    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].score, dets[i].image_id, i))
    by_key = {}
    for j, g in enumerate(gts):
        by_key.setdefault((g.image_id, g.class_id), []).append(j)
    used = [False] * len(gts)
    is_tp, matched = [], []
    for i in order:
        d = dets[i]
        best, best_iou = -1, -1.0
        for j in by_key.get((d.image_id, d.class_id), ()):
            if used[j]:
                continue
            iou = iou_boxes(d.box, gts[j].box)
            ok = iou >= iou_target if inclusive else iou > iou_target
            if ok and iou > best_iou:
                best, best_iou = j, iou
        if best >= 0:
            used[best] = True
        is_tp.append(best >= 0)
        matched.append(best)
    return MatchOutcome(
        scores=np.array([dets[i].score for i in order], dtype=np.float64),
        is_tp=np.array(is_tp, dtype=bool),
        num_gt=len(gts),
        matched_gt=matched,
    )


@dataclass
class PRCurve:
    confidence: np.ndarray      # descending
    precision: np.ndarray
    recall: np.ndarray

    @property
    def smoothed(self):
        """Precision made monotone: the best precision at this recall or beyond."""
        return np.maximum.accumulate(self.precision[::-1])[::-1]

    def to_text(self):
        lines = ["confidence,precision,recall"]
        lines += [f"{c:.6f},{p:.6f},{r:.6f}"
                  for c, p, r in zip(self.confidence, self.precision, self.recall)]
        return "\n".join(lines) + "\n"


def pr_curve(outcome: MatchOutcome) -> PRCurve:
    if outcome.num_gt == 0:
        raise NoGroundTruth("precision/recall undefined without ground truth")
    scores = outcome.scores
    if scores.size == 0:
        empty = np.empty(0)
        return PRCurve(empty, empty, empty)
    tp = np.cumsum(outcome.is_tp)
    fp = np.cumsum(~outcome.is_tp)
    # last position of each distinct score: scores are sorted descending
    last = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    tp, fp = tp[last], fp[last]
    denom = tp + fp
    precision = np.where(denom > 0, tp / np.maximum(denom, 1), 1.0)
    return PRCurve(scores[last].copy(), precision, tp / outcome.num_gt)


def average_precision(curve: PRCurve) -> float:
    """Exact area under the smoothed step curve; recall beyond the last point adds nothing."""
    if curve.recall.size == 0:
        return 0.0
    steps = np.diff(np.concatenate([[0.0], curve.recall]))
    return float(np.sum(steps * curve.smoothed))


@dataclass
class TargetResult:
    iou_target: float
    ap_per_class: dict
    mAP: float
    precision: float
    recall: float
    curves: dict            # class id -> PRCurve


@dataclass
class EvalReport:
    c_report: float
    results: list           # TargetResult, in target order

    def by_target(self, target):
        for r in self.results:
            if abs(r.iou_target - target) < 1e-12:
                return r
        raise KeyError(target)

    def to_text(self):
        lines = [f"{'IOU_target':>10}  {'Recall (c = %g)' % self.c_report:>17}"
                 f"  {'Precision (c = %g)' % self.c_report:>20}  {'mAP':>8}"]
        for r in self.results:
            lines.append(f"{r.iou_target:>10.2f}  {r.recall:>17.2f}  {r.precision:>20.2f}"
                         f"  {100 * r.mAP:>7.2f}%")
        return "\n".join(lines) + "\n"


def map_report(dets, gts, targets=(0.5, 0.75), c_report=0.25, inclusive=False):
    """Per-class AP and their unweighted mean for every IOU target.

    Precision and recall are reported at threshold ``c_report`` (scores strictly
    above it) over all classes pooled.
    """
    if not targets:
        raise ValueError("at least one IOU target is required")
    if not gts:
        raise NoGroundTruth("no ground-truth boxes supplied")
    classes = sorted({g.class_id for g in gts})
    # detections of classes absent from the ground truth are false positives
    stray_fp = sum(1 for d in dets if d.class_id not in classes and d.score > c_report)
    results = []
    for target in targets:
        aps, curves = {}, {}
        tp_at, fp_at = 0, stray_fp
        for cls in classes:
            outcome = match_detections([d for d in dets if d.class_id == cls],
                                       [g for g in gts if g.class_id == cls],
                                       target, inclusive)
            curve = pr_curve(outcome)
            curves[cls] = curve
            aps[cls] = average_precision(curve)
            above = outcome.scores > c_report
            tp_at += int(np.count_nonzero(outcome.is_tp & above))
            fp_at += int(np.count_nonzero(~outcome.is_tp & above))
        precision = tp_at / (tp_at + fp_at) if tp_at + fp_at else 1.0
        results.append(TargetResult(float(target), aps, float(np.mean(list(aps.values()))),
                                    precision, tp_at / len(gts), curves))
    return EvalReport(c_report, results)
