"""Detection scoring.

One-to-one greedy matching at an IoU threshold (0.2 by default: small
fruit make the usual 0.5 needlessly punishing, and 0.2 still corresponds
to a 58% per-axis overlap for equal boxes), precision-recall curves swept
over every distinct score, average precision as the area under the
monotone precision envelope, F1 operating points selected on a validation
curve, cluster-relaxed recall, and the training-set-size ablation harness.

Matching is greedy by descending detection score with a canonical
tie-break, the community protocol for one-to-one evaluation: multiple
detections on one fruit cost false positives and a single detection
covering a cluster leaves the extra fruit as false negatives. IoU exactly
at the threshold is accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .dataset import Manifest, draw_training_subset
from .detector import DetectRequest
from .geometry import Box, clip_box, iou
from .proposals import Detection, detection_sort_key, sort_detections
from .seeding import derive_seed


@dataclass(frozen=True)
class MatchConfig:
    """Matching acceptance rule. One-to-one matching is always enforced."""

    iou_threshold: float = 0.2
    one_to_one: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(
                f"iou_threshold must lie in (0, 1], got {self.iou_threshold}"
            )
        if not self.one_to_one:
            raise ValueError("only one-to-one matching is supported")


@dataclass(frozen=True)
class MatchResult:
    """Partition of detections and ground truths into TP / FP / FN."""

    tp: tuple[tuple[Detection, Box], ...]
    fp: tuple[Detection, ...]
    fn: tuple[Box, ...]

    @property
    def precision(self) -> float:
        total = len(self.tp) + len(self.fp)
        return len(self.tp) / total if total else 0.0

    @property
    def recall(self) -> float:
        total = len(self.tp) + len(self.fn)
        return len(self.tp) / total if total else 0.0


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


@dataclass(frozen=True)
class PRCurve:
    """Score-threshold sweep; thresholds descending, recall non-decreasing."""

    points: tuple[PRPoint, ...]

    def to_csv(self) -> bytes:
        lines = ["threshold,precision,recall"]
        for p in self.points:
            lines.append(f"{p.threshold:.6f},{p.precision:.6f},{p.recall:.6f}")
        return ("\n".join(lines) + "\n").encode("utf-8")


@dataclass(frozen=True)
class Metrics:
    """Headline numbers at a fixed operating threshold."""

    ap: float
    precision: float
    recall: float
    f1: float
    operating_threshold: float

    def to_json_obj(self) -> dict:
        return {
            "ap": self.ap,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "operating_threshold": self.operating_threshold,
        }


@dataclass(frozen=True)
class AblationRow:
    n_train: int
    repeats: int
    ap_mean: float
    ap_std: float


@dataclass(frozen=True)
class AblationReport:
    rows: tuple[AblationRow, ...]

    def to_json_obj(self) -> dict:
        return {
            "rows": [
                {
                    "n_train": r.n_train,
                    "repeats": r.repeats,
                    "ap_mean": r.ap_mean,
                    "ap_std": r.ap_std,
                }
                for r in self.rows
            ]
        }

    def to_csv(self) -> bytes:
        lines = ["n_train,repeats,ap_mean,ap_std"]
        for r in self.rows:
            lines.append(f"{r.n_train},{r.repeats},{r.ap_mean:.6f},{r.ap_std:.6f}")
        return ("\n".join(lines) + "\n").encode("utf-8")


def match_detections(
    dets: Sequence[Detection], gts: Sequence[Box], cfg: MatchConfig
) -> MatchResult:
    """Greedy one-to-one matching.

    Detections are visited in canonical (descending score) order; each
    claims the unmatched ground truth with the highest IoU when that IoU
    reaches the threshold. Leftover detections are false positives,
    leftover ground truths false negatives.
    """
    ordered = sort_detections(dets)
    unmatched = list(range(len(gts)))
    tp: list[tuple[Detection, Box]] = []
    fp: list[Detection] = []
    for det in ordered:
        best_iou = 0.0
        best_pos = -1
        for pos, gi in enumerate(unmatched):
            overlap = iou(det.box, gts[gi])
            if overlap > best_iou:
                best_iou = overlap
                best_pos = pos
        if best_pos >= 0 and best_iou >= cfg.iou_threshold:
            tp.append((det, gts[unmatched[best_pos]]))
            del unmatched[best_pos]
        else:
            fp.append(det)
    fn = tuple(gts[i] for i in unmatched)
    return MatchResult(tp=tuple(tp), fp=tuple(fp), fn=fn)


class _ImageMatcher:
    """Incremental greedy matcher fed detections in global score order."""

    def __init__(self, gts: Sequence[Box], iou_threshold: float):
        self._gts = gts
        self._unmatched = list(range(len(gts)))
        self._threshold = iou_threshold
        self.tp = 0
        self.fp = 0

    def feed(self, det: Detection) -> None:
        best_iou = 0.0
        best_pos = -1
        for pos, gi in enumerate(self._unmatched):
            overlap = iou(det.box, self._gts[gi])
            if overlap > best_iou:
                best_iou = overlap
                best_pos = pos
        if best_pos >= 0 and best_iou >= self._threshold:
            del self._unmatched[best_pos]
            self.tp += 1
        else:
            self.fp += 1


def pr_curve(
    per_image: Sequence[tuple[Sequence[Detection], Sequence[Box]]],
    cfg: MatchConfig,
) -> PRCurve:
    """Precision-recall sweep over every distinct detection score.

    Detections pool across images; at each threshold every image is
    matched on its detections scoring at or above it, and precision/recall
    aggregate the pooled TP/FP counts against the total ground truth.
    """
    total_gt = sum(len(gts) for _, gts in per_image)
    if total_gt == 0:
        raise ValueError("cannot sweep a precision-recall curve with zero ground truth")

    matchers = [_ImageMatcher(gts, cfg.iou_threshold) for _, gts in per_image]
    pool = sorted(
        (
            (det, image_index)
            for image_index, (dets, _) in enumerate(per_image)
            for det in dets
        ),
        key=lambda item: (detection_sort_key(item[0]), item[1]),
    )
    points: list[PRPoint] = []
    position = 0
    while position < len(pool):
        score = pool[position][0].score
        while position < len(pool) and pool[position][0].score == score:
            det, image_index = pool[position]
            matchers[image_index].feed(det)
            position += 1
        tp = sum(m.tp for m in matchers)
        fp = sum(m.fp for m in matchers)
        points.append(
            PRPoint(
                threshold=score,
                precision=tp / (tp + fp) if tp + fp else 0.0,
                recall=tp / total_gt,
            )
        )
    return PRCurve(points=tuple(points))


def average_precision(curve: PRCurve) -> float:
    """Area under the monotone precision envelope of the curve.

    All-points interpolation: precision at recall r is the maximum
    precision among points with recall >= r; the envelope integrates over
    recall, and an empty curve scores 0.
    """
    if not curve.points:
        return 0.0
    pts = sorted((p.recall, p.precision) for p in curve.points)
    # Suffix max turns precision into its monotone envelope.
    envelope: list[float] = [0.0] * len(pts)
    best = 0.0
    for i in range(len(pts) - 1, -1, -1):
        best = max(best, pts[i][1])
        envelope[i] = best
    area = 0.0
    previous_recall = 0.0
    for (recall, _), env in zip(pts, envelope):
        if recall > previous_recall:
            area += (recall - previous_recall) * env
            previous_recall = recall
    return area


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def select_operating_threshold(curve: PRCurve) -> tuple[float, Metrics]:
    """Threshold with the best F1 on a validation curve.

    Ties go to the lower threshold (higher recall). Returns the threshold
    with the full metrics at that operating point.
    """
    if not curve.points:
        raise ValueError("cannot select a threshold from an empty curve")
    best: PRPoint | None = None
    best_f1 = -1.0
    for point in curve.points:  # thresholds descending
        f1 = f1_score(point.precision, point.recall)
        if f1 >= best_f1:
            best_f1 = f1
            best = point
    assert best is not None
    metrics = Metrics(
        ap=average_precision(curve),
        precision=best.precision,
        recall=best.recall,
        f1=best_f1,
        operating_threshold=best.threshold,
    )
    return best.threshold, metrics


def relax_clusters(result: MatchResult, cfg: MatchConfig) -> MatchResult:
    """Cluster-relaxed scoring: one detection may stand in for a cluster.

    Every false-negative ground truth that overlaps some true-positive
    detection at the matching threshold is dropped from the false
    negatives; matched pairs and false positives are untouched, so
    precision is unchanged and recall can only rise.
    """
    tp_boxes = [det.box for det, _ in result.tp]
    fn = tuple(
        g
        for g in result.fn
        if not any(iou(g, b) >= cfg.iou_threshold for b in tp_boxes)
    )
    return MatchResult(tp=result.tp, fp=result.fp, fn=fn)


# ---------------------------------------------------------------------------
# Training-set-size ablation harness

#: Builds the detector for one ablation draw. Receives the subset size,
#: the repeat index, the drawn training records and the derived seed.
DetectorFactory = Callable[[int, int, Sequence, int], object]


def oracle_schedule_factory(
    ground_truth,
    base_noise,
    drop_schedule: Callable[[int], float],
) -> DetectorFactory:
    """Oracle factory whose miss rate is a function of training-set size.

    Simulates a detector improving with more training data: each draw gets
    an oracle with drop_rate = drop_schedule(n) and the draw's own seed.
    """
    from dataclasses import replace

    from .detector import OracleDetector

    def factory(n_train: int, repeat: int, subset: Sequence, seed: int):
        noise = replace(base_noise, drop_rate=drop_schedule(n_train), seed=seed)
        return OracleDetector(ground_truth, noise)

    return factory


def ablate(
    manifest: Manifest,
    sizes: Sequence[int],
    repeats: int,
    detector_factory: DetectorFactory,
    seed: int,
    *,
    match_config: MatchConfig = MatchConfig(),
) -> AblationReport:
    """Detection quality versus training-set size.

    For each size N, ``repeats`` training subsets are drawn without
    replacement with seeds derived from (seed, N, repeat); each draw's
    detector runs whole-image detection over the test split and the AP
    samples aggregate to mean and sample standard deviation.
    """
    train = manifest.split("train")
    test = manifest.split("test")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    bad = [n for n in sizes if n < 1 or n > len(train)]
    if bad:
        raise ValueError(
            f"subset sizes {bad} invalid for a training pool of {len(train)}"
        )
    if not test:
        raise ValueError("manifest has no test split to evaluate on")

    gts = {
        r.id: [b for b in (clip_box(a.box, r.size) for a in r.annotations) if b]
        for r in test
    }
    rows: list[AblationRow] = []
    for n in sizes:
        aps: list[float] = []
        for repeat in range(repeats):
            draw_seed = derive_seed(seed, "ablate", n, repeat)
            subset = draw_training_subset(train, n, draw_seed)
            detector = detector_factory(n, repeat, subset, draw_seed)
            per_image = []
            for record in test:
                request = DetectRequest(image_id=record.id, rect=record.size.as_box())
                per_image.append((detector.detect(request), gts[record.id]))
            aps.append(average_precision(pr_curve(per_image, match_config)))
        mean = sum(aps) / len(aps)
        if len(aps) > 1:
            std = math.sqrt(sum((a - mean) ** 2 for a in aps) / (len(aps) - 1))
        else:
            std = 0.0
        rows.append(AblationRow(n_train=n, repeats=repeats, ap_mean=mean, ap_std=std))
    return AblationReport(rows=tuple(rows))
