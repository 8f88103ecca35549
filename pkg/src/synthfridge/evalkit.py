"""Detection scoring: IoU matching, TP/FP/FN, precision, recall and mAP = precision * recall.

Single class. Counts are pooled over all images before the ratios are taken
(micro-averaging). Detections overlapping a ``DontCare`` ground truth are
discarded instead of counted as false positives.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .annotate import KittiParseError, ObjectAnnotation, kitti_line, parse_kitti_line
from .detector_math import Detection
from .geometry import iou_matrix

DEFAULT_IOU = 0.5


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    # detection index -> ground-truth index for true positives
    assignment: dict[int, int] = field(default_factory=dict)
    discarded: list[int] = field(default_factory=list)


@dataclass
class ImageResult:
    image_id: str
    tp: int
    fp: int
    fn: int


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_thresh: float = DEFAULT_IOU
    per_image: list[ImageResult] = field(default_factory=list)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def map(self) -> float:
        return self.precision * self.recall

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall,
            "map": self.map, "map_x100": 100 * self.map,
            "iou_thresh": self.iou_thresh, "images": len(self.per_image),
        }

    def summary(self) -> str:
        return (f"images {len(self.per_image)}  TP {self.tp}  FP {self.fp}  FN {self.fn}\n"
                f"precision {self.precision:.4f}  recall {self.recall:.4f}  "
                f"mAP {self.map:.4f} ({100 * self.map:.2f})  @ IoU {self.iou_thresh}")

    def per_image_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "tp", "fp", "fn"])
        for r in self.per_image:
            w.writerow([r.image_id, r.tp, r.fp, r.fn])
        return buf.getvalue()


def _corners(items) -> np.ndarray:
    return np.array([x.bbox.as_tuple() for x in items], dtype=np.float64).reshape(-1, 4)


def match_detections(dets: Sequence[Detection], gts: Sequence[ObjectAnnotation],
                     iou_thresh: float = DEFAULT_IOU) -> MatchResult:
    """Greedy matching in descending confidence (input order breaks ties)."""
    if not 0 < iou_thresh < 1:
        raise ValueError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    ignored = np.array([g.ignore for g in gts], dtype=bool)
    overlap = iou_matrix(_corners(dets), _corners(gts))
    taken = np.zeros(len(gts), dtype=bool)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    res = MatchResult(0, 0, 0)
    for d in order:
        row = overlap[d]
        open_ = (~ignored) & (~taken) & (row >= iou_thresh)
        if open_.any():
            g = int(np.argmax(np.where(open_, row, -1.0)))
            taken[g] = True
            res.assignment[d] = g
            res.tp += 1
        elif (ignored & (row >= iou_thresh)).any():
            res.discarded.append(d)
        else:
            res.fp += 1
    res.fn = int(np.count_nonzero(~ignored & ~taken))
    return res


def evaluate(detections: Mapping[str, Sequence[Detection]], ground_truth: Mapping[str, Sequence[ObjectAnnotation]],
             iou_thresh: float = DEFAULT_IOU) -> EvalReport:
    """Pool matches over images keyed by image id; both sides must share the same ids."""
    only_det = sorted(set(detections) - set(ground_truth))
    only_gt = sorted(set(ground_truth) - set(detections))
    if only_det or only_gt:
        raise KeyError(f"image ids differ: detections only {only_det}, ground truth only {only_gt}")
    report = EvalReport(iou_thresh=iou_thresh)
    for image_id in sorted(ground_truth):
        m = match_detections(detections[image_id], ground_truth[image_id], iou_thresh)
        report.tp += m.tp
        report.fp += m.fp
        report.fn += m.fn
        report.per_image.append(ImageResult(image_id, m.tp, m.fp, m.fn))
    return report


def write_detections(dets: Sequence[Detection], label: str = "product") -> str:
    """KITTI lines with a 16th field holding the confidence."""
    lines = []
    for d in dets:
        ann = ObjectAnnotation(label, d.bbox)
        lines.append(kitti_line(ann) + f" {d.confidence:.6f}\n")
    return "".join(lines)


def parse_detections(text: str) -> list[Detection]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        ann, extra = parse_kitti_line(line, lineno)
        if not extra:
            raise KittiParseError(lineno, "detection line lacks the confidence field (16th)")
        try:
            conf = float(extra[0])
        except ValueError:
            raise KittiParseError(lineno, f"bad confidence {extra[0]!r}", 16) from None
        if not 0 <= conf <= 1:
            raise KittiParseError(lineno, f"confidence {conf} outside [0, 1]", 16)
        out.append(Detection(ann.bbox, conf))
    return out


def report_document(report: EvalReport, config: dict | None = None) -> dict:
    doc = report.to_dict()
    doc["per_image"] = [asdict(r) for r in report.per_image]
    doc["config"] = config or {}
    return doc
