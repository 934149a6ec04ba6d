"""Precision / recall / F-measure of polygon detections by IoU matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import shapely
from shapely.geometry import Polygon

from .errors import DegeneratePolygon, MissingImage
from .geometry import TextPolygon


def _shape(poly: TextPolygon):
    geom = Polygon(poly.vertices)
    if not geom.is_valid:
        geom = shapely.make_valid(geom)
    if geom.area <= 0:
        raise DegeneratePolygon(f"polygon {poly.id!r} has no area")
    return geom


def polygon_iou(a: TextPolygon, b: TextPolygon) -> float:
    ga, gb = _shape(a), _shape(b)
    inter = ga.intersection(gb).area
    if inter <= 0:
        return 0.0
    union = ga.area + gb.area - inter
    return min(1.0, inter / union)


@dataclass
class MatchReport:
    per_image: dict = field(default_factory=dict)
    precision: float = 0.0
    recall: float = 0.0
    f_measure: float = 0.0
    iou_threshold: float = 0.5

    @property
    def totals(self) -> tuple[int, int, int]:
        tp = sum(c[0] for c in self.per_image.values())
        fp = sum(c[1] for c in self.per_image.values())
        fn = sum(c[2] for c in self.per_image.values())
        return tp, fp, fn

    def to_json(self) -> dict:
        tp, fp, fn = self.totals
        return {
            "precision": self.precision, "recall": self.recall, "f_measure": self.f_measure,
            "iou_threshold": self.iou_threshold, "tp": tp, "fp": fp, "fn": fn,
            "per_image": {k: {"tp": v[0], "fp": v[1], "fn": v[2]} for k, v in self.per_image.items()},
        }

    def table(self) -> str:
        lines = [f"{'image':<24} {'tp':>5} {'fp':>5} {'fn':>5}"]
        for key, (tp, fp, fn) in self.per_image.items():
            lines.append(f"{key:<24} {tp:>5} {fp:>5} {fn:>5}")
        tp, fp, fn = self.totals
        lines.append(f"{'total':<24} {tp:>5} {fp:>5} {fn:>5}")
        lines.append(f"R={self.recall:.4f}  P={self.precision:.4f}  F={self.f_measure:.4f}  (IoU >= {self.iou_threshold})")
        return "\n".join(lines)


def _as_scored(det):
    if isinstance(det, TextPolygon):
        return det, 1.0
    if isinstance(det, tuple):
        return det[0], float(det[1])
    return det.polygon, float(det.score)


def match_image(dets, gts, iou_threshold: float = 0.5) -> tuple[int, int, int]:
    """Greedy one-to-one matching in descending score order (ties: input order).

    A detection that misses every real ground truth but overlaps an ignored
    one is neither a true nor a false positive.
    """
    scored = [_as_scored(d) for d in dets]
    order = sorted(range(len(scored)), key=lambda i: -scored[i][1])
    care = [g for g in gts if not g.ignore]
    dont_care = [g for g in gts if g.ignore]
    matched = [False] * len(care)
    tp = fp = 0
    for i in order:
        poly = scored[i][0]
        best, best_j = -1.0, -1
        for j, g in enumerate(care):
            if matched[j]:
                continue
            iou = polygon_iou(poly, g)
            if iou > best:
                best, best_j = iou, j
        if best_j >= 0 and best >= iou_threshold:
            matched[best_j] = True
            tp += 1
        elif any(polygon_iou(poly, g) >= iou_threshold for g in dont_care):
            continue
        else:
            fp += 1
    return tp, fp, len(care) - sum(matched)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


def match_and_score(dets_by_image: dict, gts_by_image: dict, iou_threshold: float = 0.5) -> MatchReport:
    """Micro-averaged P/R/F: counts are summed over images before dividing."""
    missing = set(dets_by_image) ^ set(gts_by_image)
    if missing:
        raise MissingImage(missing)
    report = MatchReport(iou_threshold=iou_threshold)
    for key in gts_by_image:
        report.per_image[key] = match_image(dets_by_image[key], gts_by_image[key], iou_threshold)
    report.precision, report.recall, report.f_measure = prf(*report.totals)
    return report
