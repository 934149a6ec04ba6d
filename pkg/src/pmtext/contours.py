"""Instance masks to output boundaries.

Polygons are traced along pixel edges (the corner lattice) and simplified
with Douglas-Peucker. When the simplified ring self-intersects, or its pixel
centers drift from the mask (below 99% recovered or above 5% added), the
tolerance is halved and the outline simplified again. Rectangles are the minimum-area rotated rectangle of
the mask's pixel corners. All polygons come out counter-clockwise, i.e. with
a positive shoelace area in (x, y) coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyInstance, ValidationError
from .geometry import InstanceMask, TextPolygon, signed_area, winding_inside

MODES = ("polygon", "rect")
MIN_RECOVERY = 0.99
MAX_EXTRA = 0.05

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class DetectionBoundary:
    polygon: TextPolygon
    score: float
    mode: str = "polygon"

    def to_json(self) -> dict:
        return {"points": self.polygon.to_list(), "score": self.score, "mode": self.mode}


def _crop(mask: InstanceMask):
    if mask.area == 0:
        raise EmptyInstance(f"mask {mask.label} is empty")
    rows, cols = mask.rows_cols()
    r0, c0 = int(rows.min()), int(cols.min())
    crop = np.zeros((int(rows.max()) - r0 + 1, int(cols.max()) - c0 + 1), dtype=bool)
    crop[rows - r0, cols - c0] = True
    return crop, r0, c0


def _outer_region(crop: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(crop, structure=_CROSS)
    if count > 1:
        sizes = np.bincount(labels.ravel())[1:]
        crop = labels == (int(np.argmax(sizes)) + 1)
    # holes are background not 4-connected to the outside; with them filled a
    # 4-connected region has no pinch corners, so its outline is one simple loop
    return ndimage.binary_fill_holes(crop, structure=_CROSS)


def _trace_outline(region: np.ndarray) -> np.ndarray:
    """Corner-lattice outline of a hole-free 4-connected region, CCW."""
    h, w = region.shape
    pad = np.pad(region, 1)
    inner = pad[1:-1, 1:-1]
    stride = w + 1
    nxt = np.full((h + 1) * stride, -1, dtype=np.int64)
    ys, xs = np.nonzero(inner & ~pad[:-2, 1:-1])          # top side, left -> right
    nxt[ys * stride + xs] = ys * stride + xs + 1
    ys, xs = np.nonzero(inner & ~pad[1:-1, 2:])           # right side, down
    nxt[ys * stride + xs + 1] = (ys + 1) * stride + xs + 1
    ys, xs = np.nonzero(inner & ~pad[2:, 1:-1])           # bottom side, right -> left
    nxt[(ys + 1) * stride + xs + 1] = (ys + 1) * stride + xs
    ys, xs = np.nonzero(inner & ~pad[1:-1, :-2])          # left side, up
    nxt[(ys + 1) * stride + xs] = ys * stride + xs
    start = int(np.flatnonzero(nxt >= 0)[0])
    loop = [start]
    v = int(nxt[start])
    while v != start:
        loop.append(v)
        v = int(nxt[v])
    loop = np.asarray(loop)
    pts = np.stack([loop % stride, loop // stride], axis=1).astype(np.float64)
    return _drop_collinear(pts)


def _drop_collinear(pts: np.ndarray) -> np.ndarray:
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    cross = (pts[:, 0] - prev[:, 0]) * (nxt[:, 1] - pts[:, 1]) - (pts[:, 1] - prev[:, 1]) * (nxt[:, 0] - pts[:, 0])
    return pts[cross != 0]


def _dp_open(pts: np.ndarray, eps: float) -> np.ndarray:
    """Indices kept by Douglas-Peucker on an open polyline."""
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        a, b = pts[i], pts[j]
        seg = pts[i + 1:j]
        d = b - a
        norm = np.hypot(d[0], d[1])
        if norm == 0:
            dist = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            dist = np.abs(d[0] * (seg[:, 1] - a[1]) - d[1] * (seg[:, 0] - a[0])) / norm
        k = int(np.argmax(dist))
        if dist[k] > eps:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return np.flatnonzero(keep)


def douglas_peucker_closed(pts: np.ndarray, eps: float) -> np.ndarray:
    """Simplify a closed ring, anchored at vertex 0 and the vertex farthest from it."""
    if len(pts) <= 4 or eps <= 0:
        return pts
    far = int(np.argmax(np.hypot(pts[:, 0] - pts[0, 0], pts[:, 1] - pts[0, 1])))
    first = pts[: far + 1]
    second = np.concatenate([pts[far:], pts[:1]])
    idx1 = _dp_open(first, eps)
    idx2 = _dp_open(second, eps)
    return np.concatenate([first[idx1], second[idx2][1:-1]])


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, p3)) or (o2 == 0 and on_seg(p1, p2, p4))
            or (o3 == 0 and on_seg(p3, p4, p1)) or (o4 == 0 and on_seg(p3, p4, p2)))


def is_simple(pts: np.ndarray) -> bool:
    """True if no two non-adjacent edges of the closed ring touch."""
    n = len(pts)
    if n < 3:
        return False
    p = [tuple(v) for v in np.asarray(pts).tolist()]
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_cross(a, b, p[j], p[(j + 1) % n]):
                return False
    return True


def _ccw(pts: np.ndarray) -> np.ndarray:
    return pts[::-1].copy() if signed_area(pts) < 0 else pts


def _raster_fidelity(ring: np.ndarray, region: np.ndarray) -> tuple[float, float]:
    """Share of region pixels whose centers the ring contains, and extra pixels per region pixel."""
    h, w = region.shape
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    inside = winding_inside(ring, xs, ys)
    total = int(region.sum())
    return float((inside & region).sum()) / total, float((inside & ~region).sum()) / total


def _acceptable(ring: np.ndarray, region: np.ndarray) -> bool:
    if len(ring) < 3 or signed_area(ring) == 0 or not is_simple(ring):
        return False
    covered, extra = _raster_fidelity(ring, region)
    return covered >= MIN_RECOVERY and extra <= MAX_EXTRA


def trace_polygon(mask: InstanceMask, epsilon: float = 1.0) -> TextPolygon:
    """Simplified outer outline of ``mask``, counter-clockwise.

    The tolerance is halved until the polygon is simple and re-covers the mask
    faithfully; the unsimplified outline always qualifies.
    """
    crop, r0, c0 = _crop(mask)
    region = _outer_region(crop)
    outline = _trace_outline(region)
    eps = float(epsilon)
    simplified = douglas_peucker_closed(outline, eps)
    while eps > 0 and not _acceptable(simplified, region):
        eps = eps / 2 if eps > 0.125 else 0.0
        simplified = douglas_peucker_closed(outline, eps)
    pts = _ccw(simplified) + np.array([c0, r0], dtype=np.float64)
    return TextPolygon(pts, id=str(mask.label))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise (positive area), no collinear points."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        return pts
    pts_list = [tuple(p) for p in pts.tolist()]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts_list:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts_list):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def _corner_points(mask: InstanceMask) -> np.ndarray:
    """Outer pixel corners of each row's extreme pixels (same hull as all corners)."""
    rows, cols = mask.rows_cols()
    uniq, first = np.unique(rows, return_index=True)
    last = np.append(first[1:], len(rows)) - 1
    # pixels are sorted row-major, so each row's first/last entries are its extremes
    left, right = cols[first], cols[last] + 1
    ys = uniq.astype(np.float64)
    return np.concatenate([
        np.stack([left, ys], 1), np.stack([left, ys + 1], 1),
        np.stack([right, ys], 1), np.stack([right, ys + 1], 1),
    ]).astype(np.float64)


def min_area_rect_points(points: np.ndarray) -> np.ndarray:
    """Minimum-area enclosing rectangle; one side is collinear with a hull edge."""
    hull = convex_hull(points)
    if len(hull) < 3:
        raise ValidationError("need at least three non-collinear points for a rectangle")
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    u = edges / lengths[:, None]
    v = np.stack([-u[:, 1], u[:, 0]], axis=1)
    pu = hull @ u.T
    pv = hull @ v.T
    umin, umax = pu.min(axis=0), pu.max(axis=0)
    vmin, vmax = pv.min(axis=0), pv.max(axis=0)
    areas = (umax - umin) * (vmax - vmin)
    k = int(np.argmin(areas))
    corners = [(umin[k], vmin[k]), (umax[k], vmin[k]), (umax[k], vmax[k]), (umin[k], vmax[k])]
    rect = np.array([a * u[k] + b * v[k] for a, b in corners])
    return _ccw(rect)


def min_area_rect(mask: InstanceMask) -> TextPolygon:
    if mask.area == 0:
        raise EmptyInstance(f"mask {mask.label} is empty")
    return TextPolygon(min_area_rect_points(_corner_points(mask)), id=str(mask.label))


def extract_boundaries(masks, last_map, mode: str = "polygon", epsilon: float = 1.0) -> list[DetectionBoundary]:
    if mode not in MODES:
        raise ValidationError(f"unknown boundary mode {mode!r}; choose from {MODES}")
    values = (last_map.values if hasattr(last_map, "values") else np.asarray(last_map)).reshape(-1)
    out = []
    for mask in masks:
        poly = trace_polygon(mask, epsilon) if mode == "polygon" else min_area_rect(mask)
        score = float(np.clip(np.mean(values[mask.pixels]), 0.0, 1.0))
        out.append(DetectionBoundary(poly, score, mode))
    return out
