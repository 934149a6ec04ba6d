"""Polygons, pixel grids and per-pixel boundary distances.

Pixel ``(i, j)`` is column ``i``, row ``j``; it is sampled at its center
``(i + 0.5, j + 0.5)`` and has flat (row-major) index ``j * width + i``.
Coordinates are in pixels with the origin at the top-left corner, y down.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegeneratePolygon, EmptyInstance, ShapeMismatch, ValidationError

MIN_SCALE = 1.0

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Grid:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValidationError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    @classmethod
    def of(cls, array: np.ndarray) -> "Grid":
        h, w = array.shape[-2:]
        return cls(width=w, height=h)


def _normalize_vertices(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegeneratePolygon(f"expected a list of (x, y) pairs, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DegeneratePolygon("polygon has non-finite coordinates")
    if len(pts) == 0:
        raise DegeneratePolygon("polygon has no vertices")
    keep = np.any(pts != np.roll(pts, 1, axis=0), axis=1)
    if not keep.any():
        keep[0] = True
    pts = pts[keep]
    if len(pts) < 3:
        raise DegeneratePolygon(f"polygon needs >= 3 distinct consecutive vertices, got {len(pts)}")
    return pts


def signed_area(vertices: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise order in (x, y) axes."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True, eq=False)
class TextPolygon:
    """Closed polygon; the last vertex implicitly connects to the first."""

    vertices: np.ndarray
    id: str = ""
    ignore: bool = False

    def __post_init__(self):
        pts = _normalize_vertices(self.vertices)
        if signed_area(pts) == 0.0:
            raise DegeneratePolygon("polygon has zero area")
        pts.setflags(write=False)
        object.__setattr__(self, "vertices", pts)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "ignore", bool(self.ignore))

    def __len__(self):
        return len(self.vertices)

    def __eq__(self, other):
        if not isinstance(other, TextPolygon):
            return NotImplemented
        return (
            self.id == other.id
            and self.ignore == other.ignore
            and np.array_equal(self.vertices, other.vertices)
        )

    __hash__ = None

    @property
    def signed_area(self) -> float:
        return signed_area(self.vertices)

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def translated(self, dx: float, dy: float) -> "TextPolygon":
        return TextPolygon(self.vertices + np.array([dx, dy]), id=self.id, ignore=self.ignore)

    def to_list(self) -> list[list[float]]:
        return self.vertices.tolist()


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """One candidate text instance: sorted flat pixel indices on a grid."""

    grid: Grid
    pixels: np.ndarray
    label: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).ravel()
        if px.size > 1 and np.any(px[1:] <= px[:-1]):
            px = np.unique(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def area(self) -> int:
        return int(self.pixels.size)

    def rows_cols(self) -> tuple[np.ndarray, np.ndarray]:
        return np.divmod(self.pixels, self.grid.width)

    def to_array(self) -> np.ndarray:
        out = np.zeros(self.grid.size, dtype=bool)
        out[self.pixels] = True
        return out.reshape(self.grid.shape)

    @classmethod
    def from_array(cls, array: np.ndarray, label: int = 0) -> "InstanceMask":
        array = np.asarray(array, dtype=bool)
        return cls(Grid.of(array), np.flatnonzero(array), label)

    def __eq__(self, other):
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DistanceMap:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ShapeMismatch(f"distance values {self.values.shape} do not match grid {self.grid.shape}")


def _pixel_window(poly: TextPolygon, grid: Grid):
    """Column/row ranges of pixels whose centers can fall inside ``poly``."""
    x0, y0, x1, y1 = poly.bounds()
    c0 = max(0, int(np.ceil(x0 - 0.5)))
    c1 = min(grid.width - 1, int(np.floor(x1 - 0.5)))
    r0 = max(0, int(np.ceil(y0 - 0.5)))
    r1 = min(grid.height - 1, int(np.floor(y1 - 0.5)))
    return c0, c1, r0, r1


def winding_inside(vertices: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Nonzero-winding membership of points, boundary points counted inside."""
    wn = np.zeros(np.broadcast(px, py).shape, dtype=np.int32)
    on_edge = np.zeros(wn.shape, dtype=bool)
    a_all, b_all = vertices, np.roll(vertices, -1, axis=0)
    for (ax, ay), (bx, by) in zip(a_all.tolist(), b_all.tolist()):
        cross = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
        if ay <= by:
            wn += (ay <= py) & (by > py) & (cross > 0)
        if ay > by:
            wn -= (ay > py) & (by <= py) & (cross < 0)
        on_edge |= (
            (cross == 0)
            & (px >= min(ax, bx)) & (px <= max(ax, bx))
            & (py >= min(ay, by)) & (py <= max(ay, by))
        )
    return (wn != 0) | on_edge


def rasterize_interior(poly: TextPolygon, grid: Grid) -> np.ndarray:
    """Sorted flat indices of pixels whose centers lie inside ``poly``."""
    c0, c1, r0, r1 = _pixel_window(poly, grid)
    if c0 > c1 or r0 > r1:
        return np.empty(0, dtype=np.int64)
    cols = np.arange(c0, c1 + 1)
    rows = np.arange(r0, r1 + 1)
    px = (cols + 0.5)[None, :]
    py = (rows + 0.5)[:, None]
    inside = winding_inside(poly.vertices, px, py)
    rr, cc = np.nonzero(inside)
    return (rr + r0).astype(np.int64) * grid.width + (cc + c0)


def pixel_centers(pixels: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.divmod(np.asarray(pixels, dtype=np.int64), grid.width)
    return cols + 0.5, rows + 0.5


def segment_distances(vertices: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each point to the closed polyline."""
    best = np.full(np.broadcast(px, py).shape, np.inf)
    a_all, b_all = vertices, np.roll(vertices, -1, axis=0)
    for (ax, ay), (bx, by) in zip(a_all.tolist(), b_all.tolist()):
        dx = bx - ax
        dy = by - ay
        t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
        t = np.minimum(np.maximum(t, 0.0), 1.0)
        ex = px - (ax + t * dx)
        ey = py - (ay + t * dy)
        np.minimum(best, ex * ex + ey * ey, out=best)
    return np.sqrt(best)


def distance_to_boundary(poly: TextPolygon, pixels: np.ndarray, grid: Grid) -> np.ndarray:
    """Boundary distance of each given pixel center, aligned with ``pixels``."""
    px, py = pixel_centers(pixels, grid)
    return segment_distances(poly.vertices, px, py)


def instance_scale(fragment: np.ndarray) -> float:
    """Largest boundary distance of an instance, never below ``MIN_SCALE``."""
    fragment = np.asarray(fragment)
    if fragment.size == 0:
        raise EmptyInstance("instance has no pixels")
    return max(float(fragment.max()), MIN_SCALE)


def polygon_distance_map(polys, grid: Grid) -> DistanceMap:
    """Per-pixel boundary distance; overlapping pixels keep the larger value."""
    values = np.zeros(grid.shape)
    flat = values.reshape(-1)
    for poly in polys:
        px = rasterize_interior(poly, grid)
        if px.size:
            flat[px] = np.maximum(flat[px], distance_to_boundary(poly, px, grid))
    return DistanceMap(grid, values)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask or outside the grid."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = ndimage.binary_erosion(padded, structure=_CROSS, border_value=0)[1:-1, 1:-1]
    return mask & ~interior


def mask_distance_map(mask: InstanceMask) -> np.ndarray:
    """Distance of every mask pixel to the nearest boundary-pixel center.

    Values are aligned with ``mask.pixels``. Boundary pixels get 0.
    """
    if mask.area == 0:
        raise EmptyInstance(f"mask {mask.label} is empty")
    rows, cols = mask.rows_cols()
    r0, c0 = rows.min(), cols.min()
    crop = np.zeros((rows.max() - r0 + 1, cols.max() - c0 + 1), dtype=bool)
    crop[rows - r0, cols - c0] = True
    # every nearest non-interior pixel is a boundary pixel, so the EDT to the
    # zeros of (mask & ~boundary) is the distance to boundary-pixel centers
    interior = crop & ~boundary_pixels(crop)
    if not interior.any():
        return np.zeros(mask.area)
    dist = ndimage.distance_transform_edt(np.pad(interior, 1))[1:-1, 1:-1]
    return dist[rows - r0, cols - c0]
