"""Synthetic scenes and stand-in predictions for closed-loop validation.

Shapes imitate curved-text datasets: axis-aligned and rotated rectangles,
and bands that follow a sinusoidal midline with a tapering width, emitted as
14-point polygons (7 samples per side).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon

from . import geometry, probmap
from .errors import PlacementFailure, ValidationError
from .geometry import Grid, TextPolygon

FAMILIES = ("curved", "rect", "mixed")


@dataclass(frozen=True)
class Noise:
    gaussian_sigma: float = 0.0
    blur_radius: int = 0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.blur_radius < 0 or not 0 <= self.dropout_rate <= 1:
            raise ValidationError(f"invalid noise parameters {self}")

    @classmethod
    def parse(cls, text: str) -> "Noise":
        """Parse ``sigma=0.05,blur=1,dropout=0.01`` (any subset)."""
        names = {"sigma": "gaussian_sigma", "gaussian_sigma": "gaussian_sigma",
                 "blur": "blur_radius", "blur_radius": "blur_radius",
                 "dropout": "dropout_rate", "dropout_rate": "dropout_rate"}
        kwargs = {}
        for part in filter(None, (p.strip() for p in (text or "").split(","))):
            key, _, value = part.partition("=")
            if key.strip() not in names or not value:
                raise ValidationError(f"bad noise spec {part!r}; expected sigma=..,blur=..,dropout=..")
            field_name = names[key.strip()]
            kwargs[field_name] = int(value) if field_name == "blur_radius" else float(value)
        return cls(**kwargs)


def oracle_stack(polys, grid: Grid, schedule: probmap.AlphaSchedule) -> probmap.ProbabilityStack:
    """A perfect predictor: exactly the ground-truth label stack."""
    return probmap.generate_label_stack(polys, grid, schedule)


def corrupt(stack: probmap.ProbabilityStack, noise: Noise = Noise(), seed: int = 0) -> probmap.ProbabilityStack:
    """Gaussian noise (clamped), box blur, then per-pixel dropout to zero."""
    rng = np.random.default_rng(seed)
    values = stack.values.copy()
    if noise.gaussian_sigma > 0:
        values += rng.normal(0.0, noise.gaussian_sigma, size=values.shape)
        np.clip(values, 0.0, 1.0, out=values)
    if noise.blur_radius > 0:
        size = 2 * int(noise.blur_radius) + 1
        values = ndimage.uniform_filter(values, size=(1, size, size), mode="nearest")
        np.clip(values, 0.0, 1.0, out=values)
    if noise.dropout_rate > 0:
        values[rng.random(values.shape) < noise.dropout_rate] = 0.0
    return probmap.ProbabilityStack(stack.alphas, values)


def _rotate(pts: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return pts @ np.array([[c, s], [-s, c]])


def _rect(rng, max_len: float, min_width: float, rotated: bool) -> np.ndarray:
    length = rng.uniform(0.35, 1.0) * max_len
    width = rng.uniform(min_width, max(min_width, min(0.3 * length, 3 * min_width)))
    pts = np.array([[0, 0], [length, 0], [length, width], [0, width]], dtype=np.float64)
    pts -= pts.mean(axis=0)
    if rotated:
        pts = _rotate(pts, rng.uniform(-math.pi / 2, math.pi / 2))
    return pts


def _curved_band(rng, max_len: float, min_width: float) -> np.ndarray:
    length = rng.uniform(0.5, 1.0) * max_len
    width = rng.uniform(min_width, max(min_width, min(0.3 * length, 2.5 * min_width)))
    taper = rng.uniform(-0.25, 0.25)
    cycles = rng.uniform(0.3, 0.8)
    omega = 2 * math.pi * cycles / length
    # keep the inner offset well inside the midline's radius of curvature
    max_amp = 0.45 / (omega * omega * (0.5 * width * (1 + abs(taper)) + 1e-9))
    amp = rng.uniform(0.3, 1.0) * min(max_amp, 0.25 * length)
    phase = rng.uniform(0, 2 * math.pi)
    t = np.linspace(0.0, 1.0, 7)
    x = t * length
    y = amp * np.sin(omega * x + phase)
    dy = amp * omega * np.cos(omega * x + phase)
    norm = np.hypot(1.0, dy)
    nx, ny = -dy / norm, 1.0 / norm
    half = 0.5 * width * (1.0 + taper * (2 * t - 1))
    top = np.stack([x - nx * half, y - ny * half], axis=1)
    bottom = np.stack([x + nx * half, y + ny * half], axis=1)
    pts = np.concatenate([top, bottom[::-1]])
    pts -= pts.mean(axis=0)
    return _rotate(pts, rng.uniform(-math.pi / 2, math.pi / 2))


def _candidate(rng, family: str, grid: Grid, min_width: float) -> np.ndarray:
    short = min(grid.width, grid.height)
    max_len = max(2.5 * min_width, 0.45 * short)
    kind = family
    if family == "rect":
        kind = rng.choice(["axis", "rotated"])
    elif family == "mixed":
        kind = rng.choice(["axis", "rotated", "curved"])
    if kind == "curved":
        return _curved_band(rng, max_len, min_width)
    return _rect(rng, max_len, min_width, rotated=(kind == "rotated"))


def random_scene(grid: Grid, count: int, family: str = "mixed", min_separation: float = 4.0, seed: int = 0,
                 min_area: int = 400, min_width: float = 12.0, margin: float = 2.0,
                 max_attempts: int = 2000) -> list[TextPolygon]:
    """Non-overlapping polygons at least ``min_separation`` px apart, inside the grid.

    Each polygon covers at least ``min_area`` pixel centers.
    """
    if family not in FAMILIES:
        raise ValidationError(f"unknown shape family {family!r}; choose from {FAMILIES}")
    if count < 0:
        raise ValidationError("instance count must be >= 0")
    rng = np.random.default_rng(seed)
    placed: list[Polygon] = []
    polys: list[TextPolygon] = []
    attempts = 0
    while len(polys) < count:
        attempts += 1
        if attempts > max_attempts:
            raise PlacementFailure(f"placed {len(polys)} of {count} instances after {max_attempts} attempts")
        shape = _candidate(rng, family, grid, min_width)
        lo, hi = shape.min(axis=0), shape.max(axis=0)
        room = np.array([grid.width, grid.height]) - (hi - lo) - 2 * margin
        if np.any(room <= 0):
            continue
        offset = margin - lo + rng.uniform(0, 1, 2) * room
        pts = np.round(shape + offset, 3)
        geom = Polygon(pts)
        if not geom.is_valid:
            continue
        if any(geom.distance(other) < min_separation for other in placed):
            continue
        poly = TextPolygon(pts, id=str(len(polys)))
        if geometry.rasterize_interior(poly, grid).size < min_area:
            continue
        placed.append(geom)
        polys.append(poly)
    return polys
