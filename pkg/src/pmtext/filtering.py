"""False-positive removal for candidate instances.

``threshold`` keeps a candidate when the mean of the last predicted map over
it reaches ``th_e`` and its area reaches ``beta_a``. ``voting`` compares, for
every map, the observed mean over the candidate with the mean of the map the
candidate itself would have produced as ground truth; each map whose
observed mean is at least the expected mean minus ``th_b**2`` casts its
weight, and the candidate survives with a weighted vote of at least 0.5.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import geometry, probmap
from .errors import EmptyInstance, ShapeMismatch, ValidationError

log = logging.getLogger(__name__)

MODES = ("threshold", "voting")


@dataclass(frozen=True)
class FilterConfig:
    th_b: float = 0.3
    th_e: float = 0.65
    beta_a: int = 300
    mode: str = "threshold"

    def __post_init__(self):
        if not 0 < self.th_b < 1:
            raise ValidationError(f"th_b must be in (0, 1), got {self.th_b}")
        if not 0 <= self.th_e < 1:
            raise ValidationError(f"th_e must be in [0, 1), got {self.th_e}")
        if self.beta_a < 0:
            raise ValidationError(f"beta_a must be >= 0, got {self.beta_a}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown filter mode {self.mode!r}; choose from {MODES}")

    def scaled_for_stride(self, stride: int) -> "FilterConfig":
        """Min-area for maps predicted at ``1/stride`` of the image size."""
        return FilterConfig(self.th_b, self.th_e, int(round(self.beta_a / stride ** 2)), self.mode)


def _map_values(m, grid) -> np.ndarray:
    values = m.values if hasattr(m, "values") else np.asarray(m, dtype=np.float64)
    if values.shape != grid.shape:
        raise ShapeMismatch(f"map {values.shape} does not match mask grid {grid.shape}")
    return values.reshape(-1)


def threshold_filter(masks, last_map, cfg: FilterConfig = FilterConfig()):
    kept = []
    for mask in masks:
        if mask.area == 0:
            continue
        mean = float(np.mean(_map_values(last_map, mask.grid)[mask.pixels]))
        if mean >= cfg.th_e and mask.area >= cfg.beta_a:
            kept.append(mask)
    return kept


def expected_means(mask, alphas) -> list[float]:
    """Mean of each alpha's probability map that ``mask`` would generate."""
    dist = geometry.mask_distance_map(mask)
    L = geometry.instance_scale(dist)
    return [float(np.mean(probmap.saf_array(dist, L, a))) for a in alphas]


def votes(mask, stack, schedule, th_b: float) -> list[int]:
    if stack.n != schedule.n:
        raise ShapeMismatch(f"stack has {stack.n} maps, schedule has {schedule.n} alphas")
    if stack.grid != mask.grid:
        raise ShapeMismatch(f"stack grid {stack.grid} does not match mask grid {mask.grid}")
    expected = expected_means(mask, schedule.alphas)
    observed = [float(np.mean(v.reshape(-1)[mask.pixels])) for v in stack.values]
    offset = th_b * th_b
    return [int(old >= new - offset) for old, new in zip(observed, expected)]


def vote_score(vote_list, weights) -> float:
    return math.fsum(w * v for w, v in zip(weights, vote_list))


def voting_filter(masks, stack, schedule, cfg: FilterConfig = FilterConfig(mode="voting")):
    if stack.n != schedule.n:
        raise ShapeMismatch(f"stack has {stack.n} maps, schedule has {schedule.n} alphas")
    kept = []
    for mask in masks:
        if mask.area < cfg.beta_a:
            continue
        try:
            v = votes(mask, stack, schedule, cfg.th_b)
        except EmptyInstance as exc:
            log.warning("skipping candidate %s: %s", mask.label, exc)
            continue
        if vote_score(v, schedule.weights) >= 0.5:
            kept.append(mask)
    return kept


def apply_filter(masks, stack, schedule, cfg: FilterConfig):
    if cfg.mode == "voting":
        return voting_filter(masks, stack, schedule, cfg)
    return threshold_filter(masks, stack.values[-1], cfg)
