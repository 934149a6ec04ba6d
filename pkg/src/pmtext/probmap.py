"""Sigmoid alpha function, alpha schedules and ground-truth probability stacks.

The sigmoid alpha function ``C * (2 / (1 + exp(-a*d/L)) - 1)`` with
``C = (1 + exp(-a)) / (1 - exp(-a))`` equals ``tanh(a*r/2) / tanh(a/2)`` for
``r = d/L``. The tanh form is what we evaluate: it has no cancellation for
small ``a`` and gives exactly 1 at ``d == L``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from . import geometry
from .errors import InvalidAlpha, InvalidSchedule, ShapeMismatch, ValidationError
from .geometry import Grid

DEFAULT_K = 3
DEFAULT_N = 4
DEFAULT_WEIGHTS = (0.1, 0.2, 0.3, 0.4)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (alpha > 0.0) or not math.isfinite(alpha):
        raise InvalidAlpha(f"alpha must be a positive finite number, got {alpha}")
    return alpha


def saf(d: float, L: float, alpha: float) -> float:
    alpha = _check_alpha(alpha)
    r = d / L
    v = math.tanh(alpha * r * 0.5) / math.tanh(alpha * 0.5)
    return min(max(v, 0.0), 1.0)


def lf(d: float, L: float) -> float:
    return min(max(d / L, 0.0), 1.0)


def bf(d: float, th: float) -> float:
    return 1.0 if d > th else 0.0


@numba.njit(cache=True, nogil=True)
def _saf_kernel(d, L, alpha, out):
    denom = math.tanh(alpha * 0.5)
    for i in range(d.size):
        r = d[i] / L
        v = math.tanh(alpha * r * 0.5) / denom
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        out[i] = v


def saf_array(d: np.ndarray, L: float, alpha: float) -> np.ndarray:
    """Vectorized :func:`saf`; bit-identical to the scalar version."""
    alpha = _check_alpha(alpha)
    d = np.ascontiguousarray(d, dtype=np.float64)
    out = np.empty_like(d)
    _saf_kernel(d.reshape(-1), float(L), alpha, out.reshape(-1))
    return out


@dataclass(frozen=True)
class AlphaSchedule:
    alphas: tuple[float, ...]
    weights: tuple[float, ...]
    k: int | None = None

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        weights = tuple(float(w) for w in self.weights)
        if len(alphas) < 2:
            raise InvalidSchedule("a schedule needs at least two alphas")
        if any(not (a > 0) or not math.isfinite(a) for a in alphas):
            raise InvalidSchedule(f"alphas must be positive, got {alphas}")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise InvalidSchedule(f"alphas must be strictly increasing, got {alphas}")
        if len(weights) != len(alphas):
            raise InvalidSchedule(f"{len(weights)} weights for {len(alphas)} alphas")
        if any(w < 0 for w in weights) or abs(math.fsum(weights) - 1.0) > 1e-9:
            raise InvalidSchedule(f"weights must be non-negative and sum to 1, got {weights}")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return len(self.alphas)


def default_weights(n: int) -> tuple[float, ...]:
    if n == 4:
        return DEFAULT_WEIGHTS
    total = n * (n + 1) / 2
    return tuple(i / total for i in range(1, n + 1))


def make_schedule(k: int = DEFAULT_K, n: int = DEFAULT_N, weights=None) -> AlphaSchedule:
    """Alphas ``1, k+1, 2k+1, ...`` with later maps weighted more in voting."""
    if int(k) != k or int(n) != n:
        raise InvalidSchedule(f"k and n must be integers, got k={k}, n={n}")
    k, n = int(k), int(n)
    if k < 2 or n < 2:
        raise InvalidSchedule(f"need k >= 2 and n >= 2, got k={k}, n={n}")
    alphas = tuple(float(k * (i - 1) + 1) for i in range(1, n + 1))
    if weights is None:
        weights = default_weights(n)
    return AlphaSchedule(alphas, tuple(weights), k=k)


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    grid: Grid
    alpha: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ShapeMismatch(f"map values {self.values.shape} do not match grid {self.grid.shape}")


@dataclass(frozen=True, eq=False)
class ProbabilityStack:
    """``n`` probability maps over one grid, stored as an ``(n, H, W)`` array."""

    alphas: tuple[float, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ShapeMismatch(f"stack must be (n, H, W), got {values.shape}")
        if values.shape[0] != len(self.alphas):
            raise ShapeMismatch(f"{values.shape[0]} maps but {len(self.alphas)} alphas")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "values", values)

    @property
    def grid(self) -> Grid:
        return Grid.of(self.values)

    @property
    def n(self) -> int:
        return len(self.alphas)

    @property
    def maps(self) -> list[ProbabilityMap]:
        g = self.grid
        return [ProbabilityMap(g, a, v) for a, v in zip(self.alphas, self.values)]

    @property
    def last(self) -> ProbabilityMap:
        return self.maps[-1]

    @classmethod
    def zeros(cls, grid: Grid, alphas) -> "ProbabilityStack":
        return cls(tuple(alphas), np.zeros((len(alphas),) + grid.shape))


def instance_probabilities(poly, grid: Grid, alphas) -> tuple[np.ndarray, np.ndarray]:
    """Pixels of one instance and their ``(n, npix)`` probabilities."""
    pixels = geometry.rasterize_interior(poly, grid)
    if pixels.size == 0:
        return pixels, np.empty((len(alphas), 0))
    dist = geometry.distance_to_boundary(poly, pixels, grid)
    L = geometry.instance_scale(dist)
    return pixels, np.stack([saf_array(dist, L, a) for a in alphas])


def generate_label_stack(polys, grid: Grid, schedule: AlphaSchedule, workers: int = 1) -> ProbabilityStack:
    """Ground-truth stack; overlapping instances keep the per-alpha maximum.

    Ignored instances still contribute; they only matter for evaluation.
    """
    alphas = schedule.alphas
    out = np.zeros((len(alphas), grid.size))
    polys = list(polys)
    if workers > 1 and len(polys) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda p: instance_probabilities(p, grid, alphas), polys))
    else:
        parts = [instance_probabilities(p, grid, alphas) for p in polys]
    # max is order-independent, so the merge is deterministic
    for pixels, probs in parts:
        if pixels.size:
            out[:, pixels] = np.maximum(out[:, pixels], probs)
    return ProbabilityStack(alphas, out.reshape((len(alphas),) + grid.shape))


@dataclass(frozen=True)
class LossConfig:
    lambdas: tuple[float, ...] | None = None
    gamma: float = 3.0
    ohem: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if self.lambdas is not None:
            lambdas = tuple(float(x) for x in self.lambdas)
            if any(x < 0 for x in lambdas):
                raise ValidationError(f"loss weights must be non-negative, got {lambdas}")
            object.__setattr__(self, "lambdas", lambdas)


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, ProbabilityMap) else np.asarray(m, dtype=np.float64)


def ohem_select(pred_map, gt_map, gamma: float = 3.0) -> np.ndarray:
    """Flat indices (sorted) of all positives plus the hardest negatives.

    Negatives are ranked by squared error, ties by row-major index. With no
    positives there is nothing to balance against, so every negative is kept.
    """
    pred, gt = _values(pred_map), _values(gt_map)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if not gamma > 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    gt_flat, pred_flat = gt.reshape(-1), pred.reshape(-1)
    positive = np.flatnonzero(gt_flat > 0)
    negative = np.flatnonzero(gt_flat == 0)
    if positive.size == 0:
        return negative
    n_neg = min(negative.size, math.ceil(gamma * positive.size))
    err = (pred_flat[negative] - gt_flat[negative]) ** 2
    order = np.argsort(-err, kind="stable")
    hard = negative[order[:n_neg]]
    return np.sort(np.concatenate([positive, hard]))


def stack_loss(pred: ProbabilityStack, gt: ProbabilityStack, cfg: LossConfig | None = None):
    """Weighted sum of per-map mean squared errors over the selected pixels."""
    cfg = cfg or LossConfig()
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatch(f"prediction {pred.values.shape} vs ground truth {gt.values.shape}")
    lambdas = cfg.lambdas if cfg.lambdas is not None else (1.0,) * gt.n
    if len(lambdas) != gt.n:
        raise ShapeMismatch(f"{len(lambdas)} loss weights for {gt.n} maps")
    per_map = []
    for p, g in zip(pred.values, gt.values):
        diff = (g - p).reshape(-1)
        if cfg.ohem:
            diff = diff[ohem_select(p, g, cfg.gamma)]
        per_map.append(float(np.mean(diff * diff)))
    total = float(sum(lam * l for lam, l in zip(lambdas, per_map)))
    return total, per_map
