"""Region growth from a predicted probability stack to instance masks.

Layers are ordered by alpha. After thresholding at a fixed ``th_b`` the
smallest-alpha map is the most shrunken one, so its components seed the
growth and the largest-alpha map bounds it.

Two growth rules are available:

``pse``
    progressive scale expansion. For each further layer, every instance grows
    breadth-first into unclaimed pixels of that layer; one FIFO queue is seeded
    in label order, so growth is level-synchronous and the lowest label wins
    pixels reached at the same step.
``watershed``
    marker-based priority flood on ``1 - mean(stack)`` restricted to the last
    layer. Pixels are popped by ascending height, ties by row-major index, and
    a pixel belongs to the first marker that reaches it. This is our own
    construction; no watershed parameters are pinned down by the method.
"""
from __future__ import annotations

import heapq
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .errors import ShapeMismatch, ValidationError
from .geometry import Grid, InstanceMask
from .probmap import ProbabilityStack

ALGORITHMS = ("pse", "watershed")

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class BinarizedStack:
    layers: np.ndarray = field(repr=False)

    def __post_init__(self):
        layers = np.asarray(self.layers, dtype=bool)
        if layers.ndim != 3 or layers.shape[0] < 1:
            raise ShapeMismatch(f"binarized stack must be (n, H, W), got {layers.shape}")
        object.__setattr__(self, "layers", layers)

    @property
    def grid(self) -> Grid:
        return Grid.of(self.layers)

    @property
    def n(self) -> int:
        return self.layers.shape[0]

    def nesting_violations(self) -> int:
        """Pixels set in one layer but not the next (0 for well-formed input)."""
        return int(np.sum(self.layers[:-1] & ~self.layers[1:]))


def _check_threshold(th_b: float) -> float:
    th_b = float(th_b)
    if not 0.0 < th_b < 1.0:
        raise ValidationError(f"th_b must be in (0, 1), got {th_b}")
    return th_b


def binarize_stack(stack: ProbabilityStack, th_b: float = 0.3) -> BinarizedStack:
    return BinarizedStack(stack.values >= _check_threshold(th_b))


def label_components(layer: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labels numbered by each component's first row-major pixel."""
    labels, count = ndimage.label(np.asarray(layer, dtype=bool), structure=_CROSS)
    return labels.astype(np.int32, copy=False), int(count)


def masks_from_labels(labels: np.ndarray) -> list[InstanceMask]:
    """One mask per nonzero label value, in ascending label order."""
    grid = Grid.of(labels)
    flat = labels.reshape(-1)
    fg = np.flatnonzero(flat)
    if fg.size == 0:
        return []
    lab = flat[fg]
    order = np.argsort(lab, kind="stable")
    lab_sorted = lab[order]
    px_sorted = fg[order]
    cuts = np.flatnonzero(np.diff(lab_sorted)) + 1
    return [
        InstanceMask(grid, px, int(lab_sorted[start]))
        for px, start in zip(np.split(px_sorted, cuts), np.concatenate([[0], cuts]))
    ]


def connected_components(layer) -> list[InstanceMask]:
    if isinstance(layer, InstanceMask):
        layer = layer.to_array()
    labels, _ = label_components(layer)
    return masks_from_labels(labels)


@numba.njit(cache=True, nogil=True)
def _pse_kernel(seeds, layers, n_labels):
    n, h, w = layers.shape
    labels = seeds.copy().reshape(-1)
    flat_layers = layers.reshape(n, h * w)
    total = h * w
    queue = np.empty(total, dtype=np.int64)
    counts = np.zeros(n_labels + 2, dtype=np.int64)
    for stage in range(1, n):
        layer = flat_layers[stage]
        # counting sort of claimed pixels by label, row-major within a label
        counts[:] = 0
        for p in range(total):
            lab = labels[p]
            if lab > 0:
                counts[lab + 1] += 1
        for lab in range(1, n_labels + 2):
            counts[lab] += counts[lab - 1]
        tail = counts[n_labels + 1]
        for p in range(total):
            lab = labels[p]
            if lab > 0:
                queue[counts[lab]] = p
                counts[lab] += 1
        head = 0
        while head < tail:
            p = queue[head]
            head += 1
            lab = labels[p]
            r = p // w
            c = p - r * w
            if r > 0:
                q = p - w
                if labels[q] == 0 and layer[q]:
                    labels[q] = lab
                    queue[tail] = q
                    tail += 1
            if r < h - 1:
                q = p + w
                if labels[q] == 0 and layer[q]:
                    labels[q] = lab
                    queue[tail] = q
                    tail += 1
            if c > 0:
                q = p - 1
                if labels[q] == 0 and layer[q]:
                    labels[q] = lab
                    queue[tail] = q
                    tail += 1
            if c < w - 1:
                q = p + 1
                if labels[q] == 0 and layer[q]:
                    labels[q] = lab
                    queue[tail] = q
                    tail += 1
    return labels.reshape(h, w)


@numba.njit(cache=True, nogil=True)
def _watershed_kernel(markers, height, region):
    h, w = markers.shape
    labels = markers.copy().reshape(-1)
    topo = height.reshape(-1)
    allowed = region.reshape(-1)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for p in range(h * w):
        if labels[p] > 0:
            heap.append((topo[p], np.int64(p)))
    heapq.heapify(heap)
    while len(heap) > 0:
        _, p = heapq.heappop(heap)
        lab = labels[p]
        r = p // w
        c = p - r * w
        for k in range(4):
            if k == 0:
                if r == 0:
                    continue
                q = p - w
            elif k == 1:
                if c == 0:
                    continue
                q = p - 1
            elif k == 2:
                if c == w - 1:
                    continue
                q = p + 1
            else:
                if r == h - 1:
                    continue
                q = p + w
            if labels[q] == 0 and allowed[q]:
                labels[q] = lab
                heapq.heappush(heap, (topo[q], q))
    return labels.reshape(h, w)


def pse_labels(layers: np.ndarray) -> np.ndarray:
    """Label map from progressive scale expansion over boolean layers."""
    layers = np.ascontiguousarray(layers, dtype=np.bool_)
    seeds, count = label_components(layers[0])
    if count == 0:
        return seeds
    return _pse_kernel(np.ascontiguousarray(seeds), layers, count)


def watershed_labels(values: np.ndarray, layers: np.ndarray) -> np.ndarray:
    """Label map from the marker-based flood described in the module doc."""
    layers = np.ascontiguousarray(layers, dtype=np.bool_)
    if values.shape != layers.shape:
        raise ShapeMismatch(f"stack {values.shape} vs binarized stack {layers.shape}")
    markers, count = label_components(layers[0])
    if count == 0:
        return markers
    height = np.ascontiguousarray(1.0 - values.mean(axis=0))
    return _watershed_kernel(np.ascontiguousarray(markers), height, layers[-1])


def progressive_scale_expansion(bstack: BinarizedStack) -> list[InstanceMask]:
    return masks_from_labels(pse_labels(bstack.layers))


def watershed_aggregate(stack: ProbabilityStack, bstack: BinarizedStack) -> list[InstanceMask]:
    return masks_from_labels(watershed_labels(stack.values, bstack.layers))


def grow_labels(stack: ProbabilityStack, th_b: float = 0.3, algorithm: str = "pse") -> np.ndarray:
    bstack = binarize_stack(stack, th_b)
    if algorithm == "pse":
        return pse_labels(bstack.layers)
    if algorithm == "watershed":
        return watershed_labels(stack.values, bstack.layers)
    raise ValidationError(f"unknown growth algorithm {algorithm!r}; choose from {ALGORITHMS}")


def reconstruct(stack: ProbabilityStack, th_b: float = 0.3, algorithm: str = "pse") -> list[InstanceMask]:
    return masks_from_labels(grow_labels(stack, th_b, algorithm))


def reconstruct_batch(stacks, th_b: float = 0.3, algorithm: str = "pse", workers: int = 1) -> list[np.ndarray]:
    """Label maps for many stacks; output order follows input order."""
    stacks = list(stacks)
    if workers <= 1:
        return [grow_labels(s, th_b, algorithm) for s in stacks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: grow_labels(s, th_b, algorithm), stacks))


def warmup() -> None:
    """Compile the growth kernels so timings exclude JIT cost."""
    layers = np.zeros((2, 3, 3), dtype=bool)
    layers[:, 1, 1] = True
    pse_labels(layers)
    watershed_labels(layers.astype(np.float64), layers)


def _summary(samples: list[float]) -> dict:
    arr = np.asarray(samples) * 1000.0
    return {"mean_ms": float(arr.mean()), "p95_ms": float(np.percentile(arr, 95)), "min_ms": float(arr.min())}


def time_stages(stack: ProbabilityStack, th_b: float = 0.3, algorithm: str = "pse", runs: int = 20) -> dict:
    """Wall-clock timings of binarize, components and growth over ``runs`` repeats."""
    if algorithm not in ALGORITHMS:
        raise ValidationError(f"unknown growth algorithm {algorithm!r}; choose from {ALGORITHMS}")
    warmup()
    stages = {"binarize": [], "components": [], "growth": [], "total": []}
    values = stack.values
    for _ in range(runs):
        t0 = time.perf_counter()
        layers = np.ascontiguousarray(values >= th_b)
        t1 = time.perf_counter()
        seeds, count = label_components(layers[0])
        t2 = time.perf_counter()
        if count:
            if algorithm == "pse":
                _pse_kernel(seeds, layers, count)
            else:
                height = np.ascontiguousarray(1.0 - values.mean(axis=0))
                _watershed_kernel(seeds, height, layers[-1])
        t3 = time.perf_counter()
        stages["binarize"].append(t1 - t0)
        stages["components"].append(t2 - t1)
        stages["growth"].append(t3 - t2)
        stages["total"].append(t3 - t0)
    return {name: _summary(s) for name, s in stages.items()}


def bench_region_growth(sizes=(1024,), n: int = 4, algorithm: str = "pse", runs: int = 20,
                        seed: int = 0, th_b: float = 0.3, instances: int | None = None) -> dict:
    """Per-stage timings on synthetic oracle stacks, one entry per grid size."""
    from . import probmap, synth

    if runs < 1:
        raise ValidationError("runs must be >= 1")
    schedule = probmap.make_schedule(3, n)
    report = {"algorithm": algorithm, "n": n, "runs": runs, "th_b": th_b, "results": []}
    for size in sizes:
        grid = Grid(size, size)
        count = instances if instances is not None else max(1, size // 64)
        polys = synth.random_scene(grid, count, "mixed", min_separation=4, seed=seed)
        stack = synth.oracle_stack(polys, grid, schedule)
        report["results"].append({
            "width": size, "height": size, "instances": len(polys),
            "stages": time_stages(stack, th_b, algorithm, runs),
        })
    return report
