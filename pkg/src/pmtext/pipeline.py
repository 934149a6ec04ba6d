"""End-to-end composition: stack -> masks -> filtered masks -> boundaries -> scores."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import contours, evaluation, filtering, reconstruct, synth
from .config import Settings
from .geometry import Grid


def detect(stack, settings: Settings, schedule=None):
    """Detection boundaries for one predicted stack."""
    schedule = schedule or settings.schedule()
    masks = reconstruct.reconstruct(stack, settings.th_b, settings.grow)
    if settings.filter != "none":
        masks = filtering.apply_filter(masks, stack, schedule, settings.filter_config())
    return contours.extract_boundaries(masks, stack.values[-1], settings.boundary, settings.epsilon)


@dataclass(frozen=True)
class SceneSpec:
    grid: Grid
    count: int = 3
    family: str = "mixed"
    min_separation: float = 4.0
    min_area: int = 400
    noise: synth.Noise = synth.Noise()


def synthetic_case(spec: SceneSpec, seed: int, schedule):
    polys = synth.random_scene(spec.grid, spec.count, spec.family, spec.min_separation, seed=seed,
                               min_area=spec.min_area)
    stack = synth.oracle_stack(polys, spec.grid, schedule)
    if spec.noise != synth.Noise():
        stack = synth.corrupt(stack, spec.noise, seed=seed)
    return polys, stack


def run_synthetic(spec: SceneSpec, seeds, settings: Settings, workers: int = 1):
    """Score the full loop on seeded synthetic scenes; results keyed by seed in input order."""
    schedule = settings.schedule()

    def one(seed):
        polys, stack = synthetic_case(spec, seed, schedule)
        return polys, detect(stack, settings, schedule)

    seeds = list(seeds)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    gts = {str(s): r[0] for s, r in zip(seeds, results)}
    dets = {str(s): r[1] for s, r in zip(seeds, results)}
    return evaluation.match_and_score(dets, gts, settings.iou), dets, gts
