import numpy as np
import pytest

from pmtext import filtering, geometry, probmap, reconstruct, synth
from pmtext.errors import ShapeMismatch, ValidationError
from pmtext.filtering import FilterConfig
from pmtext.geometry import Grid, InstanceMask
from pmtext.probmap import ProbabilityStack

SCHED = probmap.make_schedule(3, 4)


def block(grid, r0, c0, h, w, label=1):
    arr = np.zeros(grid.shape, dtype=bool)
    arr[r0:r0 + h, c0:c0 + w] = True
    return InstanceMask.from_array(arr, label)


def test_threshold_examples():
    grid = Grid(40, 40)
    mask = block(grid, 5, 5, 20, 25)            # 500 px
    last = np.full(grid.shape, 0.7)
    assert filtering.threshold_filter([mask], last, FilterConfig()) == [mask]
    small = InstanceMask(grid, np.arange(299), 2)
    assert filtering.threshold_filter([small], np.ones(grid.shape), FilterConfig()) == []
    assert filtering.threshold_filter([], last, FilterConfig()) == []
    low = np.full(grid.shape, 0.6)
    assert filtering.threshold_filter([mask], low, FilterConfig()) == []


def test_threshold_identity_and_order(rng):
    grid = Grid(32, 32)
    masks = [block(grid, r, c, 3, 4, k) for k, (r, c) in enumerate([(0, 0), (10, 10), (20, 3), (25, 25)], 1)]
    values = rng.random(grid.shape) * 0.2
    out = filtering.threshold_filter(masks, values, FilterConfig(th_e=0.0, beta_a=0))
    assert out == masks and [m.label for m in out] == [1, 2, 3, 4]
    sub = filtering.threshold_filter(masks, values, FilterConfig(th_e=0.09, beta_a=0))
    assert [m.label for m in sub] == sorted(m.label for m in sub)
    assert all(any(m is n for n in masks) for m in sub)


def test_shape_mismatch():
    grid = Grid(10, 10)
    with pytest.raises(ShapeMismatch):
        filtering.threshold_filter([block(grid, 0, 0, 2, 2)], np.zeros((9, 10)), FilterConfig(beta_a=0))


def test_config_validation():
    for kwargs in ({"th_b": 0}, {"th_b": 1}, {"th_e": 1.0}, {"th_e": -0.1}, {"beta_a": -1}, {"mode": "vote"}):
        with pytest.raises(ValidationError):
            FilterConfig(**kwargs)
    assert FilterConfig().scaled_for_stride(2).beta_a == 75


def own_maps(mask, alphas):
    dist = geometry.mask_distance_map(mask)
    L = geometry.instance_scale(dist)
    values = np.zeros((len(alphas), mask.grid.size))
    for k, a in enumerate(alphas):
        values[k, mask.pixels] = probmap.saf_array(dist, L, a)
    return ProbabilityStack(tuple(alphas), values.reshape((len(alphas),) + mask.grid.shape))


def test_voting_self_consistent_always_passes():
    grid = Grid(48, 48)
    mask = block(grid, 4, 6, 21, 30)
    stack = own_maps(mask, SCHED.alphas)
    for th_b in (0.01, 0.3, 0.5, 0.99):
        assert filtering.votes(mask, stack, SCHED, th_b) == [1, 1, 1, 1]
        assert filtering.voting_filter([mask], stack, SCHED, FilterConfig(th_b=th_b, mode="voting")) == [mask]


def test_voting_zero_prediction_drops():
    grid = Grid(21, 21)
    square = InstanceMask.from_array(np.ones(grid.shape, dtype=bool))
    expected = filtering.expected_means(square, SCHED.alphas)
    assert min(expected) > 0.325 ** 2
    zeros = ProbabilityStack(SCHED.alphas, np.zeros((4,) + grid.shape))
    cfg = FilterConfig(th_b=0.325, beta_a=0, mode="voting")
    assert filtering.votes(square, zeros, SCHED, 0.325) == [0, 0, 0, 0]
    assert filtering.voting_filter([square], zeros, SCHED, cfg) == []


def test_vote_score_arithmetic():
    assert filtering.vote_score((0, 0, 1, 1), (0.1, 0.2, 0.3, 0.4)) == pytest.approx(0.7)
    assert filtering.vote_score((1, 1, 0, 0), (0.1, 0.2, 0.3, 0.4)) == pytest.approx(0.3)


def test_vote_offset_is_th_b_squared():
    grid = Grid(30, 30)
    mask = block(grid, 3, 3, 20, 24)
    exp = filtering.expected_means(mask, SCHED.alphas)
    th_b = 0.3
    # observed mean just above / just below E_new - th_b**2 on map 0
    for delta, vote in ((1e-9, 1), (-1e-9, 0)):
        values = np.zeros((4,) + grid.shape)
        values[0].reshape(-1)[mask.pixels] = exp[0] - th_b ** 2 + delta
        stack = ProbabilityStack(SCHED.alphas, values)
        assert filtering.votes(mask, stack, SCHED, th_b)[0] == vote


def test_voting_skips_small_and_empty():
    grid = Grid(20, 20)
    small = block(grid, 2, 2, 3, 3)
    stack = own_maps(small, SCHED.alphas)
    assert filtering.voting_filter([small], stack, SCHED, FilterConfig(mode="voting")) == []
    assert filtering.voting_filter([small], stack, SCHED, FilterConfig(beta_a=0, mode="voting")) == [small]
    empty = InstanceMask(grid, np.empty(0, dtype=np.int64), 9)
    assert filtering.voting_filter([empty], stack, SCHED, FilterConfig(beta_a=0, mode="voting")) == []


def test_renormalized_weights_do_not_change_unanimous_votes():
    grid = Grid(48, 48)
    mask = block(grid, 4, 6, 21, 30)
    stack = own_maps(mask, SCHED.alphas)
    zeros = ProbabilityStack(SCHED.alphas, np.zeros_like(stack.values))
    raw = np.array([3.0, 1.0, 7.0, 2.0])
    other = probmap.AlphaSchedule(SCHED.alphas, tuple(raw / raw.sum()))
    cfg = FilterConfig(mode="voting")
    for s in (stack, zeros):
        assert filtering.voting_filter([mask], s, SCHED, cfg) == filtering.voting_filter([mask], s, other, cfg)


def test_apply_filter_on_clean_scene():
    grid = Grid(160, 160)
    polys = synth.random_scene(grid, 4, seed=3)
    stack = synth.oracle_stack(polys, grid, SCHED)
    masks = reconstruct.reconstruct(stack)
    for mode in filtering.MODES:
        assert filtering.apply_filter(masks, stack, SCHED, FilterConfig(mode=mode)) == masks
