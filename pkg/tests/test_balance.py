"""Load balancing: fiber splitting, slice multiplicity schedules, imbalance metrics."""
from __future__ import annotations

import math

import numpy as np
import pytest

from tenkit import (
    CooTensor,
    build_csf,
    build_hbcsf,
    canonicalize,
    flatten_csf,
    mttkrp,
)
from tenkit.balance import (
    BlockSchedule,
    SplitConfig,
    assign_slice_blocks,
    imbalance_metrics,
    split_fibers,
)
from tenkit.kernels import mttkrp_csf, mttkrp_scheduled

from helpers import fig_tensor, make_random_tensor, random_factors


def _single_fiber_tensor(n: int) -> CooTensor:
    idx = np.stack([np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), np.arange(n)], axis=1)
    return canonicalize(CooTensor(dims=(1, 1, n), indices=idx, values=np.arange(1.0, n + 1.0)))


# fiber splitting -------------------------------------------------------

def test_split_32_into_two_16s():
    c = build_csf(_single_fiber_tensor(32), (0, 1, 2))
    cs = split_fibers(c, SplitConfig(fiber_threshold=16))
    assert cs.fiber_sizes().tolist() == [16, 16]
    assert cs.idxs[1].tolist() == [0, 0]  # both segments keep the fiber index
    assert cs.split is True


def test_split_tail_segment_is_smaller():
    c = build_csf(_single_fiber_tensor(33), (0, 1, 2))
    cs = split_fibers(c, SplitConfig(fiber_threshold=16))
    assert cs.fiber_sizes().tolist() == [16, 16, 1]


def test_split_noop_below_threshold(rng):
    t = canonicalize(make_random_tensor(rng, (8, 8, 8), 60))
    c = build_csf(t, (0, 1, 2))
    cs = split_fibers(c, SplitConfig(fiber_threshold=int(np.max(c.fiber_sizes()))))
    assert cs is c
    assert cs.split is False


def test_split_preserves_entries_and_counts(rng):
    t = canonicalize(make_random_tensor(rng, (10, 6, 40), 400))
    c = build_csf(t, (0, 1, 2))
    cfg = SplitConfig(fiber_threshold=4)
    cs = split_fibers(c, cfg)
    assert cs.num_slices == c.num_slices
    assert np.max(cs.fiber_sizes()) <= 4
    expect_fibers = int(np.sum(np.ceil(c.fiber_sizes() / 4)))
    assert cs.num_fibers == expect_fibers
    assert canonicalize(flatten_csf(cs)) == t
    # segment indices are nondecreasing within a slice (relaxed invariant)
    for a, b in zip(cs.ptrs[0][:-1], cs.ptrs[0][1:]):
        seg = cs.idxs[1][a:b].astype(np.int64)
        assert np.all(np.diff(seg) >= 0)


def test_split_mttkrp_invariance(rng):
    t = canonicalize(make_random_tensor(rng, (9, 7, 30), 350))
    f = random_factors(rng, t.dims, 8)
    c = build_csf(t, (0, 1, 2))
    base, _ = mttkrp_csf(c, f, 0)
    for tau in (2, 4, 16):
        cs = split_fibers(c, SplitConfig(fiber_threshold=tau))
        out, _ = mttkrp_csf(cs, f, 0)
        dev = np.linalg.norm(out - base, axis=1) / (1.0 + np.linalg.norm(base, axis=1))
        assert np.max(dev) < 1e-10


def test_split_hbcsf_touches_only_csf_part(rng):
    t = canonicalize(make_random_tensor(rng, (20, 6, 30), 250))
    h = build_hbcsf(t, (0, 1, 2))
    hs = split_fibers(h, SplitConfig(fiber_threshold=3))
    assert hs.coo_part is h.coo_part
    assert hs.csl_part is h.csl_part
    if h.csf_part.num_slices and np.max(h.csf_part.fiber_sizes()) > 3:
        assert hs.csf_part.split is True
        assert np.max(hs.csf_part.fiber_sizes()) <= 3


def test_split_config_validation():
    with pytest.raises(ValueError):
        SplitConfig(fiber_threshold=0)
    with pytest.raises(ValueError):
        SplitConfig(block_size=0)
    with pytest.raises(ValueError):
        SplitConfig(block_size=100, warp_size=32)  # not a warp multiple


# slice multiplicity ----------------------------------------------------

def test_multiplicity_2048_over_512_is_4():
    t = _single_fiber_tensor(2048)
    cfg = SplitConfig(fiber_threshold=128, block_size=512)
    c = split_fibers(build_csf(t, (0, 1, 2)), cfg)
    sched = assign_slice_blocks(c, cfg)
    assert sched.multiplicities.tolist() == [4]
    assert len(sched.units) == 4


def test_multiplicity_small_slice_is_1():
    t = _single_fiber_tensor(10)
    cfg = SplitConfig(fiber_threshold=128, block_size=512)
    c = build_csf(t, (0, 1, 2))
    sched = assign_slice_blocks(c, cfg)
    assert sched.multiplicities.tolist() == [1]


def test_units_match_ceil_division_oracle(rng):
    # heavily skewed: one slice carries most of the mass
    lead = np.concatenate([np.zeros(900, dtype=np.int64), rng.integers(1, 40, size=100)])
    rest = rng.integers(0, 50, size=(1000, 2))
    t = canonicalize(CooTensor(dims=(40, 50, 50), indices=np.column_stack([lead, rest]), values=rng.uniform(0.5, 1, 1000)))
    cfg = SplitConfig(fiber_threshold=16, block_size=64)
    c = split_fibers(build_csf(t, (0, 1, 2)), cfg)
    sched = assign_slice_blocks(c, cfg)
    nnz = c.slice_nnz()
    expect = np.maximum(1, np.ceil(nnz / 64).astype(int))
    assert sched.multiplicities.tolist() == expect.tolist()
    per_slice = np.bincount([u.slice_pos for u in sched.units], minlength=c.num_slices)
    assert np.all(per_slice <= expect)
    sched.validate_for(c)  # covers every fiber exactly once, contiguously


def test_unit_groups_balance_by_nnz():
    # slice of 8 fibers x 4 nnz, block_size 16 -> multiplicity 2, 16 nnz each
    idx = np.stack(
        [np.zeros(32, dtype=np.int64), np.repeat(np.arange(8), 4), np.tile(np.arange(4), 8)], axis=1
    )
    t = canonicalize(CooTensor(dims=(1, 8, 4), indices=idx, values=np.ones(32)))
    cfg = SplitConfig(fiber_threshold=128, block_size=16, warp_size=8)
    c = build_csf(t, (0, 1, 2))
    sched = assign_slice_blocks(c, cfg)
    assert sched.multiplicities.tolist() == [2]
    sizes = [int(np.sum(c.fiber_sizes()[u.fiber_start : u.fiber_stop])) for u in sched.units]
    assert sizes == [16, 16]


def test_scheduled_mttkrp_equals_unsplit(rng):
    t = canonicalize(make_random_tensor(rng, (12, 8, 25), 380))
    f = random_factors(rng, t.dims, 8)
    c = build_csf(t, (0, 1, 2))
    base, _ = mttkrp_csf(c, f, 0)
    cfg = SplitConfig(fiber_threshold=4, block_size=8, warp_size=4)
    cs = split_fibers(c, cfg)
    sched = assign_slice_blocks(cs, cfg)
    for threads in (1, 4):
        out, _ = mttkrp_scheduled(cs, sched, f, 0, threads=threads)
        dev = np.linalg.norm(out - base, axis=1) / (1.0 + np.linalg.norm(base, axis=1))
        assert np.max(dev) < 1e-10


def test_validate_rejects_foreign_schedule(rng):
    t1 = canonicalize(make_random_tensor(rng, (10, 8, 8), 200))
    t2 = canonicalize(make_random_tensor(rng, (10, 8, 8), 100))
    cfg = SplitConfig()
    c1 = build_csf(t1, (0, 1, 2))
    c2 = build_csf(t2, (0, 1, 2))
    sched = assign_slice_blocks(c1, cfg)
    with pytest.raises(ValueError):
        sched.validate_for(c2)


# imbalance metrics -----------------------------------------------------

def test_metrics_walkthrough_values():
    m = imbalance_metrics(build_csf(canonicalize(fig_tensor()), (0, 1, 2)))
    assert (m.slices, m.fibers, m.nnz) == (3, 5, 8)
    assert m.mean_nnz_per_slice == pytest.approx(8 / 3)
    counts = [1, 3, 4]
    mean = 8 / 3
    assert m.stddev_nnz_per_slice == pytest.approx(math.sqrt(sum((x - mean) ** 2 for x in counts) / 3))
    assert m.max_nnz_per_slice == 4


def test_metrics_uniform_fibers_zero_stddev():
    idx = np.stack([np.repeat(np.arange(4), 2), np.tile(np.arange(2), 4), np.zeros(8, dtype=np.int64)], axis=1)
    t = canonicalize(CooTensor(dims=(4, 2, 1), indices=idx, values=np.ones(8)))
    m = imbalance_metrics(build_csf(t, (0, 1, 2)))
    assert m.stddev_nnz_per_fiber == 0.0


def test_metrics_stddev_drops_after_splitting_heavy_fiber():
    # one fiber of 1000 among singletons
    heavy = np.stack([np.zeros(1000, dtype=np.int64), np.zeros(1000, dtype=np.int64), np.arange(1000)], axis=1)
    light = np.stack([np.arange(1, 33), np.ones(32, dtype=np.int64), np.ones(32, dtype=np.int64)], axis=1)
    t = canonicalize(CooTensor(dims=(33, 2, 1000), indices=np.vstack([heavy, light]), values=np.ones(1032)))
    c = build_csf(t, (0, 1, 2))
    before = imbalance_metrics(c).stddev_nnz_per_fiber
    cs = split_fibers(c, SplitConfig(fiber_threshold=128))
    after = imbalance_metrics(cs).stddev_nnz_per_fiber
    assert after < before
