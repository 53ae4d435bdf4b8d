"""Warp/block scheduling cost model: greedy warp packing, SM list scheduling, sweeps."""
from __future__ import annotations

import numpy as np
import pytest

from tenkit import CooTensor, build_csf, canonicalize
from tenkit.balance import SplitConfig, assign_slice_blocks, split_fibers
from tenkit.schedsim import SWEEP_COLUMNS, MachineModel, SimReport, simulate, sweep_split

from helpers import make_random_tensor


def _slices_with_fiber_sizes(per_slice: list[list[int]]) -> CooTensor:
    """Tensor whose slice s has fibers of the given nonzero counts."""
    rows = []
    for s, sizes in enumerate(per_slice):
        for j, n in enumerate(sizes):
            for k in range(n):
                rows.append((s, j, k))
    idx = np.array(rows, dtype=np.int64)
    dims = (len(per_slice), int(idx[:, 1].max()) + 1, int(idx[:, 2].max()) + 1)
    return canonicalize(CooTensor(dims=dims, indices=idx, values=np.ones(len(rows))))


def _schedule(t, cfg):
    c = split_fibers(build_csf(t, (0, 1, 2)), cfg)
    return c, assign_slice_blocks(c, cfg)


# machine model ---------------------------------------------------------

def test_machine_model_rejects_nonpositive():
    with pytest.raises(ValueError):
        MachineModel(num_sms=0)
    with pytest.raises(ValueError):
        MachineModel(warps_per_block=0)


# single-block behavior -------------------------------------------------

def test_single_unit_single_warp_makespan_is_total_work():
    t = _slices_with_fiber_sizes([[8]])
    cfg = SplitConfig(fiber_threshold=128, block_size=512, warp_size=2)
    c, sched = _schedule(t, cfg)
    rep = simulate(sched, c, MachineModel(num_sms=1, warps_per_block=1, warp_size=2))
    assert rep.makespan_cycles == rep.total_work_cycles == 4  # ceil(8/2)
    assert rep.sm_efficiency_proxy == 1.0
    assert rep.occupancy_proxy == 1.0


def test_greedy_warp_packing_hand_example():
    # fibers costing 3, 2, 2 cycles on 2 warps: (3) and (2+2) -> 4 cycles
    t = _slices_with_fiber_sizes([[3, 2, 2]])
    cfg = SplitConfig(fiber_threshold=128, block_size=512, warp_size=1)
    c, sched = _schedule(t, cfg)
    rep = simulate(sched, c, MachineModel(num_sms=1, warps_per_block=2, warp_size=1))
    assert rep.per_block_cycles == (4,)
    assert rep.makespan_cycles == 4
    assert rep.total_work_cycles == 7


def test_blocks_list_scheduled_onto_sm_slots():
    # blocks of 4, 3, 3 cycles on 2 SMs: SM0 <- 4, SM1 <- 3+3 -> makespan 6
    t = _slices_with_fiber_sizes([[4], [3], [3]])
    cfg = SplitConfig(fiber_threshold=128, block_size=512, warp_size=1)
    c, sched = _schedule(t, cfg)
    assert sched.num_blocks == 3
    rep = simulate(sched, c, MachineModel(num_sms=2, warps_per_block=1, warp_size=1))
    assert rep.per_block_cycles == (4, 3, 3)
    assert rep.makespan_cycles == 6
    assert rep.sm_efficiency_proxy == pytest.approx(10 / 12)


def test_simulate_invariants_random(rng):
    for trial in range(10):
        t = canonicalize(make_random_tensor(rng, (12, 10, 30), 400))
        cfg = SplitConfig(fiber_threshold=8, block_size=32, warp_size=4)
        c, sched = _schedule(t, cfg)
        mm = MachineModel(num_sms=3, warps_per_block=2, warp_size=4, blocks_per_sm=2)
        rep = simulate(sched, c, mm)
        slots = mm.num_sms * mm.blocks_per_sm
        assert rep.makespan_cycles >= max(rep.per_block_cycles)
        assert rep.makespan_cycles >= rep.total_work_cycles / (slots * mm.warps_per_block)
        assert 0 < rep.sm_efficiency_proxy <= 1
        # mean active warps per active cycle is bounded by the number of
        # blocks an SM can host concurrently
        assert 0 < rep.occupancy_proxy <= mm.blocks_per_sm
        assert len(rep.per_block_cycles) == sched.num_blocks


# threshold sweeps ------------------------------------------------------

def test_sweep_infinite_threshold_means_no_split(rng):
    t = canonicalize(make_random_tensor(rng, (10, 8, 40), 300))
    c = build_csf(t, (0, 1, 2))
    mm = MachineModel(num_sms=2, warps_per_block=2, warp_size=4)
    pts = sweep_split(c, [float("inf")], mm)
    assert pts[0].metrics.fibers == c.num_fibers
    assert pts[0].to_row()["fiber_threshold"] == "inf"


def test_sweep_rows_match_declared_columns(rng):
    c = build_csf(canonicalize(make_random_tensor(rng, (10, 8, 40), 300)), (0, 1, 2))
    mm = MachineModel(num_sms=2, warps_per_block=2, warp_size=4)
    pts = sweep_split(c, [float("inf"), 16, 8], mm)
    for p in pts:
        assert list(p.to_row().keys()) == SWEEP_COLUMNS


def test_sweep_skewed_tensor_makespan_relief(rng):
    # one dominant slice: splitting it must not hurt, and tighter
    # thresholds strictly reduce the fiber-size spread
    heavy = np.stack(
        [np.zeros(512, dtype=np.int64), np.repeat(np.arange(4), 128), np.tile(np.arange(128), 4)], axis=1
    )
    light_rows = [(1 + s, j, 0) for s in range(8) for j in range(2)]
    idx = np.vstack([heavy, np.array(light_rows, dtype=np.int64)])
    t = canonicalize(CooTensor(dims=(9, 4, 128), indices=idx, values=np.ones(len(idx))))
    mm = MachineModel(num_sms=4, warps_per_block=4, warp_size=8)
    thresholds = [float("inf"), 64, 32, 8]
    pts = sweep_split(build_csf(t, (0, 1, 2)), thresholds, mm)
    spans = [p.sim.makespan_cycles for p in pts]
    assert all(a >= b for a, b in zip(spans, spans[1:]))
    assert spans[-1] < spans[0]
    spreads = [p.metrics.stddev_nnz_per_fiber for p in pts]
    assert spreads[1] < spreads[0] and spreads[2] < spreads[1]
    assert all(p.metrics.nnz == t.nnz for p in pts)


def test_sweep_uniform_tensor_flat_makespan():
    # every slice one fiber of 8: nothing to split at threshold >= 8
    t = _slices_with_fiber_sizes([[8]] * 6)
    mm = MachineModel(num_sms=2, warps_per_block=2, warp_size=4)
    pts = sweep_split(build_csf(t, (0, 1, 2)), [float("inf"), 16, 8], mm)
    spans = {p.sim.makespan_cycles for p in pts}
    assert len(spans) == 1
