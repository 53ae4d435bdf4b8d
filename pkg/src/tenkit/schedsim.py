"""Cycle-count cost model for warp/block execution of a fiber schedule.

The model charges one cycle per warp_size nonzeros of a fiber segment
(partial warps round up) and nothing for combining partial results.  Within
a thread block, segments are handed to the next idle warp; the block runs
until its slowest warp finishes.  Blocks are list-scheduled in block-id
order onto num_sms * blocks_per_sm slots, each new block starting on the
earliest-finishing slot.  The makespan is the last finish time.

Two derived ratios mimic profiler counters: sm_efficiency_proxy is the mean
fraction of the makespan each SM spends busy, occupancy_proxy is the mean
number of active warps per busy SM cycle over the block's warp budget.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .balance import (
    BlockSchedule,
    ImbalanceMetrics,
    SplitConfig,
    assign_slice_blocks,
    imbalance_metrics,
    split_fibers,
)
from .formats import CsfTensor


@dataclass(frozen=True)
class MachineModel:
    """Slot geometry of the simulated device."""

    num_sms: int = 56
    warps_per_block: int = 16
    warp_size: int = 32
    blocks_per_sm: int = 1

    def __post_init__(self):
        for name in ("num_sms", "warps_per_block", "warp_size", "blocks_per_sm"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    @property
    def slots(self) -> int:
        return self.num_sms * self.blocks_per_sm


@dataclass(frozen=True)
class SimReport:
    """Cost-model outcome for one schedule on one machine."""

    makespan_cycles: int
    total_work_cycles: int
    per_block_cycles: tuple[int, ...]
    sm_efficiency_proxy: float
    occupancy_proxy: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["per_block_cycles"] = list(self.per_block_cycles)
        return d


def _block_cycles(costs: Sequence[int], warps: int) -> int:
    """Greedy next-idle-warp makespan of one block's segment costs."""
    if len(costs) <= warps:
        return max(costs, default=0)
    heap = [0] * warps
    for c in costs:
        heapq.heapreplace(heap, heap[0] + c)
    return max(heap)


def simulate(schedule: BlockSchedule, t: CsfTensor, machine: MachineModel) -> SimReport:
    """Run the cost model for ``schedule`` over tensor ``t``.

    Raises ValueError when the schedule does not match the tensor's shape.
    """
    schedule.validate_for(t)
    fiber_sizes = t.fiber_sizes()
    ws = machine.warp_size

    total_work = 0
    block_cycles: list[int] = []
    for u in schedule.units:
        costs = (fiber_sizes[u.fiber_start : u.fiber_stop] + ws - 1) // ws
        total_work += int(costs.sum())
        block_cycles.append(_block_cycles([int(c) for c in costs], machine.warps_per_block))

    # list-schedule blocks onto slots; ties go to the lowest slot id
    slot_finish = [0] * machine.slots
    heap = [(0, s) for s in range(machine.slots)]
    for cycles in block_cycles:
        start, slot = heapq.heappop(heap)
        finish = start + cycles
        slot_finish[slot] = finish
        heapq.heappush(heap, (finish, slot))

    makespan = max(slot_finish, default=0)
    sm_busy = [0] * machine.num_sms
    for slot, finish in enumerate(slot_finish):
        sm = slot % machine.num_sms
        sm_busy[sm] = max(sm_busy[sm], finish)
    active_sm_cycles = sum(sm_busy)
    if makespan > 0:
        sm_eff = active_sm_cycles / (machine.num_sms * makespan)
        occupancy = (total_work / active_sm_cycles) / machine.warps_per_block
    else:
        sm_eff = 0.0
        occupancy = 0.0
    return SimReport(
        makespan_cycles=makespan,
        total_work_cycles=total_work,
        per_block_cycles=tuple(block_cycles),
        sm_efficiency_proxy=sm_eff,
        occupancy_proxy=occupancy,
    )


@dataclass(frozen=True)
class SweepPoint:
    """One threshold's balance metrics and simulated cost."""

    fiber_threshold: float
    num_blocks: int
    metrics: ImbalanceMetrics
    sim: SimReport

    def to_row(self) -> dict:
        thr = self.fiber_threshold
        return {
            "fiber_threshold": "inf" if math.isinf(thr) else int(thr),
            "makespan_cycles": self.sim.makespan_cycles,
            "sm_efficiency_proxy": self.sim.sm_efficiency_proxy,
            "occupancy_proxy": self.sim.occupancy_proxy,
            "stddev_nnz_per_fiber": self.metrics.stddev_nnz_per_fiber,
            "stddev_nnz_per_slice": self.metrics.stddev_nnz_per_slice,
            "max_nnz_per_fiber": self.metrics.max_nnz_per_fiber,
            "num_blocks": self.num_blocks,
            "slices": self.metrics.slices,
            "fibers": self.metrics.fibers,
            "nnz": self.metrics.nnz,
            "total_work_cycles": self.sim.total_work_cycles,
        }


SWEEP_COLUMNS = [
    "fiber_threshold", "makespan_cycles",
    "sm_efficiency_proxy", "occupancy_proxy",
    "stddev_nnz_per_fiber", "stddev_nnz_per_slice",
    "max_nnz_per_fiber", "num_blocks", "slices", "fibers", "nnz",
    "total_work_cycles",
]


def sweep_split(
    t: CsfTensor, thresholds: Sequence[float], machine: MachineModel
) -> list[SweepPoint]:
    """Split, schedule, and simulate ``t`` at each fiber threshold.

    A non-finite threshold means no splitting.  Block size for the slice
    budget is the machine's block width (warps_per_block * warp_size).
    """
    block_size = machine.warps_per_block * machine.warp_size
    points = []
    for thr in thresholds:
        if math.isinf(thr):
            split = t
            cfg = SplitConfig(block_size=block_size, warp_size=machine.warp_size)
        else:
            cfg = SplitConfig(
                fiber_threshold=int(thr),
                block_size=block_size,
                warp_size=machine.warp_size,
            )
            split = split_fibers(t, cfg)
        schedule = assign_slice_blocks(split, cfg)
        points.append(
            SweepPoint(
                fiber_threshold=float(thr),
                num_blocks=schedule.num_blocks,
                metrics=imbalance_metrics(split),
                sim=simulate(schedule, split, machine),
            )
        )
    return points
