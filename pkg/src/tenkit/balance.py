"""Load-balancing transforms: fiber splitting and slice-to-block assignment.

Long fibers serialize whole warps and heavy slices serialize whole thread
blocks, so two transforms rebalance a CSF tree:

* split_fibers caps every fiber at a threshold of nonzeros by cutting long
  fibers into segments that repeat the fiber coordinate.  Slice structure is
  untouched.
* assign_slice_blocks gives each slice a multiplicity (how many thread
  blocks it spreads over, one per block_size nonzeros) and greedily packs
  contiguous runs of fibers into that many units.

Both transforms preserve the nonzero set; MTTKRP over the transformed tree
matches the original within floating-point reassociation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import singledispatch

import numpy as np

from .formats import PTR_DTYPE, CsfTensor, HbCsfTensor


@dataclass(frozen=True)
class SplitConfig:
    """Thresholds for the two balancing levels.

    fiber_threshold caps nonzeros per fiber segment; block_size is the
    nonzero budget of one thread block and must be a multiple of warp_size.
    """

    fiber_threshold: int = 128
    block_size: int = 512
    warp_size: int = 32

    def __post_init__(self):
        if self.fiber_threshold < 1:
            raise ValueError("fiber_threshold must be at least 1")
        if self.warp_size < 1:
            raise ValueError("warp_size must be at least 1")
        if self.block_size < 1 or self.block_size % self.warp_size != 0:
            raise ValueError(
                f"block_size {self.block_size} must be a positive multiple of "
                f"warp_size {self.warp_size}"
            )


@singledispatch
def split_fibers(t, cfg: SplitConfig):
    """Cut fibers longer than cfg.fiber_threshold into segments.

    A fiber of n nonzeros becomes ceil(n/threshold) segments, all but the
    last holding exactly threshold nonzeros.  Segments repeat the original
    fiber coordinate, so the fiber index array becomes nondecreasing rather
    than strictly increasing and the result is flagged split=True.  Nonzeros,
    their order, and all slice-level structure are unchanged.  When no fiber
    exceeds the threshold the input is returned as-is.
    """
    raise TypeError(f"cannot split {type(t).__name__}")


@split_fibers.register
def _(t: CsfTensor, cfg: SplitConfig) -> CsfTensor:
    tau = cfg.fiber_threshold
    sizes = t.fiber_sizes()
    nseg = (sizes + tau - 1) // tau
    if t.nnz == 0 or int(nseg.max(initial=1)) <= 1:
        return t
    n = t.order
    total = int(nseg.sum())
    seg_sizes = np.full(total, tau, dtype=PTR_DTYPE)
    seg_offsets = np.zeros(len(nseg) + 1, dtype=PTR_DTYPE)
    np.cumsum(nseg, out=seg_offsets[1:])
    last = seg_offsets[1:] - 1
    seg_sizes[last] = sizes - (nseg - 1) * tau
    new_leaf_ptr = np.zeros(total + 1, dtype=PTR_DTYPE)
    np.cumsum(seg_sizes, out=new_leaf_ptr[1:])

    new_idxs = list(t.idxs)
    new_idxs[n - 2] = np.repeat(t.idxs[n - 2], nseg)
    new_ptrs = list(t.ptrs)
    new_ptrs[n - 2] = new_leaf_ptr
    # parents now address segment positions instead of fiber positions
    new_ptrs[n - 3] = seg_offsets[t.ptrs[n - 3]] if n >= 3 else new_ptrs[n - 3]
    return replace(
        t, ptrs=tuple(new_ptrs), idxs=tuple(new_idxs), split=True
    )


@split_fibers.register
def _(t: HbCsfTensor, cfg: SplitConfig) -> HbCsfTensor:
    # only the CSF bucket has fibers long enough to matter; COO and CSL
    # records are single-nonzero or singleton-fiber by construction
    return replace(t, csf_part=split_fibers(t.csf_part, cfg))


@dataclass(frozen=True)
class ScheduleUnit:
    """One thread block's work: a contiguous run of fibers of one slice."""

    block_id: int
    slice_pos: int
    fiber_start: int
    fiber_stop: int


@dataclass(frozen=True, eq=False)
class BlockSchedule:
    """Slice-major assignment of fiber runs to thread blocks.

    multiplicities[s] is the number of blocks slice s was budgeted; the
    greedy packing never emits more units than that.  num_slices/num_fibers
    pin the tree shape the schedule was derived from.
    """

    units: tuple[ScheduleUnit, ...]
    multiplicities: np.ndarray
    num_slices: int
    num_fibers: int

    @property
    def num_blocks(self) -> int:
        return len(self.units)

    def validate_for(self, t: CsfTensor) -> None:
        """Raise ValueError unless this schedule partitions t's fibers."""
        if t.num_slices != self.num_slices or t.num_fibers != self.num_fibers:
            raise ValueError(
                f"schedule was built for {self.num_slices} slices/"
                f"{self.num_fibers} fibers, tensor has {t.num_slices}/{t.num_fibers}"
            )
        fpos = t.fiber_positions()
        cursor = 0
        for u in self.units:
            if u.fiber_start != cursor or u.fiber_stop <= u.fiber_start:
                raise ValueError("schedule units do not partition the fibers")
            if not (fpos[u.slice_pos] <= u.fiber_start < fpos[u.slice_pos + 1]):
                raise ValueError(
                    f"unit {u.block_id} starts outside slice {u.slice_pos}"
                )
            if u.fiber_stop > fpos[u.slice_pos + 1]:
                raise ValueError(
                    f"unit {u.block_id} crosses out of slice {u.slice_pos}"
                )
            cursor = u.fiber_stop
        if cursor != self.num_fibers:
            raise ValueError("schedule does not cover all fibers")


def assign_slice_blocks(t: CsfTensor, cfg: SplitConfig) -> BlockSchedule:
    """Budget blocks per slice and pack fibers greedily.

    A slice of m nonzeros gets multiplicity max(1, ceil(m / block_size)).
    Walking its fibers in order, a unit closes once it has accumulated
    ceil(m / multiplicity) nonzeros; each closed unit is one thread block.
    Closed units can overshoot the target by at most one fiber, so a slice
    never produces more units than its multiplicity.
    """
    fpos = t.fiber_positions()
    fiber_sizes = t.fiber_sizes()
    slice_nnz = np.diff(t.ptrs[-1][fpos])
    mult = np.maximum(1, -(-slice_nnz // cfg.block_size))
    units: list[ScheduleUnit] = []
    for s in range(t.num_slices):
        begin, end = int(fpos[s]), int(fpos[s + 1])
        m = int(slice_nnz[s])
        if m <= cfg.block_size:
            units.append(ScheduleUnit(len(units), s, begin, end))
            continue
        target = math.ceil(m / int(mult[s]))
        acc = 0
        start = begin
        for f in range(begin, end):
            acc += int(fiber_sizes[f])
            if acc >= target:
                units.append(ScheduleUnit(len(units), s, start, f + 1))
                start = f + 1
                acc = 0
        if start < end:
            units.append(ScheduleUnit(len(units), s, start, end))
    return BlockSchedule(
        units=tuple(units),
        multiplicities=mult.astype(np.int64),
        num_slices=t.num_slices,
        num_fibers=t.num_fibers,
    )


@dataclass(frozen=True)
class ImbalanceMetrics:
    """Population spread of nonzeros over slices and fibers."""

    slices: int
    fibers: int
    nnz: int
    mean_nnz_per_slice: float
    stddev_nnz_per_slice: float
    max_nnz_per_slice: int
    mean_nnz_per_fiber: float
    stddev_nnz_per_fiber: float
    max_nnz_per_fiber: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def imbalance_metrics(t: CsfTensor) -> ImbalanceMetrics:
    """Mean, population stddev, and max of nonzeros per slice and per fiber
    (per segment once split)."""
    if t.nnz == 0:
        return ImbalanceMetrics(0, 0, 0, 0.0, 0.0, 0, 0.0, 0.0, 0)
    slice_nnz = t.slice_nnz()
    fiber_nnz = t.fiber_sizes()
    return ImbalanceMetrics(
        slices=t.num_slices,
        fibers=t.num_fibers,
        nnz=t.nnz,
        mean_nnz_per_slice=float(slice_nnz.mean()),
        stddev_nnz_per_slice=float(slice_nnz.std()),
        max_nnz_per_slice=int(slice_nnz.max()),
        mean_nnz_per_fiber=float(fiber_nnz.mean()),
        stddev_nnz_per_fiber=float(fiber_nnz.std()),
        max_nnz_per_fiber=int(fiber_nnz.max()),
    )
