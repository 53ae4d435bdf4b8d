"""MTTKRP kernels over each storage format, with exact operation counts.

MTTKRP for mode n computes Y[i, :] = sum over nonzeros x with mode-n index i
of value(x) * prod over the other modes d of F_d[index_d(x), :], where each
F_d is a dense (dims[d], R) factor matrix.  factors[n] is ignored as input.

Operation counting convention (floating-point multiplies and adds, each
weighted by R):

* COO and CSL touch every nonzero with order-1 multiplies and one
  accumulation: muls = (order-1)*M*R, adds = M*R.
* CSF forms one partial sum per tree node bottom-up.  Leaves cost M*R muls
  and M*R adds.  Every combine level (levels order-2 down to 1) costs R muls
  per node; every combine level except the deepest also costs R adds per
  node; writing each slice result costs R adds.  For order 3 this gives
  muls = (M+F)*R and adds = (M+S)*R, total (2M+F+S)*R.
* HB-CSF sums its parts.

Sequential kernels are deterministic: entries are reduced in a fixed sorted
order, so shuffling input entries does not change the output bits.  The
scheduled (parallel) path reduces per-unit partials into privatized buffers
and sums them in a fixed order; it matches the sequential result to 1e-10
relative, not bitwise.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
import scipy.sparse

from .coo import CapacityError, CooTensor, sort_by_mode_order
from .formats import CslSlices, CsfTensor, HbCsfTensor

if TYPE_CHECKING:
    from .balance import BlockSchedule

Factors = Sequence[np.ndarray]


@dataclass(frozen=True)
class OpCount:
    """Floating-point multiply and add counts for one kernel invocation."""

    muls: int
    adds: int

    @property
    def total(self) -> int:
        return self.muls + self.adds

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(self.muls + other.muls, self.adds + other.adds)

    def to_dict(self) -> dict:
        return {"muls": self.muls, "adds": self.adds, "total": self.total}


def _check_factors(dims: tuple[int, ...], factors: Factors, mode: int) -> int:
    """Validate factor shapes against dims; factors[mode] is not inspected.

    Returns the shared rank R."""
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for order {len(dims)}")
    if len(factors) != len(dims):
        raise ValueError(
            f"expected {len(dims)} factor matrices, got {len(factors)}"
        )
    rank: int | None = None
    for d, f in enumerate(factors):
        if d == mode:
            continue
        f = np.asarray(f)
        if f.ndim != 2 or f.shape[0] != dims[d]:
            raise ValueError(
                f"factor {d} must have shape ({dims[d]}, R), got {f.shape}"
            )
        if rank is None:
            rank = int(f.shape[1])
        elif f.shape[1] != rank:
            raise ValueError("factor matrices disagree on rank")
        if not np.isfinite(f).all():
            raise ValueError(f"factor {d} has non-finite entries")
    assert rank is not None  # order >= 3 guarantees a non-mode factor
    return rank


def _chunk_bounds(n: int, workers: int) -> list[tuple[int, int]]:
    """Split [0, n) into at most ``workers`` contiguous non-empty spans."""
    workers = max(1, min(workers, n))
    cuts = [round(w * n / workers) for w in range(workers + 1)]
    return [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


def _segment_sum_into(
    out: np.ndarray, rows: np.ndarray, prod: np.ndarray
) -> None:
    """Accumulate row-sorted per-entry products into their output rows."""
    boundary = np.empty(len(rows), dtype=bool)
    boundary[0] = True
    np.not_equal(rows[1:], rows[:-1], out=boundary[1:])
    starts = np.flatnonzero(boundary)
    out[rows[starts]] += np.add.reduceat(prod, starts, axis=0)


def mttkrp_coo(
    t: CooTensor, factors: Factors, mode: int, threads: int = 1
) -> tuple[np.ndarray, OpCount]:
    """MTTKRP over a coordinate list.

    Entries are processed in lexicographic order with the target mode major;
    an unsorted tensor is sorted internally first, which makes the result
    independent of the input entry order (bitwise).  With threads > 1 the
    entry list is cut into contiguous chunks, each chunk accumulates into a
    privatized buffer, and the buffers are summed in chunk order; rows cut by
    a chunk boundary pick up one reassociation, so the parallel result
    matches the sequential one to 1e-10 rather than bitwise.
    """
    r = _check_factors(t.dims, factors, mode)
    out = np.zeros((t.dims[mode], r), dtype=np.float64)
    if t.nnz == 0:
        return out, OpCount(0, 0)
    if t.sorted_under is not None and t.sorted_under[0] == mode:
        ts = t
    else:
        rest = [d for d in range(t.order) if d != mode]
        ts = sort_by_mode_order(t, (mode, *rest))
    idx = ts.indices
    rest = [d for d in range(t.order) if d != mode]
    ops = OpCount(muls=(t.order - 1) * t.nnz * r, adds=t.nnz * r)

    def run_span(span: tuple[int, int], buf: np.ndarray) -> None:
        lo, hi = span
        prod = ts.values[lo:hi, None] * factors[rest[0]][idx[lo:hi, rest[0]]]
        for d in rest[1:]:
            prod = prod * factors[d][idx[lo:hi, d]]
        _segment_sum_into(buf, idx[lo:hi, mode], prod)

    spans = _chunk_bounds(t.nnz, threads)
    if len(spans) == 1:
        run_span(spans[0], out)
        return out, ops
    buffers = [np.zeros_like(out) for _ in spans]
    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        list(pool.map(run_span, spans, buffers))
    for buf in buffers:
        out += buf
    return out, ops


def mttkrp_csf(c: CsfTensor, factors: Factors, mode: int) -> tuple[np.ndarray, OpCount]:
    """MTTKRP over a CSF tree built with mode_order[0] == mode.

    Partial sums propagate bottom-up through the tree, one vector of R
    partials per node, so shared prefixes are multiplied once.  Works
    unchanged on fiber-split trees (duplicate fiber coordinates simply
    contribute separate partials); the op count then reflects the post-split
    fiber count.
    """
    if c.mode_order[0] != mode:
        raise ValueError(
            f"tree was built for mode {c.mode_order[0]}, asked for mode {mode}"
        )
    r = _check_factors(c.dims, factors, mode)
    out = np.zeros((c.dims[mode], r), dtype=np.float64)
    if c.nnz == 0:
        return out, OpCount(0, 0)
    n = c.order
    pf = [factors[m] for m in c.mode_order]
    cur = c.values[:, None] * pf[n - 1][c.leaf_idx]
    muls = c.nnz * r
    adds = c.nnz * r
    cur = np.add.reduceat(cur, c.ptrs[n - 2][:-1], axis=0)
    for d in range(n - 2, 0, -1):
        cur = cur * pf[d][c.idxs[d]]
        muls += len(c.idxs[d]) * r
        if d < n - 2:
            adds += len(c.idxs[d]) * r
        cur = np.add.reduceat(cur, c.ptrs[d - 1][:-1], axis=0)
    # slice coordinates are unique even after fiber splitting
    out[c.idxs[0]] = cur
    adds += c.num_slices * r
    return out, OpCount(muls=muls, adds=adds)


def mttkrp_csl(
    s: CslSlices, factors: Factors, mode: int, threads: int = 1
) -> tuple[np.ndarray, OpCount]:
    """MTTKRP over compressed slices; costs match COO per nonzero.

    Parallel runs chunk the slice list (each slice's nonzeros stay in one
    chunk), so chunked and sequential results are bitwise identical here.
    """
    if s.mode_order[0] != mode:
        raise ValueError(
            f"slices were built for mode {s.mode_order[0]}, asked for mode {mode}"
        )
    r = _check_factors(s.dims, factors, mode)
    out = np.zeros((s.dims[mode], r), dtype=np.float64)
    if s.nnz == 0:
        return out, OpCount(0, 0)
    ops = OpCount(muls=(s.order - 1) * s.nnz * r, adds=s.nnz * r)

    def run_span(span: tuple[int, int], buf: np.ndarray) -> None:
        a, b = span  # slice positions
        lo, hi = int(s.slice_ptr[a]), int(s.slice_ptr[b])
        prod = s.values[lo:hi, None] * factors[s.mode_order[1]][s.rest_idx[lo:hi, 0]]
        for col in range(1, s.order - 1):
            prod = prod * factors[s.mode_order[col + 1]][s.rest_idx[lo:hi, col]]
        buf[s.slice_idx[a:b]] += np.add.reduceat(
            prod, s.slice_ptr[a:b] - lo, axis=0
        )

    spans = _chunk_bounds(s.num_slices, threads)
    if len(spans) == 1:
        run_span(spans[0], out)
        return out, ops
    buffers = [np.zeros_like(out) for _ in spans]
    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        list(pool.map(run_span, spans, buffers))
    for buf in buffers:
        out += buf
    return out, ops


def mttkrp_hbcsf(
    h: HbCsfTensor,
    factors: Factors,
    mode: int,
    schedule: "BlockSchedule | None" = None,
    threads: int = 1,
) -> tuple[np.ndarray, OpCount]:
    """MTTKRP over the hybrid format: run each bucket's kernel and sum.

    A schedule, when given, applies to the CSF bucket only (the other two
    buckets are flat lists with no fiber structure to schedule).
    """
    if h.mode_order[0] != mode:
        raise ValueError(
            f"hybrid was built for mode {h.mode_order[0]}, asked for mode {mode}"
        )
    y_coo, ops_coo = mttkrp_coo(h.coo_part, factors, mode, threads=threads)
    y_csl, ops_csl = mttkrp_csl(h.csl_part, factors, mode, threads=threads)
    if schedule is None:
        y_csf, ops_csf = mttkrp_csf(h.csf_part, factors, mode)
    else:
        y_csf, ops_csf = mttkrp_scheduled(
            h.csf_part, schedule, factors, mode, threads=threads
        )
    return y_coo + y_csl + y_csf, ops_coo + ops_csl + ops_csf


def _unit_partial(
    c: CsfTensor, pf: list[np.ndarray], f0: int, f1: int
) -> tuple[np.ndarray, int, int]:
    """Partial slice sum over fibers [f0, f1) of one slice.

    Returns (R-vector, mul nodes, add nodes).  Mid-level nodes cut by the
    unit boundary contribute a partial sum each; multiplying partials by the
    node factor and adding is exact in real arithmetic (distributivity), so
    a cut node only perturbs rounding.
    """
    n = c.order
    leaf_ptr = c.ptrs[n - 2]
    lo, hi = int(leaf_ptr[f0]), int(leaf_ptr[f1])
    cur = c.values[lo:hi, None] * pf[n - 1][c.leaf_idx[lo:hi]]
    mul_nodes = hi - lo
    add_nodes = hi - lo
    cur = np.add.reduceat(cur, leaf_ptr[f0:f1] - lo, axis=0)
    cur = cur * pf[n - 2][c.idxs[n - 2][f0:f1]]
    mul_nodes += f1 - f0
    node_lo, node_hi = f0, f1
    for d in range(n - 3, 0, -1):
        ptr = c.ptrs[d]
        a = int(np.searchsorted(ptr, node_lo, side="right")) - 1
        b = int(np.searchsorted(ptr, node_hi, side="left"))
        starts = np.clip(ptr[a:b], node_lo, node_hi) - node_lo
        cur = np.add.reduceat(cur, starts, axis=0)
        cur = cur * pf[d][c.idxs[d][a:b]]
        mul_nodes += b - a
        add_nodes += b - a
        node_lo, node_hi = a, b
    return cur.sum(axis=0), mul_nodes, add_nodes


def mttkrp_scheduled(
    c: CsfTensor,
    schedule: "BlockSchedule",
    factors: Factors,
    mode: int,
    threads: int = 1,
) -> tuple[np.ndarray, OpCount]:
    """MTTKRP over a CSF tree driven by a block schedule.

    Each schedule unit (one thread block's worth of fibers) produces a
    partial sum for its slice.  With threads > 1 the units are dealt
    round-robin to workers, each worker accumulates into a privatized output
    buffer, and the buffers are reduced in worker order afterwards, so the
    result is deterministic for a fixed (schedule, threads) pair regardless
    of thread timing.

    Op counts are measured at the executed sites: units that cut a mid-level
    node or share a slice repeat that node's combine, so the count can exceed
    the sequential formula by the duplicated work.
    """
    if c.mode_order[0] != mode:
        raise ValueError(
            f"tree was built for mode {c.mode_order[0]}, asked for mode {mode}"
        )
    schedule.validate_for(c)
    r = _check_factors(c.dims, factors, mode)
    out = np.zeros((c.dims[mode], r), dtype=np.float64)
    if c.nnz == 0:
        return out, OpCount(0, 0)
    pf = [factors[m] for m in c.mode_order]
    slice_rows = c.idxs[0]

    def run_units(units, buf) -> tuple[int, int]:
        mul_nodes = 0
        add_nodes = 0
        for u in units:
            vec, mn, an = _unit_partial(c, pf, u.fiber_start, u.fiber_stop)
            buf[slice_rows[u.slice_pos]] += vec
            mul_nodes += mn
            add_nodes += an + 1  # one accumulation of the unit's partial
        return mul_nodes, add_nodes

    if threads <= 1:
        mul_nodes, add_nodes = run_units(schedule.units, out)
    else:
        buffers = [np.zeros_like(out) for _ in range(threads)]
        chunks = [schedule.units[w::threads] for w in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(run_units, chunks, buffers))
        for buf in buffers:
            out += buf
        mul_nodes = sum(mn for mn, _ in counts)
        add_nodes = sum(an for _, an in counts)
    return out, OpCount(muls=mul_nodes * r, adds=add_nodes * r)


def mttkrp(rep, factors: Factors, mode: int, **kwargs) -> tuple[np.ndarray, OpCount]:
    """Dispatch MTTKRP by representation type."""
    if isinstance(rep, CooTensor):
        return mttkrp_coo(rep, factors, mode, **kwargs)
    if isinstance(rep, CsfTensor):
        return mttkrp_csf(rep, factors, mode, **kwargs)
    if isinstance(rep, CslSlices):
        return mttkrp_csl(rep, factors, mode, **kwargs)
    if isinstance(rep, HbCsfTensor):
        return mttkrp_hbcsf(rep, factors, mode, **kwargs)
    raise TypeError(f"no MTTKRP kernel for {type(rep).__name__}")


def mttkrp_dense_oracle(
    t: CooTensor, factors: Factors, mode: int, ceiling: int = 10_000_000
) -> np.ndarray:
    """Reference MTTKRP via explicit matricization times Khatri-Rao product.

    Unfolds the tensor to a sparse matrix whose column index is the mixed
    radix of the non-target coordinates with the lowest remaining mode
    fastest (for order 3, mode 0: z = j + k*J), builds the dense Khatri-Rao
    product with matching row order, and multiplies.  Refuses to allocate
    more than ``ceiling`` dense Khatri-Rao entries (rows times R).
    """
    r = _check_factors(t.dims, factors, mode)
    rest = [d for d in range(t.order) if d != mode]
    cols = math.prod(t.dims[d] for d in rest)
    if cols * r > ceiling:
        raise CapacityError(
            f"dense Khatri-Rao product needs {cols * r} entries, ceiling is {ceiling}"
        )
    kr = np.ones((1, r), dtype=np.float64)
    for d in rest:  # each step makes mode d the slowest so far
        kr = (factors[d][:, None, :] * kr[None, :, :]).reshape(-1, r)
    stride = 1
    z = np.zeros(t.nnz, dtype=np.int64)
    for d in rest:
        z += t.indices[:, d].astype(np.int64) * stride
        stride *= t.dims[d]
    unfolded = scipy.sparse.csr_matrix(
        (t.values, (t.indices[:, mode].astype(np.int64), z)),
        shape=(t.dims[mode], cols),
    )
    return unfolded @ kr
