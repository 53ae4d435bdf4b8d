"""Compressed sparse tensor formats and exact index-storage accounting.

Three representations over a mode-order-sorted nonzero list:

* CSF: a fully compressed tree.  Level 0 nodes are slices (distinct major
  coordinates), level d nodes are distinct prefixes of length d+1, leaves are
  nonzeros.  Each non-leaf level stores an index array and a pointer array
  into the next level.
* CSL: slice pointers aim directly at the nonzero list, skipping the fiber
  level.  Only valid for slices in which every fiber holds exactly one
  nonzero; each leaf record keeps all coordinates below the slice level.
* HB-CSF: a hybrid that routes each slice to one of three buckets by shape:
  single-nonzero slices to a COO list, all-singleton-fiber slices to CSL,
  everything else to CSF.

Storage accounting counts 32-bit index words only (values excluded).  Pointer
arrays are charged one word per node; the terminating sentinel is not
counted.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import singledispatch
from typing import Sequence

import numpy as np

from .coo import (
    INDEX_DTYPE,
    VALUE_DTYPE,
    CooTensor,
    _check_mode_order,
    sort_by_mode_order,
)

PTR_DTYPE = np.int64
INDEX_WORD_BYTES = 4


class SliceKind(enum.IntEnum):
    """Bucket a slice lands in when building the hybrid format."""

    COO = 0
    CSL = 1
    CSF = 2


@dataclass(frozen=True, eq=False)
class CsfTensor:
    """Compressed sparse fiber tree for a tensor of order N.

    Attributes
    ----------
    dims : tuple of int
        Original (unpermuted) dimensions.
    mode_order : tuple of int
        Permutation applied before compression; level d of the tree indexes
        mode mode_order[d].
    ptrs : tuple of np.ndarray
        N-1 pointer arrays.  ptrs[d] has len(idxs[d]) + 1 entries; node j at
        level d owns children [ptrs[d][j], ptrs[d][j+1]) at level d+1 (for
        d = N-2 the children are nonzeros).
    idxs : tuple of np.ndarray
        N-1 index arrays, one coordinate per node, dtype uint32.
    leaf_idx, values : np.ndarray
        Minor-mode coordinate and value per nonzero, in tree order.
    split : bool
        True when fiber splitting has run; sibling level-(N-2) nodes may then
        repeat the same coordinate (nondecreasing instead of strictly
        increasing).
    """

    dims: tuple[int, ...]
    mode_order: tuple[int, ...]
    ptrs: tuple[np.ndarray, ...]
    idxs: tuple[np.ndarray, ...]
    leaf_idx: np.ndarray
    values: np.ndarray
    split: bool = False

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_slices(self) -> int:
        return len(self.idxs[0])

    @property
    def num_fibers(self) -> int:
        """Leaf-parent nodes (level N-2); segments count separately after a split."""
        return len(self.idxs[-1])

    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(ix) for ix in self.idxs)

    def fiber_positions(self) -> np.ndarray:
        """Per-slice offsets into the level-(N-2) node arrays, length S+1."""
        pos = self.ptrs[0]
        for d in range(1, self.order - 2):
            pos = self.ptrs[d][pos]
        return pos

    def leaf_offsets(self) -> np.ndarray:
        """Per-slice offsets into the nonzero arrays, length S+1."""
        return self.ptrs[-1][self.fiber_positions()]

    def slice_nnz(self) -> np.ndarray:
        return np.diff(self.leaf_offsets())

    def fiber_sizes(self) -> np.ndarray:
        return np.diff(self.ptrs[-1])


def build_csf(t: CooTensor, mode_order: Sequence[int]) -> CsfTensor:
    """Compress a canonical COO tensor into a CSF tree.

    The tensor is sorted under ``mode_order`` first (a no-op when already
    sorted that way); the build is deterministic given tensor and order.
    Duplicate coordinates must have been merged beforehand.
    """
    mo = _check_mode_order(mode_order, t.order)
    ts = sort_by_mode_order(t, mo)
    n = t.order
    permuted = ts.indices[:, mo]
    m = ts.nnz

    if m == 0:
        empty_ptr = np.zeros(1, dtype=PTR_DTYPE)
        empty_idx = np.zeros(0, dtype=INDEX_DTYPE)
        return CsfTensor(
            dims=t.dims, mode_order=mo,
            ptrs=tuple(empty_ptr.copy() for _ in range(n - 1)),
            idxs=tuple(empty_idx.copy() for _ in range(n - 1)),
            leaf_idx=empty_idx.copy(), values=ts.values,
        )

    # starts[d]: positions where a new length-(d+1) prefix begins.
    changed = np.zeros(m, dtype=bool)
    changed[0] = True
    starts: list[np.ndarray] = []
    for d in range(n - 1):
        col = permuted[:, d]
        changed[1:] |= col[1:] != col[:-1]
        starts.append(np.flatnonzero(changed))

    idxs = tuple(
        np.ascontiguousarray(permuted[starts[d], d], dtype=INDEX_DTYPE)
        for d in range(n - 1)
    )
    ptrs = []
    for d in range(n - 2):
        # child position of each node boundary in the next level's starts
        ptr = np.searchsorted(starts[d + 1], np.append(starts[d], m))
        ptrs.append(ptr.astype(PTR_DTYPE))
    leaf_ptr = np.append(starts[n - 2], m).astype(PTR_DTYPE)
    ptrs.append(leaf_ptr)

    return CsfTensor(
        dims=t.dims, mode_order=mo, ptrs=tuple(ptrs), idxs=idxs,
        leaf_idx=np.ascontiguousarray(permuted[:, n - 1], dtype=INDEX_DTYPE),
        values=ts.values,
    )


def flatten_csf(c: CsfTensor) -> CooTensor:
    """Expand a CSF tree back to COO; inverse of build_csf up to entry order.

    The result carries the tree's entry order, i.e. it is sorted under the
    tree's mode order.
    """
    n = c.order
    m = c.nnz
    permuted = np.empty((m, n), dtype=INDEX_DTYPE)
    permuted[:, n - 1] = c.leaf_idx
    off = c.ptrs[n - 2]
    permuted[:, n - 2] = np.repeat(c.idxs[n - 2], np.diff(off))
    for d in range(n - 3, -1, -1):
        off = off[c.ptrs[d]]
        permuted[:, d] = np.repeat(c.idxs[d], np.diff(off))
    indices = np.empty_like(permuted)
    for d in range(n):
        indices[:, c.mode_order[d]] = permuted[:, d]
    # A split tree repeats fiber coordinates, so the order may be only
    # nondecreasing; the entry sequence itself is unchanged by splitting.
    return CooTensor(c.dims, indices, c.values, sorted_under=c.mode_order)


def classify_slices(c: CsfTensor) -> np.ndarray:
    """Label every slice COO (one nonzero), CSL (>=2 nonzeros, every fiber
    singleton), or CSF (anything else).  Returns an int8 array of SliceKind
    values, one per slice."""
    slice_nnz = c.slice_nnz()
    child_counts = np.diff(c.fiber_positions())
    labels = np.full(c.num_slices, SliceKind.CSF, dtype=np.int8)
    # all fibers singleton <=> nnz equals the number of leaf-parent nodes
    labels[(slice_nnz >= 2) & (slice_nnz == child_counts)] = SliceKind.CSL
    labels[slice_nnz == 1] = SliceKind.COO
    return labels


@dataclass(frozen=True, eq=False)
class CslSlices:
    """Compressed slices whose fiber level is skipped.

    slice_ptr points straight into the nonzero arrays.  rest_idx holds, per
    nonzero, every coordinate below the slice level in permuted order, so a
    record costs order-1 index words.
    """

    dims: tuple[int, ...]
    mode_order: tuple[int, ...]
    slice_ptr: np.ndarray
    slice_idx: np.ndarray
    rest_idx: np.ndarray
    values: np.ndarray

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_slices(self) -> int:
        return len(self.slice_idx)


@dataclass(frozen=True, eq=False)
class HbCsfTensor:
    """Hybrid format: per-slice routing into COO, CSL and CSF buckets.

    coo_part keeps original (unpermuted) coordinates sorted under the mode
    order; csl_part and csf_part use permuted layouts.  Any bucket may be
    empty.  Mode order and dims agree across the parts.
    """

    dims: tuple[int, ...]
    mode_order: tuple[int, ...]
    coo_part: CooTensor
    csl_part: CslSlices
    csf_part: CsfTensor

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return self.coo_part.nnz + self.csl_part.nnz + self.csf_part.nnz


def build_hbcsf(t: CooTensor, mode_order: Sequence[int]) -> HbCsfTensor:
    """Route each slice of the CSF tree into the hybrid's three buckets."""
    mo = _check_mode_order(mode_order, t.order)
    ts = sort_by_mode_order(t, mo)
    full = build_csf(ts, mo)
    labels = classify_slices(full)
    slice_nnz = full.slice_nnz()
    entry_labels = np.repeat(labels, slice_nnz)

    coo_mask = entry_labels == SliceKind.COO
    csl_mask = entry_labels == SliceKind.CSL
    csf_mask = entry_labels == SliceKind.CSF

    coo_part = CooTensor(
        t.dims, ts.indices[coo_mask], ts.values[coo_mask], sorted_under=mo
    )

    csl_slice_mask = labels == SliceKind.CSL
    csl_counts = slice_nnz[csl_slice_mask]
    csl_ptr = np.zeros(len(csl_counts) + 1, dtype=PTR_DTYPE)
    np.cumsum(csl_counts, out=csl_ptr[1:])
    csl_part = CslSlices(
        dims=t.dims, mode_order=mo,
        slice_ptr=csl_ptr,
        slice_idx=full.idxs[0][csl_slice_mask].copy(),
        rest_idx=np.ascontiguousarray(
            ts.indices[csl_mask][:, mo[1:]], dtype=INDEX_DTYPE
        ),
        values=ts.values[csl_mask],
    )

    csf_src = CooTensor(
        t.dims, ts.indices[csf_mask], ts.values[csf_mask], sorted_under=mo
    )
    csf_part = build_csf(csf_src, mo)

    return HbCsfTensor(
        dims=t.dims, mode_order=mo,
        coo_part=coo_part, csl_part=csl_part, csf_part=csf_part,
    )


def flatten_hbcsf(h: HbCsfTensor) -> CooTensor:
    """Concatenate the three buckets back into one COO list (unsorted)."""
    csl_indices = np.empty((h.csl_part.nnz, h.order), dtype=INDEX_DTYPE)
    counts = np.diff(h.csl_part.slice_ptr)
    csl_indices[:, h.mode_order[0]] = np.repeat(h.csl_part.slice_idx, counts)
    for c, mode in enumerate(h.mode_order[1:]):
        csl_indices[:, mode] = h.csl_part.rest_idx[:, c]
    csf_flat = flatten_csf(h.csf_part)
    indices = np.concatenate([h.coo_part.indices, csl_indices, csf_flat.indices])
    values = np.concatenate([h.coo_part.values, h.csl_part.values, csf_flat.values])
    return CooTensor(h.dims, indices, values)


def slice_census(x: CsfTensor | HbCsfTensor) -> dict[str, int]:
    """Number of slices per bucket, keyed 'coo'/'csl'/'csf'."""
    if isinstance(x, CsfTensor):
        labels = classify_slices(x)
        return {
            "coo": int((labels == SliceKind.COO).sum()),
            "csl": int((labels == SliceKind.CSL).sum()),
            "csf": int((labels == SliceKind.CSF).sum()),
        }
    return {
        "coo": x.coo_part.nnz,
        "csl": x.csl_part.num_slices,
        "csf": x.csf_part.num_slices,
    }


@dataclass(frozen=True)
class StoragePart:
    label: str
    slices: int
    fibers: int
    nnz: int
    words: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class StorageReport:
    """Index-word accounting for one representation.

    words counts 4-byte index words only; values are excluded.  parts gives
    the per-bucket breakdown (a single entry for the plain formats).
    """

    format: str
    index_words: int
    parts: tuple[StoragePart, ...]

    @property
    def index_bytes(self) -> int:
        return self.index_words * INDEX_WORD_BYTES

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "index_words": self.index_words,
            "index_bytes": self.index_bytes,
            "parts": [p.to_dict() for p in self.parts],
        }


@singledispatch
def storage_words(x) -> StorageReport:
    """Count 32-bit index words used by a representation.

    COO charges order words per nonzero.  CSF charges 2 words per node at
    every non-leaf level (index + pointer, sentinel not counted) plus one per
    nonzero.  CSL charges 2 per slice plus order-1 per nonzero.  HB-CSF sums
    its parts.
    """
    raise TypeError(f"no storage accounting for {type(x).__name__}")


@storage_words.register
def _(x: CooTensor) -> StorageReport:
    words = x.order * x.nnz
    if x.nnz == 0:
        s = f = 0
    else:
        mo = x.sorted_under if x.sorted_under is not None else tuple(range(x.order))
        permuted = x.indices[:, mo]
        s = len(np.unique(permuted[:, 0]))
        f = len(np.unique(permuted[:, : x.order - 1], axis=0))
    part = StoragePart("coo", s, f, x.nnz, words)
    return StorageReport("coo", words, (part,))


@storage_words.register
def _(x: CsfTensor) -> StorageReport:
    words = sum(2 * n for n in x.level_sizes()) + x.nnz
    part = StoragePart("csf", x.num_slices, x.num_fibers, x.nnz, words)
    return StorageReport("csf", words, (part,))


@storage_words.register
def _(x: CslSlices) -> StorageReport:
    words = 2 * x.num_slices + (x.order - 1) * x.nnz
    part = StoragePart("csl", x.num_slices, x.nnz, x.nnz, words)
    return StorageReport("csl", words, (part,))


@storage_words.register
def _(x: HbCsfTensor) -> StorageReport:
    coo = storage_words(x.coo_part).parts[0]
    coo = StoragePart("coo", x.coo_part.nnz, x.coo_part.nnz, x.coo_part.nnz, coo.words)
    csl = storage_words(x.csl_part).parts[0]
    csf = storage_words(x.csf_part).parts[0]
    total = coo.words + csl.words + csf.words
    return StorageReport("hbcsf", total, (coo, csl, csf))
