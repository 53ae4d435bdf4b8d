"""Coordinate (COO) sparse tensors and FROSTT-style text I/O.

A COO tensor is a list of (index tuple, value) pairs together with explicit
dimensions.  Indices are kept as 32-bit unsigned integers, values as 64-bit
floats.  Text files use the FROSTT convention: one nonzero per line, 1-based
indices followed by the value, ``#`` starting a comment, blank lines ignored.
Internally everything is 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence, TextIO

import numpy as np

INDEX_DTYPE = np.uint32
VALUE_DTYPE = np.float64


class ParseError(ValueError):
    """Malformed tensor text.  Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CapacityError(ValueError):
    """A requested dense intermediate would exceed the configured ceiling."""


def _check_mode_order(mode_order: Sequence[int], order: int) -> tuple[int, ...]:
    mo = tuple(int(m) for m in mode_order)
    if sorted(mo) != list(range(order)):
        raise ValueError(f"mode_order {mo} is not a permutation of 0..{order - 1}")
    return mo


@dataclass(frozen=True, eq=False)
class CooTensor:
    """Sparse tensor in coordinate form.

    Attributes
    ----------
    dims : tuple of int
        Extent of each mode.  Order (= len(dims)) is at least 3.
    indices : np.ndarray
        Shape (nnz, order), dtype uint32, each row a coordinate tuple.
    values : np.ndarray
        Shape (nnz,), dtype float64.
    sorted_under : tuple of int or None
        If not None, the entries are sorted lexicographically by the
        permuted coordinates (mode_order[0] major).  None means unknown.

    The arrays are not defensively copied; treat instances as immutable.
    """

    dims: tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray
    sorted_under: tuple[int, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 3:
            raise ValueError(f"tensor order must be >= 3, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be positive, got {dims}")
        idx = np.asarray(self.indices)
        if idx.ndim != 2 or idx.shape[1] != len(dims):
            raise ValueError(
                f"indices must have shape (nnz, {len(dims)}), got {idx.shape}"
            )
        vals = np.asarray(self.values, dtype=VALUE_DTYPE)
        if vals.shape != (idx.shape[0],):
            raise ValueError("values length does not match indices")
        if idx.size:
            lo = idx.min(axis=0)
            hi = idx.max(axis=0)
            if lo.min() < 0 or any(int(h) >= d for h, d in zip(hi, dims)):
                raise ValueError("index out of range for dims")
        idx = np.ascontiguousarray(idx, dtype=INDEX_DTYPE)
        so = self.sorted_under
        if so is not None:
            so = _check_mode_order(so, len(dims))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "sorted_under", so)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def entries(self) -> Iterator[tuple[tuple[int, ...], float]]:
        """Yield (index tuple, value) pairs in storage order."""
        for row, v in zip(self.indices, self.values):
            yield tuple(int(i) for i in row), float(v)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CooTensor):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


def parse_frostt(stream: TextIO | str, dims: Sequence[int] | None = None) -> CooTensor:
    """Parse FROSTT text into a CooTensor.

    The order is inferred from the first data line (token count minus one)
    unless ``dims`` is given, in which case every line must have len(dims)
    indices and each must fall inside the stated extent.  Without ``dims``
    the extent of each mode is the largest index observed in it.  Indices in
    the file are 1-based; values may be any float literal.

    Raises ParseError (with the offending 1-based line number) on malformed
    lines, inconsistent arity, or indices below 1 / outside ``dims``.
    """
    if isinstance(stream, str):
        lines: Iterator[str] = iter(stream.splitlines())
    else:
        lines = iter(stream)

    order: int | None = None if dims is None else len(dims)
    if dims is not None and order < 3:
        raise ValueError(f"tensor order must be >= 3, got {order}")
    idx_rows: list[tuple[int, ...]] = []
    vals: list[float] = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()
        if order is None:
            order = len(tokens) - 1
            if order < 3:
                raise ParseError(
                    f"expected at least 3 indices and a value, got {len(tokens)} tokens",
                    lineno,
                )
        if len(tokens) != order + 1:
            raise ParseError(
                f"expected {order + 1} tokens ({order} indices + value), got {len(tokens)}",
                lineno,
            )
        try:
            coord = tuple(int(tok) for tok in tokens[:-1])
        except ValueError:
            raise ParseError(f"malformed index in {tokens[:-1]}", lineno) from None
        try:
            value = float(tokens[-1])
        except ValueError:
            raise ParseError(f"malformed value {tokens[-1]!r}", lineno) from None
        for d, i in enumerate(coord):
            if i < 1:
                raise ParseError(f"index {i} in mode {d} is below 1", lineno)
            if dims is not None and i > dims[d]:
                raise ParseError(
                    f"index {i} in mode {d} exceeds stated dimension {dims[d]}", lineno
                )
        idx_rows.append(coord)
        vals.append(value)

    if order is None:
        raise ParseError("no data lines in input")
    if not idx_rows:
        raise ParseError("no data lines in input")

    idx = np.asarray(idx_rows, dtype=np.int64) - 1
    if dims is None:
        ext = tuple(int(m) + 1 for m in idx.max(axis=0))
    else:
        ext = tuple(int(d) for d in dims)
    return CooTensor(ext, idx, np.asarray(vals, dtype=VALUE_DTYPE))


def write_frostt(t: CooTensor, stream: TextIO) -> None:
    """Write FROSTT text: 1-based indices, values with 17 significant digits.

    17 digits round-trip IEEE doubles exactly, so parse(write(t)) reproduces
    the same bits.  Entries are emitted in the tensor's current order.
    """
    for row, v in zip(t.indices, t.values):
        coords = " ".join(str(int(i) + 1) for i in row)
        stream.write(f"{coords} {v:.17g}\n")


def load_frostt(path: str, dims: Sequence[int] | None = None) -> CooTensor:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_frostt(fh, dims=dims)


def save_frostt(t: CooTensor, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_frostt(t, fh)


def _lexsort_perm(indices: np.ndarray, mode_order: tuple[int, ...]) -> np.ndarray:
    # np.lexsort treats the LAST key as primary, so feed minor..major.
    keys = tuple(indices[:, mode_order[d]] for d in reversed(range(len(mode_order))))
    return np.lexsort(keys)


def sort_by_mode_order(t: CooTensor, mode_order: Sequence[int]) -> CooTensor:
    """Reorder entries lexicographically under the given mode permutation.

    mode_order[0] is the major (slowest-varying) key.  The sort is stable,
    so duplicate coordinates keep their relative order.
    """
    mo = _check_mode_order(mode_order, t.order)
    if t.sorted_under == mo:
        return t
    perm = _lexsort_perm(t.indices, mo)
    return CooTensor(t.dims, t.indices[perm], t.values[perm], sorted_under=mo)


def canonicalize(t: CooTensor) -> CooTensor:
    """Sort under the identity order, sum duplicate coordinates, drop zeros.

    Duplicates are merged by summation; entries whose merged value is exactly
    0.0 are removed.  The result is sorted under the identity mode order and
    has no duplicate coordinates.
    """
    identity = tuple(range(t.order))
    if t.nnz == 0:
        return CooTensor(t.dims, t.indices, t.values, sorted_under=identity)
    perm = _lexsort_perm(t.indices, identity)
    idx = t.indices[perm]
    vals = t.values[perm]
    new_group = np.empty(len(vals), dtype=bool)
    new_group[0] = True
    np.not_equal(idx[1:], idx[:-1]).any(axis=1, out=new_group[1:])
    starts = np.flatnonzero(new_group)
    sums = np.add.reduceat(vals, starts)
    uidx = idx[starts]
    keep = sums != 0.0
    return CooTensor(t.dims, uidx[keep], sums[keep], sorted_under=identity)


@dataclass(frozen=True)
class TensorStats:
    """Slice/fiber population statistics under a specific mode order.

    A slice groups entries by the major coordinate; a fiber groups them by
    all but the minor coordinate.  Standard deviations are population
    (divide by count, not count-1).  For an empty tensor the counts are zero
    and the statistics are defined as 0.
    """

    order: int
    dims: tuple[int, ...]
    nnz: int
    density: float
    mode_order: tuple[int, ...]
    slice_count: int
    fiber_count: int
    mean_nnz_per_slice: float
    stddev_nnz_per_slice: float
    max_nnz_per_slice: int
    mean_nnz_per_fiber: float
    stddev_nnz_per_fiber: float
    max_nnz_per_fiber: int

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["dims"] = list(self.dims)
        d["mode_order"] = list(self.mode_order)
        return d


def compute_stats(t: CooTensor, mode_order: Sequence[int] | None = None) -> TensorStats:
    """Compute slice/fiber nonzero statistics under ``mode_order``.

    Defaults to the identity order.  Duplicate coordinates, if present, are
    counted as distinct entries; canonicalize first for set semantics.
    """
    mo = _check_mode_order(mode_order, t.order) if mode_order is not None else tuple(
        range(t.order)
    )
    density = t.nnz / math.prod(float(d) for d in t.dims)
    if t.nnz == 0:
        return TensorStats(
            order=t.order, dims=t.dims, nnz=0, density=0.0, mode_order=mo,
            slice_count=0, fiber_count=0,
            mean_nnz_per_slice=0.0, stddev_nnz_per_slice=0.0, max_nnz_per_slice=0,
            mean_nnz_per_fiber=0.0, stddev_nnz_per_fiber=0.0, max_nnz_per_fiber=0,
        )
    ts = sort_by_mode_order(t, mo)
    permuted = ts.indices[:, mo]

    def group_counts(ncols: int) -> np.ndarray:
        cols = permuted[:, :ncols]
        new_group = np.empty(len(cols), dtype=bool)
        new_group[0] = True
        np.not_equal(cols[1:], cols[:-1]).any(axis=1, out=new_group[1:])
        starts = np.flatnonzero(new_group)
        return np.diff(np.append(starts, len(cols)))

    slice_counts = group_counts(1)
    fiber_counts = group_counts(t.order - 1)
    return TensorStats(
        order=t.order,
        dims=t.dims,
        nnz=t.nnz,
        density=density,
        mode_order=mo,
        slice_count=len(slice_counts),
        fiber_count=len(fiber_counts),
        mean_nnz_per_slice=float(slice_counts.mean()),
        stddev_nnz_per_slice=float(slice_counts.std()),
        max_nnz_per_slice=int(slice_counts.max()),
        mean_nnz_per_fiber=float(fiber_counts.mean()),
        stddev_nnz_per_fiber=float(fiber_counts.std()),
        max_nnz_per_fiber=int(fiber_counts.max()),
    )


def allmode_order(dims: Sequence[int], mode: int) -> tuple[int, ...]:
    """Mode order used for the per-mode representation set: the target mode
    first, then the remaining modes by ascending dimension, ties by ascending
    mode id."""
    n = len(dims)
    if not 0 <= mode < n:
        raise ValueError(f"mode {mode} out of range for order {n}")
    rest = sorted((d for d in range(n) if d != mode), key=lambda d: (dims[d], d))
    return (mode, *rest)
