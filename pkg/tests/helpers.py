"""Shared test fixtures: tensor builders and brute-force oracles.

Oracles here are written independently of the package internals: plain
Python loops and dict accumulation only, so they stay trustworthy even
if the vectorized code paths share a bug.
"""
from __future__ import annotations

import numpy as np

from tenkit import CooTensor, parse_frostt

# Small worked example used throughout: 3 slices, 5 fibers, 8 nonzeros.
# Slice 0 holds a single nonzero, slice 1 holds three singleton fibers,
# slice 2 holds one dense-ish fiber of four nonzeros.  This is the one
# layout (up to relabeling) that produces the storage walkthrough
# numbers 24 / 24 / 19 words with a (COO, CSL, CSF) slice census.
FIG_TENSOR_TEXT = """\
# storage walkthrough tensor: S=3, F=5, M=8
1 1 1 1.0
2 1 1 2.0
2 2 2 3.0
2 3 3 4.0
3 2 1 5.0
3 2 2 6.0
3 2 3 7.0
3 2 4 8.0
"""


def fig_tensor() -> CooTensor:
    return parse_frostt(FIG_TENSOR_TEXT)


def make_random_tensor(rng: np.random.Generator, dims, nnz: int) -> CooTensor:
    """Random tensor with exactly ``nnz`` distinct coordinates."""
    dims = tuple(int(d) for d in dims)
    cap = int(np.prod([np.int64(d) for d in dims]))
    if nnz > cap:
        raise ValueError("nnz exceeds capacity")
    flats = rng.choice(cap, size=nnz, replace=False)
    indices = np.empty((nnz, len(dims)), dtype=np.int64)
    rem = flats
    for d in range(len(dims) - 1, -1, -1):
        indices[:, d] = rem % dims[d]
        rem = rem // dims[d]
    values = rng.uniform(0.1, 1.0, size=nnz)
    return CooTensor(dims=dims, indices=indices, values=values)


def random_factors(rng: np.random.Generator, dims, rank: int) -> list[np.ndarray]:
    return [rng.standard_normal((d, rank)) for d in dims]


def reference_mttkrp(t: CooTensor, factors, mode: int) -> np.ndarray:
    """Entry-at-a-time MTTKRP: out[i_mode] += v * prod of other factor rows."""
    rank = factors[0].shape[1]
    out = np.zeros((t.dims[mode], rank))
    for idx, val in zip(np.asarray(t.indices), np.asarray(t.values)):
        row = np.full(rank, val)
        for d, i in enumerate(idx):
            if d != mode:
                row = row * factors[d][i]
        out[idx[mode]] += row
    return out


def entry_map(t: CooTensor) -> dict[tuple[int, ...], float]:
    acc: dict[tuple[int, ...], float] = {}
    for idx, val in zip(np.asarray(t.indices), np.asarray(t.values)):
        key = tuple(int(i) for i in idx)
        acc[key] = acc.get(key, 0.0) + float(val)
    return {k: v for k, v in acc.items() if v != 0.0}


def group_sizes(t: CooTensor, mode_order, depth: int) -> list[int]:
    """Nonzeros per distinct prefix of length ``depth`` under mode_order."""
    counts: dict[tuple[int, ...], int] = {}
    for idx in np.asarray(t.indices):
        key = tuple(int(idx[m]) for m in mode_order[:depth])
        counts[key] = counts.get(key, 0) + 1
    return list(counts.values())
