"""Synthetic sparse tensors with controllable slice and fiber skew.

Nonzeros are dealt to slices by a Zipf-like weight (slice i gets weight
(i+1)^-skew), and within a slice the second mode's coordinate follows the
same law while the remaining coordinates are uniform.  skew 0 is uniform
everywhere; larger skews concentrate nonzeros into the low-numbered slices
and fibers, which is what makes load balancing interesting.  Coordinates
within a slice are distinct, so the result is canonical by construction.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .coo import CapacityError, CooTensor, canonicalize


def _zipf_weights(n: int, skew: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** (-skew)
    return w / w.sum()


def _distinct_flats(
    rng: np.random.Generator, subdims: tuple[int, ...], count: int, skew: float
) -> np.ndarray:
    """Draw ``count`` distinct mixed-radix codes over subdims (first mode
    fastest), first-mode coordinate Zipf(skew) weighted."""
    cap = math.prod(subdims)
    if count > cap:
        raise ValueError("slice cannot hold that many nonzeros")
    if count > cap // 2:
        if cap > 20_000_000:
            raise CapacityError(
                f"refusing to enumerate {cap} cells to fill a near-complete slice"
            )
        # near-complete slice: skew can't be honored anyway
        return rng.permutation(cap)[:count].astype(np.int64)
    weights = _zipf_weights(subdims[0], skew)
    chosen = np.empty(0, dtype=np.int64)
    attempts = 0
    while len(chosen) < count:
        batch = max(2 * (count - len(chosen)), 256)
        if attempts < 12:
            first = rng.choice(subdims[0], size=batch, p=weights)
        else:
            # heavy collisions on the skewed mode: finish uniformly
            first = rng.integers(0, subdims[0], size=batch)
        flat = first.astype(np.int64)
        stride = subdims[0]
        for d in subdims[1:]:
            flat = flat + rng.integers(0, d, size=batch).astype(np.int64) * stride
            stride *= d
        merged = np.concatenate([chosen, flat])
        _, first_seen = np.unique(merged, return_index=True)
        chosen = merged[np.sort(first_seen)]
        attempts += 1
    return chosen[:count]


def generate_tensor(
    dims: Sequence[int], nnz: int, skew: float = 1.0, seed: int = 0
) -> CooTensor:
    """Generate a canonical random tensor, deterministic per seed.

    Values are uniform in (0, 1], so no entry cancels away.  Raises
    ValueError when nnz exceeds the number of cells or skew is negative.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3:
        raise ValueError("tensor order must be >= 3")
    if skew < 0:
        raise ValueError("skew must be nonnegative")
    cells = math.prod(dims)
    if not 0 <= nnz <= cells:
        raise ValueError(f"nnz must lie in [0, {cells}], got {nnz}")
    rng = np.random.default_rng(seed)
    n_slices = dims[0]
    subdims = dims[1:]
    slice_cap = math.prod(subdims)

    counts = rng.multinomial(nnz, _zipf_weights(n_slices, skew))
    # push overflow beyond a slice's capacity into later slices with room
    overflow = int(np.maximum(counts - slice_cap, 0).sum())
    counts = np.minimum(counts, slice_cap)
    for i in range(n_slices):
        if overflow == 0:
            break
        room = slice_cap - int(counts[i])
        take = min(room, overflow)
        counts[i] += take
        overflow -= take

    cols: list[np.ndarray] = []
    slice_ids: list[np.ndarray] = []
    for i in range(n_slices):
        c = int(counts[i])
        if c == 0:
            continue
        flats = _distinct_flats(rng, subdims, c, skew)
        slice_ids.append(np.full(c, i, dtype=np.int64))
        cols.append(flats)
    if not cols:
        indices = np.zeros((0, len(dims)), dtype=np.int64)
    else:
        slice_col = np.concatenate(slice_ids)
        flat = np.concatenate(cols)
        decoded = [slice_col]
        for d in subdims:
            decoded.append(flat % d)
            flat = flat // d
        indices = np.stack(decoded, axis=1)
    values = 1.0 - rng.random(len(indices))
    return canonicalize(CooTensor(dims, indices, values))
