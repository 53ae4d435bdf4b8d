"""Synthetic tensor generator: determinism, skew control, capacity limits."""
from __future__ import annotations

import numpy as np
import pytest

from tenkit import canonicalize, compute_stats
from tenkit.generate import generate_tensor

from helpers import entry_map


def test_exact_nnz_and_distinct_coordinates():
    t = generate_tensor((20, 15, 10), 800, skew=1.0, seed=3)
    assert t.nnz == 800
    assert len(entry_map(t)) == 800  # all coordinates distinct


def test_deterministic_per_seed():
    a = generate_tensor((30, 20, 20), 1500, skew=1.5, seed=42)
    b = generate_tensor((30, 20, 20), 1500, skew=1.5, seed=42)
    assert a == b
    c = generate_tensor((30, 20, 20), 1500, skew=1.5, seed=43)
    assert not (a == c)


def test_output_is_canonical():
    t = generate_tensor((25, 10, 10), 600, skew=1.0, seed=0)
    assert canonicalize(t) == t


def test_values_in_unit_interval():
    t = generate_tensor((10, 10, 10), 500, seed=1)
    v = np.asarray(t.values)
    assert np.all(v > 0) and np.all(v <= 1)


def test_zero_skew_is_near_uniform():
    t = generate_tensor((50, 40, 40), 20000, skew=0.0, seed=5)
    st = compute_stats(t, (0, 1, 2))
    mean = st.nnz / st.slice_count
    assert st.max_nnz_per_slice < 2 * mean


def test_high_skew_concentrates_mass():
    t = generate_tensor((100, 64, 64), 100_000, skew=2.0, seed=5)
    counts = np.zeros(100, dtype=np.int64)
    lead = np.asarray(t.indices)[:, 0]
    np.add.at(counts, lead, 1)
    counts = counts[counts > 0]
    assert counts.max() >= 10 * np.median(counts)


def test_capacity_overflow_rejected():
    with pytest.raises(ValueError):
        generate_tensor((4, 4, 4), 65, seed=0)


def test_full_capacity_allowed():
    t = generate_tensor((4, 4, 4), 64, seed=0)
    assert t.nnz == 64


def test_order4_generation():
    t = generate_tensor((12, 8, 8, 8), 3000, skew=1.0, seed=9)
    assert t.order == 4 and t.nnz == 3000
    assert len(entry_map(t)) == 3000


def test_invalid_arguments():
    with pytest.raises(ValueError):
        generate_tensor((10, 10), 5, seed=0)  # order below 3
    with pytest.raises(ValueError):
        generate_tensor((10, 0, 10), 5, seed=0)  # empty extent
