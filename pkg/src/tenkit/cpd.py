"""CP decomposition by alternating least squares on sparse tensors.

Each sweep updates every factor in ascending mode order: the new factor is
the mode's MTTKRP result times the pseudo-inverse of the Hadamard product of
the other factors' Gram matrices.  After the last mode the fit
1 - ||X - Xhat||_F / ||X||_F is evaluated algebraically from the Gram
matrices and the final MTTKRP (no dense reconstruction), then the columns
are normalized and the scales folded into the weight vector.

The MTTKRP can run over any of the storage formats; per-iteration wall time
and operation counts per mode are recorded so format choices can be compared
on equal work.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .balance import SplitConfig, split_fibers
from .coo import CapacityError, CooTensor, allmode_order, canonicalize, sort_by_mode_order
from .formats import build_csf, build_hbcsf
from .kernels import OpCount, mttkrp

TENSOR_FORMATS = ("coo", "csf", "bcsf", "hbcsf")


class NumericalError(ArithmeticError):
    """ALS produced non-finite values; carries the failing iteration."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


def gram(f: np.ndarray) -> np.ndarray:
    """R x R Gram matrix f.T @ f, symmetrized against rounding."""
    g = f.T @ f
    return (g + g.T) * 0.5


def hadamard_all_but(grams: list[np.ndarray], mode: int) -> np.ndarray:
    """Elementwise product of every Gram matrix except ``mode``'s."""
    out: np.ndarray | None = None
    for d, g in enumerate(grams):
        if d == mode:
            continue
        out = g.copy() if out is None else out * g
    if out is None:
        raise ValueError("need at least two Gram matrices")
    return out


def pinv_spsd(g: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix via eigh.

    Eigenvalues at or below ``tol`` (default: rank * machine epsilon * the
    largest eigenvalue) are treated as zero.  Raises ValueError when the
    input is not symmetric to 1e-12 or has an eigenvalue materially below
    zero.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {g.shape}")
    scale = max(1.0, float(np.abs(g).max(initial=0.0)))
    if float(np.abs(g - g.T).max(initial=0.0)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    sym = (g + g.T) * 0.5
    eigvals, eigvecs = np.linalg.eigh(sym)
    trace = float(np.trace(sym))
    if eigvals[0] < -1e-10 * max(1.0, trace):
        raise ValueError(f"matrix is not positive semidefinite (min eig {eigvals[0]})")
    lam_max = max(float(eigvals[-1]), 0.0)
    if tol is None:
        tol = g.shape[0] * np.finfo(np.float64).eps * lam_max
    inv = np.zeros_like(eigvals)
    above = eigvals > tol
    inv[above] = 1.0 / eigvals[above]
    out = (eigvecs * inv) @ eigvecs.T
    return (out + out.T) * 0.5


@dataclass(frozen=True)
class KruskalModel:
    """Weighted sum of rank-one terms: sum_r lam[r] * outer(factors[:, r])."""

    lam: np.ndarray
    factors: tuple[np.ndarray, ...]

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return int(self.lam.shape[0])


def kruskal_value(model: KruskalModel, coord: tuple[int, ...]) -> float:
    """Evaluate the model at one coordinate."""
    prod = model.lam.copy()
    for d, i in enumerate(coord):
        prod = prod * model.factors[d][i]
    return float(prod.sum())


def kruskal_to_dense(model: KruskalModel, ceiling: int = 10_000_000) -> np.ndarray:
    """Materialize the model as a dense array (guarded by ``ceiling``)."""
    dims = tuple(f.shape[0] for f in model.factors)
    if math.prod(dims) > ceiling:
        raise CapacityError(
            f"dense reconstruction needs {math.prod(dims)} entries, ceiling is {ceiling}"
        )
    letters = "abcdefghij"[: model.order]
    subs = ",".join(f"{c}z" for c in letters) + "->" + letters
    operands = [model.factors[0] * model.lam, *model.factors[1:]]
    return np.einsum(subs, *operands)


@dataclass(frozen=True)
class AlsIteration:
    """One sweep's fit and per-mode kernel cost (iteration 0 is the
    pre-update baseline with empty cost tuples)."""

    iteration: int
    fit: float
    delta: float
    mode_seconds: tuple[float, ...]
    op_counts: tuple[OpCount, ...]


def _build_reps(
    t: CooTensor, tensor_format: str, fiber_threshold: int
) -> list:
    reps = []
    for mode in range(t.order):
        mo = allmode_order(t.dims, mode)
        if tensor_format == "coo":
            reps.append(sort_by_mode_order(t, mo))
        elif tensor_format == "csf":
            reps.append(build_csf(t, mo))
        elif tensor_format == "bcsf":
            cfg = SplitConfig(fiber_threshold=fiber_threshold)
            reps.append(split_fibers(build_csf(t, mo), cfg))
        elif tensor_format == "hbcsf":
            reps.append(build_hbcsf(t, mo))
        else:
            raise ValueError(
                f"unknown tensor format {tensor_format!r}; pick from {TENSOR_FORMATS}"
            )
    return reps


def als_update_mode(
    rep, factors: list[np.ndarray], mode: int, grams: list[np.ndarray] | None = None
) -> tuple[np.ndarray, np.ndarray, OpCount]:
    """One least-squares factor update.

    Returns (new factor, raw MTTKRP output, op count).  ``grams`` may be
    supplied to reuse cached Gram matrices; factors[mode] itself is not read.
    """
    if grams is None:
        grams = [
            gram(np.asarray(f)) if d != mode else None
            for d, f in enumerate(factors)
        ]
    y, ops = mttkrp(rep, factors, mode)
    v = hadamard_all_but([g for g in grams], mode)
    factor = y @ pinv_spsd(v)
    return factor, y, ops


def _fit_value(
    norm_x: float, grams: list[np.ndarray], last_y: np.ndarray, last_factor: np.ndarray
) -> float:
    # ||Xhat||^2 = sum of the all-mode Hadamard of the Grams;
    # <X, Xhat> = sum of the last MTTKRP against the last factor.
    norm_hat_sq = float((hadamard_all_but(grams, len(grams) - 1) * grams[-1]).sum())
    inner = float((last_y * last_factor).sum())
    err_sq = max(norm_x * norm_x + norm_hat_sq - 2.0 * inner, 0.0)
    return 1.0 - math.sqrt(err_sq) / norm_x


def _normalize(factors: list[np.ndarray], grams: list[np.ndarray]) -> np.ndarray:
    lam = None
    for d, f in enumerate(factors):
        norms = np.linalg.norm(f, axis=0)
        norms = np.where(norms > 0.0, norms, 1.0)
        factors[d] = f / norms
        grams[d] = grams[d] / np.outer(norms, norms)
        lam = norms.copy() if lam is None else lam * norms
    return lam


def cp_als(
    t: CooTensor,
    rank: int = 32,
    max_iters: int = 50,
    fit_tol: float = 1e-8,
    tensor_format: str = "hbcsf",
    seed: int = 0,
    fiber_threshold: int = 128,
) -> tuple[KruskalModel, list[AlsIteration]]:
    """Fit a rank-``rank`` CP model with alternating least squares.

    The tensor is canonicalized, per-mode representations are built in the
    chosen format, factors start as seeded uniform(0,1) draws, and sweeps
    run until the fit change drops below ``fit_tol`` or ``max_iters`` is
    reached.  Iteration 0 of the returned history is the fit of the initial
    guess.  Raises NumericalError if a sweep produces non-finite values;
    raises ValueError for an empty tensor (its fit is undefined).
    """
    if rank < 1:
        raise ValueError("rank must be at least 1")
    if max_iters < 0:
        raise ValueError("max_iters must be nonnegative")
    t = canonicalize(t)
    if t.nnz == 0:
        raise ValueError("cannot decompose an empty tensor")
    over = [d for d, dim in enumerate(t.dims) if rank > dim]
    if over:
        warnings.warn(
            f"rank {rank} exceeds the extent of mode(s) {over}; the problem is "
            "over-complete and factors will be rank-deficient",
            RuntimeWarning,
        )
    reps = _build_reps(t, tensor_format, fiber_threshold)
    rng = np.random.default_rng(seed)
    factors = [rng.random((dim, rank)) for dim in t.dims]
    grams = [gram(f) for f in factors]
    norm_x = float(np.linalg.norm(t.values))
    last = t.order - 1

    y0, _ = mttkrp(reps[last], factors, last)
    fit = _fit_value(norm_x, grams, y0, factors[last])
    history = [AlsIteration(0, fit, 0.0, (), ())]

    for it in range(1, max_iters + 1):
        seconds = []
        ops = []
        y = None
        for mode in range(t.order):
            tic = time.perf_counter()
            factor, y, op = als_update_mode(reps[mode], factors, mode, grams)
            seconds.append(time.perf_counter() - tic)
            ops.append(op)
            if not np.isfinite(factor).all():
                raise NumericalError(
                    f"non-finite factor for mode {mode} in ALS sweep {it}",
                    iteration=it,
                )
            factors[mode] = factor
            grams[mode] = gram(factor)
        new_fit = _fit_value(norm_x, grams, y, factors[last])
        lam = _normalize(factors, grams)
        if not math.isfinite(new_fit):
            raise NumericalError(
                f"non-finite fit in ALS sweep {it}", iteration=it
            )
        delta = new_fit - history[-1].fit
        history.append(AlsIteration(it, new_fit, delta, tuple(seconds), tuple(ops)))
        if abs(delta) < fit_tol:
            break

    if len(history) == 1:
        lam = _normalize(factors, grams)
    model = KruskalModel(lam=lam, factors=tuple(factors))
    return model, history
