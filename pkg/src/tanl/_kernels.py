"""Tuned numpy kernels for the per-batch row pipeline.

The streaming loop repeatedly walks (batch, C+N) float32 matrices; on
memory-bound hosts every full-matrix pass counts. These helpers keep
the pipeline at the minimum number of passes: one subtract+exp pass for
the exponentials (callers fold the temperature into the similarities
beforehand when they can), fancy-gather plus one in-place scale for the
rows that feed the queues, and a single two-row matrix product for a
pair of masked activation means.
"""

from __future__ import annotations

import numpy as np


def exp_rows(
    sims: np.ndarray, tau: float = 1.0, out: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Max-shifted, temperature-scaled exponentials with float64 row sums.

    Returns ``(E, rowsum)`` with ``E[i] = exp((sims[i] - max(sims[i])) / tau)``
    as float32 and ``rowsum`` the float64 row total; the probability row
    is ``E[i] / rowsum[i]``. Passing ``out=sims`` overwrites the input
    in place, saving a full-matrix allocation.
    """
    sims = np.ascontiguousarray(sims, dtype=np.float32)
    if out is None:
        out = np.empty_like(sims)
    np.subtract(sims, sims.max(axis=1, keepdims=True), out=out)
    if tau != 1.0:
        out *= np.float32(1.0 / tau)
    np.exp(out, out=out)
    return out, out.sum(axis=1, dtype=np.float64)


def normalized_rows(
    exp_block: np.ndarray,
    rowsum: np.ndarray,
    indices: np.ndarray,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Gather the indexed exponential rows and normalize them to probabilities.

    Copies row by row: numpy's bulk fancy gather is several times slower
    than streaming one contiguous row at a time at these widths. ``out``
    may supply a reusable buffer with at least ``len(indices)`` rows; the
    returned array is a view of its used prefix.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if out is None:
        out = np.empty((indices.size, exp_block.shape[1]), dtype=np.float32)
    gathered = out[: indices.size]
    inv = (1.0 / rowsum[indices]).astype(np.float32)
    for r, i in enumerate(indices):
        np.multiply(exp_block[i], inv[r], out=gathered[r])
    return gathered


def prob_rows_from_sims(sims: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Full-batch probability rows via the fused pipeline (normalized in place)."""
    block, rowsum = exp_rows(sims, tau)
    inv = (1.0 / rowsum).astype(np.float32)
    for i in range(block.shape[0]):
        np.multiply(block[i], inv[i], out=block[i])
    return block


def weighted_colsums(matrix: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Stacked weighted column sums: one (R, B) @ (B, K) product.

    A single multi-threaded matrix product reads ``matrix`` once for all
    weight rows, which is what masked activation means reduce to.
    """
    return np.asarray(weights, dtype=np.float32) @ matrix
