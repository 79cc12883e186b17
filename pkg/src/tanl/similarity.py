"""Temperature-scaled cosine logits and numerically stable softmax rows.

Every softmax in the system runs through here with the same convention:
logits are cosine similarities divided by the temperature ``tau``
(default 0.01, i.e. similarities scaled by 100), the row maximum is
subtracted before exponentiation, and sums accumulate in float64.
"""

from __future__ import annotations

import numpy as np

from tanl.bundle import LabelBank

DEFAULT_TAU = 0.01


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return tau


def softmax_row(logits: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Stable softmax of a single logit vector at temperature ``tau``."""
    tau = _check_tau(tau)
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D logit vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite logits")
    x = x / tau
    e = np.exp(x - x.max())
    return e / e.sum()


def softmax_rows(sims: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Row-wise stable softmax over a (B, K) float32 similarity block.

    Returns float32 probability rows; row sums are computed in float64.
    This is the batch kernel behind queue caching, so it keeps the
    float32 footprint of its input.
    """
    tau = _check_tau(tau)
    x = np.asarray(sims)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D similarity block, got shape {x.shape}")
    out = x.astype(np.float32, copy=True)
    out -= out.max(axis=1, keepdims=True)
    out /= np.float32(tau)
    np.exp(out, out=out)
    sums = out.sum(axis=1, dtype=np.float64)
    out /= sums[:, None].astype(np.float32)
    return out


def prob_row(v: np.ndarray, bank: LabelBank, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Probability row of one feature over all C ID plus N corpus labels.

    ID labels occupy indices ``0..C``; corpus labels follow in corpus
    order. Output is float64 and sums to 1.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (bank.dim,):
        raise ValueError(f"feature has shape {v.shape}, bank dim is {bank.dim}")
    logits = np.concatenate(
        [bank.id_embeds.data.astype(np.float64) @ v, bank.corpus_embeds.data.astype(np.float64) @ v]
    )
    return softmax_row(logits, tau)


def prob_rows(features: np.ndarray, bank: LabelBank, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Batched :func:`prob_row`: (B, D) features to (B, C+N) float32 rows."""
    feats = np.ascontiguousarray(features, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[1] != bank.dim:
        raise ValueError(f"features have shape {feats.shape}, bank dim is {bank.dim}")
    sims = feats @ bank.all_embeds().T
    return softmax_rows(sims, tau)


def zero_shot_predict(
    v: np.ndarray, id_embeds: np.ndarray, tau: float = DEFAULT_TAU
) -> tuple[int, np.ndarray]:
    """Zero-shot class prediction over the ID labels only.

    Returns (argmax class index, probability vector over C). Ties break
    to the lowest index; the argmax is invariant under ``tau``.
    """
    v = np.asarray(v, dtype=np.float64)
    mat = np.asarray(id_embeds, dtype=np.float64)
    if mat.ndim != 2 or v.shape != (mat.shape[1],):
        raise ValueError(f"feature shape {v.shape} does not match label matrix {mat.shape}")
    probs = softmax_row(mat @ v, tau)
    return int(np.argmax(probs)), probs
