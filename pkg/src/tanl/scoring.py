"""Detection score functions over ID and mined negative labels.

``s_nl`` is the plain negative-label score: the ID share of a softmax
over C ID plus M negative labels. ``s_aa`` averages that score over the
M rank prefixes of the negative list, so negatives mined at better
ranks appear in more denominators and carry implicitly higher weight.
``s_aa_fast`` is the single-pass production evaluation of the same
quantity (running prefix denominator, O(C+M)); the prefix form is kept
as its independent test oracle. Explicit-weighting variants and the
FPR-derivative sign diagnostic are ablation/analysis paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfinv

from tanl.similarity import DEFAULT_TAU

EW_VARIANTS = ("ew1", "ew2")


@dataclass
class ScoreContext:
    """Frozen per-batch scoring state.

    ``neg_embeds`` must be in mining rank order (best rank first): the
    prefix-averaged score is order-sensitive by design. ``weights`` are
    only consulted by the explicit-weighting variants and must be
    positive with mean 1.
    """

    id_embeds: np.ndarray
    neg_embeds: np.ndarray
    tau: float = DEFAULT_TAU
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.id_embeds = np.atleast_2d(np.asarray(self.id_embeds, dtype=np.float64))
        self.neg_embeds = np.asarray(self.neg_embeds, dtype=np.float64)
        if self.neg_embeds.size == 0:
            self.neg_embeds = np.zeros((0, self.id_embeds.shape[1]))
        self.neg_embeds = np.atleast_2d(self.neg_embeds)
        if self.id_embeds.shape[1] != self.neg_embeds.shape[1]:
            raise ValueError("ID and negative embedding dimensions differ")
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.neg_embeds.shape[0],):
                raise ValueError("need one weight per negative label")
            if not np.all(self.weights > 0):
                raise ValueError("explicit weights must be positive")
            if abs(self.weights.mean() - 1.0) > 1e-6:
                raise ValueError("explicit weights must average to 1")

    @property
    def num_negatives(self) -> int:
        return self.neg_embeds.shape[0]


def _sims(v: np.ndarray, ctx: ScoreContext) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (ctx.id_embeds.shape[1],):
        raise ValueError(f"feature shape {v.shape} does not match context dim {ctx.id_embeds.shape[1]}")
    return ctx.id_embeds @ v, ctx.neg_embeds @ v


def nl_scores_from_sims(id_sims: np.ndarray, neg_sims: np.ndarray, tau: float) -> np.ndarray:
    """Batched negative-label score from precomputed similarity blocks."""
    x_id = np.asarray(id_sims, dtype=np.float64) / tau
    x_neg = np.asarray(neg_sims, dtype=np.float64) / tau
    if x_neg.shape[1] == 0:
        return np.ones(x_id.shape[0])
    m = np.maximum(x_id.max(axis=1), x_neg.max(axis=1))[:, None]
    num = np.exp(x_id - m).sum(axis=1)
    den = num + np.exp(x_neg - m).sum(axis=1)
    return num / den


def aa_scores_from_sims(id_sims: np.ndarray, neg_sims: np.ndarray, tau: float) -> np.ndarray:
    """Batched prefix-averaged score via a running prefix denominator."""
    x_id = np.asarray(id_sims, dtype=np.float64) / tau
    x_neg = np.asarray(neg_sims, dtype=np.float64) / tau
    if x_neg.shape[1] == 0:
        raise ValueError("prefix-averaged score needs at least one negative label")
    m = np.maximum(x_id.max(axis=1), x_neg.max(axis=1))[:, None]
    num = np.exp(x_id - m).sum(axis=1)
    prefix = np.cumsum(np.exp(x_neg - m), axis=1)
    return (num[:, None] / (num[:, None] + prefix)).mean(axis=1)


def ew_scores_from_sims(
    id_sims: np.ndarray,
    neg_sims: np.ndarray,
    weights: np.ndarray,
    tau: float,
    variant: str,
) -> np.ndarray:
    """Batched explicit-weighting score.

    ``ew1`` scales the negative logit inside the exponential; ``ew2``
    scales the exponential itself.
    """
    if variant not in EW_VARIANTS:
        raise ValueError(f"unknown explicit-weighting variant {variant!r}")
    x_id = np.asarray(id_sims, dtype=np.float64) / tau
    x_neg = np.asarray(neg_sims, dtype=np.float64) / tau
    w = np.asarray(weights, dtype=np.float64)
    if x_neg.shape[1] == 0:
        return np.ones(x_id.shape[0])
    if variant == "ew1":
        x_neg = x_neg * w
        m = np.maximum(x_id.max(axis=1), x_neg.max(axis=1))[:, None]
        neg_mass = np.exp(x_neg - m).sum(axis=1)
    else:
        m = np.maximum(x_id.max(axis=1), x_neg.max(axis=1))[:, None]
        neg_mass = (w * np.exp(x_neg - m)).sum(axis=1)
    num = np.exp(x_id - m).sum(axis=1)
    return num / (num + neg_mass)


def s_nl(v: np.ndarray, ctx: ScoreContext) -> float:
    """Negative-label score: ID probability mass over C+M labels, in (0, 1].

    With no negatives the softmax collapses onto the ID labels and the
    score is exactly 1.
    """
    id_sims, neg_sims = _sims(v, ctx)
    return float(nl_scores_from_sims(id_sims[None, :], neg_sims[None, :], ctx.tau)[0])


def s_aa(v: np.ndarray, ctx: ScoreContext) -> float:
    """Prefix-averaged activation-aware score (reference evaluation).

    Evaluates the mean over m = 1..M of the negative-label score
    restricted to the first m negatives, recomputing each prefix sum
    from scratch. Kept deliberately independent of :func:`s_aa_fast`.
    """
    if ctx.num_negatives == 0:
        raise ValueError("prefix-averaged score needs at least one negative label; use s_nl")
    id_sims, neg_sims = _sims(v, ctx)
    x_id = id_sims / ctx.tau
    x_neg = neg_sims / ctx.tau
    shift = max(x_id.max(), x_neg.max())
    id_mass = float(np.exp(x_id - shift).sum())
    e_neg = np.exp(x_neg - shift)
    total = 0.0
    for m in range(1, ctx.num_negatives + 1):
        total += id_mass / (id_mass + float(np.sum(e_neg[:m])))
    return total / ctx.num_negatives


def s_aa_fast(v: np.ndarray, ctx: ScoreContext) -> float:
    """Single-pass evaluation of the prefix-averaged score (production path)."""
    if ctx.num_negatives == 0:
        raise ValueError("prefix-averaged score needs at least one negative label; use s_nl")
    id_sims, neg_sims = _sims(v, ctx)
    return float(aa_scores_from_sims(id_sims[None, :], neg_sims[None, :], ctx.tau)[0])


def s_aa_ew(v: np.ndarray, ctx: ScoreContext, variant: str) -> float:
    """Explicit-weighting score variant (``ew1`` or ``ew2``)."""
    if ctx.weights is None:
        raise ValueError("explicit-weighting variants require context weights")
    id_sims, neg_sims = _sims(v, ctx)
    return float(
        ew_scores_from_sims(id_sims[None, :], neg_sims[None, :], ctx.weights, ctx.tau, variant)[0]
    )


def activation_weights(act_values: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Normalize per-negative activation scores into mean-1 positive weights.

    Activation differences can be non-positive in degenerate streams;
    values are floored before normalization so the weight invariants
    (positive, mean 1) always hold. A uniform fallback covers the case
    where every activation is at the floor.
    """
    a = np.maximum(np.asarray(act_values, dtype=np.float64), floor)
    total = a.sum()
    if total <= 0:
        return np.ones(a.size)
    return a.size * a / total


def fpr_derivative_sign(p1: float, p2: float, m: int, lam: float) -> float:
    """Partial derivative of the false-positive rate w.r.t. the negative-label count.

    ``p1``/``p2`` are the per-label match probabilities for ID/OOD
    samples, ``lam`` the true-positive-rate operating point. The sign
    equals sign(p1 - p2): adding negative labels only helps while they
    match OOD more often than ID.
    """
    for name, value in (("p1", p1), ("p2", p2), ("lam", lam)):
        if not 0.0 < value < 1.0:
            raise ValueError(f"{name} must lie strictly inside (0, 1), got {value}")
    if m < 1:
        raise ValueError(f"negative-label count must be >= 1, got {m}")
    q2 = p2 * (1.0 - p2)
    z = math.sqrt(p1 * (1.0 - p1) / q2) * float(erfinv(2.0 * lam - 1.0))
    z += math.sqrt(m) * (p1 - p2) / math.sqrt(2.0 * q2)
    return math.exp(-z * z) / (2.0 * math.sqrt(2.0 * math.pi)) * (p1 - p2) / math.sqrt(m * q2)
