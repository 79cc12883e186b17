"""Negative-label mining: top-M selection over per-label ranking scores.

Two variants: the static baseline ranks corpus labels by cosine
distance to the ID label set; the activated variant ranks them by the
current activation difference. Both reduce to the same deterministic
top-M selection (descending score, ties to the lower corpus index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tanl.bundle import LabelBank


@dataclass
class MinedLabels:
    """Ranked corpus indices (best first) with their ranking scores."""

    indices: np.ndarray
    scores: np.ndarray
    variant: str

    def __len__(self) -> int:
        return len(self.indices)


def top_select(scores: np.ndarray, m: int, variant: str = "activated") -> MinedLabels:
    """Select the ``min(m, N)`` highest-scoring indices, deterministically."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("ranking scores must be a nonempty 1-D vector")
    if m < 1:
        raise ValueError(f"selection size must be >= 1, got {m}")
    # lexsort: primary key descending score, secondary ascending index.
    order = np.lexsort((np.arange(scores.size), -scores))
    take = order[: min(m, scores.size)]
    return MinedLabels(indices=take, scores=scores[take], variant=variant)


def mine_baseline(bank: LabelBank, m: int, percentile: float | None = None) -> MinedLabels:
    """Static mining: corpus labels most distant from the ID label set.

    The per-label distance is ``1 - q``, where ``q`` is the
    ``percentile``-th percentile of the label's cosine similarity to all
    ID labels. The default percentile 100 uses the nearest ID label.
    """
    p = 100.0 if percentile is None else float(percentile)
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"percentile must lie in [0, 100], got {p}")
    sims = bank.corpus_embeds.data.astype(np.float64) @ bank.id_embeds.data.astype(np.float64).T
    if p == 100.0:
        nearest = sims.max(axis=1)
    else:
        nearest = np.percentile(sims, p, axis=1)
    return top_select(1.0 - nearest, m, variant="baseline")


def mine_activated(act_diff_corpus: np.ndarray, m: int) -> MinedLabels:
    """Activation-guided mining over the corpus entries of an activation difference.

    The caller passes only the N corpus entries: ID labels are never
    candidates, which keeps the mined set disjoint from the ID set by
    construction.
    """
    return top_select(act_diff_corpus, m, variant="activated")
