"""Label activation: how much probability mass a label attracts on a set.

The activation of label ``i`` over a sample set is the mean of the
samples' probability rows at entry ``i`` (softmax over all C+N labels).
Differences of activations between negative- and positive-leaning sets
rank corpus labels for mining; a historical activation can be blended
with the current batch's activation. An unnormalized raw-cosine variant
exists for ablation only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tanl.bundle import LabelBank
from tanl.similarity import DEFAULT_TAU, prob_rows


def activation_over_set(rows: np.ndarray) -> np.ndarray:
    """Elementwise mean of a nonempty stack of probability rows (float64)."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("activation needs a nonempty 2-D stack of rows")
    return rows.mean(axis=0, dtype=np.float64)


def act_d(neg: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Distribution-adaptive score: activation on negatives minus positives."""
    neg = np.asarray(neg, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    if neg.shape != pos.shape:
        raise ValueError(f"activation length mismatch: {neg.shape} vs {pos.shape}")
    return neg - pos


def act_b(hist: np.ndarray, batch: np.ndarray | None, alpha: float) -> np.ndarray:
    """Blend historical activation with the current batch's activation.

    Returns ``alpha * hist + (1 - alpha) * batch`` when a batch
    activation is present, and ``hist`` unchanged when the batch set is
    empty (``batch is None``).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    hist = np.asarray(hist, dtype=np.float64)
    if batch is None:
        return hist
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape != hist.shape:
        raise ValueError(f"activation length mismatch: {hist.shape} vs {batch.shape}")
    return alpha * hist + (1.0 - alpha) * batch


@dataclass
class OracleActivation:
    """Ground-truth activation difference per corpus label.

    ``act_ood``/``act_id`` are the corpus entries of the mean
    probability rows over the true OOD/ID partitions; ``act_diff`` is
    their difference and ``ranking`` orders corpus indices by
    descending ``act_diff`` (ties to the lower index).
    """

    act_ood: np.ndarray
    act_id: np.ndarray
    act_diff: np.ndarray
    ranking: np.ndarray

    def histogram(self, bins: int = 40) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Shared-bin histograms of per-label activation on OOD vs ID."""
        combined = np.concatenate([self.act_ood, self.act_id])
        edges = np.histogram_bin_edges(combined, bins=bins)
        ood_counts, _ = np.histogram(self.act_ood, bins=edges)
        id_counts, _ = np.histogram(self.act_id, bins=edges)
        return edges, ood_counts, id_counts


def oracle_act_d(
    bank: LabelBank,
    id_features: np.ndarray,
    ood_features: np.ndarray,
    tau: float = DEFAULT_TAU,
) -> OracleActivation:
    """Activation difference computed from true ID/OOD partitions.

    Only available when ground truth is known; this is the analysis
    path, not the streaming estimator.
    """
    id_features = np.atleast_2d(np.asarray(id_features, dtype=np.float32))
    ood_features = np.atleast_2d(np.asarray(ood_features, dtype=np.float32))
    if id_features.shape[0] == 0 or ood_features.shape[0] == 0:
        raise ValueError("both ground-truth partitions must be nonempty")
    c = bank.num_id
    act_id_full = activation_over_set(prob_rows(id_features, bank, tau))
    act_ood_full = activation_over_set(prob_rows(ood_features, bank, tau))
    act_ood = act_ood_full[c:]
    act_id = act_id_full[c:]
    diff = act_ood - act_id
    ranking = np.lexsort((np.arange(diff.size), -diff))
    return OracleActivation(act_ood=act_ood, act_id=act_id, act_diff=diff, ranking=ranking)


def activation_variant_raw(features: np.ndarray, bank: LabelBank) -> np.ndarray:
    """Ablation metric: mean raw cosine per label, no softmax.

    Covers all C+N labels in the same layout as the normalized variant.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] == 0:
        raise ValueError("activation needs a nonempty feature set")
    if feats.shape[1] != bank.dim:
        raise ValueError(f"features have dim {feats.shape[1]}, bank dim is {bank.dim}")
    sims = feats @ bank.all_embeds().astype(np.float64).T
    return sims.mean(axis=0)
