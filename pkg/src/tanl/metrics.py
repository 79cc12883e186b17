"""Detection metrics: AUROC, FPR at a TPR target, ID accuracy.

In-distribution is the positive class and higher scores mean more ID.
AUROC uses the pairwise (Mann-Whitney) formulation with half credit for
ties; FPR@TPR uses the largest threshold whose inclusive TPR reaches
the target, with no interpolation. Both are computed from integer pair
and rank counts so they agree exactly with exhaustive oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


def _split(scores: np.ndarray, gt_domain: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt_domain, dtype=bool)
    if scores.shape != gt.shape:
        raise ValueError(f"scores shape {scores.shape} vs gt shape {gt.shape}")
    id_scores = scores[gt]
    ood_scores = scores[~gt]
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("need at least one ID and one OOD sample")
    return id_scores, ood_scores


def auroc(scores: np.ndarray, gt_domain: np.ndarray) -> float:
    """Probability a random ID sample outscores a random OOD sample (ties half)."""
    id_scores, ood_scores = _split(scores, gt_domain)
    ood_sorted = np.sort(ood_scores)
    below = np.searchsorted(ood_sorted, id_scores, side="left")
    below_or_equal = np.searchsorted(ood_sorted, id_scores, side="right")
    greater = int(below.sum())
    equal = int((below_or_equal - below).sum())
    return (greater + 0.5 * equal) / (id_scores.size * ood_scores.size)


def fpr_at_tpr(scores: np.ndarray, gt_domain: np.ndarray, tpr_target: float = 0.95) -> float:
    """OOD fraction accepted at the loosest threshold reaching the TPR target.

    The threshold is the largest value t with ``#{ID >= t} / n_id >=
    tpr_target``; it is always the k-th largest ID score for the
    minimal qualifying count k. The reported value is ``#{OOD >= t} /
    n_ood``.
    """
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError(f"tpr_target must lie in (0, 1], got {tpr_target}")
    id_scores, ood_scores = _split(scores, gt_domain)
    n_id = id_scores.size
    k = 1
    while k / n_id < tpr_target:
        k += 1
    threshold = np.sort(id_scores)[n_id - k]
    return float(np.count_nonzero(ood_scores >= threshold)) / ood_scores.size


def id_accuracy(pred_class: np.ndarray, gt_class: np.ndarray, gt_domain: np.ndarray) -> float:
    """Fraction of ID samples whose zero-shot prediction matches the label."""
    pred = np.asarray(pred_class)
    gt = np.asarray(gt_class)
    mask = np.asarray(gt_domain, dtype=bool)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError("prediction, label, and domain arrays must share a shape")
    if not mask.any():
        raise ValueError("no ID samples to score")
    return float(np.count_nonzero(pred[mask] == gt[mask])) / int(mask.sum())


def roc_points(scores: np.ndarray, gt_domain: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Empirical step-function ROC: (thresholds desc, tpr, fpr), inclusive >=."""
    id_scores, ood_scores = _split(scores, gt_domain)
    thresholds = np.unique(np.concatenate([id_scores, ood_scores]))[::-1]
    id_sorted = np.sort(id_scores)
    ood_sorted = np.sort(ood_scores)
    tpr = (id_scores.size - np.searchsorted(id_sorted, thresholds, side="left")) / id_scores.size
    fpr = (ood_scores.size - np.searchsorted(ood_sorted, thresholds, side="left")) / ood_scores.size
    return thresholds, tpr, fpr


@dataclass
class EvalReport:
    auroc: float
    fpr95: float
    n_id: int
    n_ood: int
    id_acc: float | None = None
    tpr_target: float = 0.95

    def to_json(self) -> str:
        return json.dumps(
            {
                "auroc": self.auroc,
                "fpr95": self.fpr95,
                "id_acc": self.id_acc,
                "n_id": self.n_id,
                "n_ood": self.n_ood,
                "tpr_target": self.tpr_target,
            },
            indent=2,
        )


def evaluate(
    scores: np.ndarray,
    gt_domain: np.ndarray,
    pred_class: np.ndarray | None = None,
    gt_class: np.ndarray | None = None,
    tpr_target: float = 0.95,
) -> EvalReport:
    """Bundle AUROC, FPR@target, and (when labels are present) ID accuracy."""
    gt = np.asarray(gt_domain, dtype=bool)
    acc = None
    if pred_class is not None and gt_class is not None:
        acc = id_accuracy(pred_class, gt_class, gt)
    return EvalReport(
        auroc=auroc(scores, gt),
        fpr95=fpr_at_tpr(scores, gt, tpr_target),
        n_id=int(gt.sum()),
        n_ood=int((~gt).sum()),
        id_acc=acc,
        tpr_target=tpr_target,
    )
