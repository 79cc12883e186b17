"""Streaming detector: the per-batch adaptation loop and the static baseline.

Per batch, in order: score the batch under the current negative set to
collect the confident positive/negative batch sets; blend their
activation with the queue activation; re-mine the negative set from the
blended activation difference; re-score the batch under the fresh
negatives and emit records; then push scores into the history, refresh
gamma (dynamic mode), and gate the queue updates. The emitted scores
therefore always reflect post-mining state, while batch-set collection
uses the pre-batch state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from tanl._kernels import exp_rows, normalized_rows, weighted_colsums
from tanl.bundle import EmbeddingMatrix, LabelBank, TestStream
from tanl.memory import (
    DEFAULT_CAPACITY,
    HISTORY_CAPACITY,
    RECOMPUTE_EVERY,
    GateConfig,
    RowQueue,
    ScoreHistory,
    init_queues,
)
from tanl.mining import MinedLabels, mine_activated, mine_baseline
from tanl.scoring import (
    EW_VARIANTS,
    activation_weights,
    aa_scores_from_sims,
    ew_scores_from_sims,
    nl_scores_from_sims,
)
from tanl.similarity import DEFAULT_TAU, softmax_rows
from tanl.threshold import GammaPolicy, decide, dynamic_gamma

SCORE_VARIANTS = ("nl", "aa") + EW_VARIANTS
ACTIVATION_METRICS = ("softmax", "cosine")
BLEND_MODES = ("batch", "dist")


@dataclass
class DetectorConfig:
    """All detector tunables, with streaming defaults."""

    num_negatives: int = 1000  # M
    queue_capacity: int = DEFAULT_CAPACITY  # L
    gap: float = 0.2  # g
    alpha: float = 0.95
    tau: float = DEFAULT_TAU
    batch_size: int = 256
    gamma: GammaPolicy = field(default_factory=GammaPolicy)
    score_variant: str = "aa"
    activation_metric: str = "softmax"
    blend: str = "batch"
    freeze_after_init: bool = False
    seed: int = 0
    low_memory: bool = False
    history_capacity: int = HISTORY_CAPACITY
    baseline_percentile: float = 100.0
    early_error_rate: float = 0.0
    recompute_every: int = RECOMPUTE_EVERY

    def validate(self) -> None:
        if self.num_negatives < 0:
            raise ValueError("num_negatives must be >= 0")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if not 0.0 <= self.gap <= 1.0:
            raise ValueError("gap must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.score_variant not in SCORE_VARIANTS:
            raise ValueError(f"score_variant must be one of {SCORE_VARIANTS}")
        if self.activation_metric not in ACTIVATION_METRICS:
            raise ValueError(f"activation_metric must be one of {ACTIVATION_METRICS}")
        if self.blend not in BLEND_MODES:
            raise ValueError(f"blend must be one of {BLEND_MODES}")
        if not 0.0 <= self.early_error_rate <= 1.0:
            raise ValueError("early_error_rate must lie in [0, 1]")
        if self.history_capacity < 2:
            raise ValueError("history_capacity must be >= 2")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "DetectorConfig":
        """Build a config from flat key/value pairs (all values may be strings)."""
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            if key == "gamma":
                kwargs[key] = raw if isinstance(raw, GammaPolicy) else GammaPolicy.parse(str(raw))
            elif key in ("score_variant", "activation_metric", "blend"):
                kwargs[key] = str(raw)
            elif key in ("freeze_after_init", "low_memory"):
                kwargs[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
            elif key in ("num_negatives", "queue_capacity", "batch_size", "seed",
                         "history_capacity", "recompute_every"):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_mapping(self) -> dict[str, str]:
        """Flat, diff-able key/value view (the resolved-config echo)."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = str(value)
        return out

    def with_overrides(self, **overrides) -> "DetectorConfig":
        cfg = replace(self, **overrides)
        cfg.validate()
        return cfg


@dataclass
class ScoreRecord:
    """Per-sample output of a detector run."""

    index: int
    score: float
    pred_class: int
    is_id: bool
    gamma: float
    batch: int

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "index": self.index,
                "score": self.score,
                "pred_class": self.pred_class,
                "decision": "ID" if self.is_id else "OOD",
                "gamma": self.gamma,
                "batch": self.batch,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json_line(cls, line: str) -> "ScoreRecord":
        obj = json.loads(line)
        return cls(
            index=int(obj["index"]),
            score=float(obj["score"]),
            pred_class=int(obj["pred_class"]),
            is_id=obj["decision"] == "ID",
            gamma=float(obj["gamma"]),
            batch=int(obj["batch"]),
        )


@dataclass
class BatchState:
    """Negative-set snapshot for one batch, enough to re-verify scores offline."""

    batch: int
    neg_indices: np.ndarray
    gamma: float
    weights: np.ndarray | None = None


@dataclass
class RunResult:
    records: list[ScoreRecord]
    batch_states: list[BatchState]
    config: DetectorConfig
    pushed_pos: int = 0
    pushed_neg: int = 0
    seed_scores: int = 0  # history entries contributed by queue initialization

    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records], dtype=np.float64)

    def pred_classes(self) -> np.ndarray:
        return np.array([r.pred_class for r in self.records], dtype=np.int64)

    def to_jsonl(self) -> str:
        return "".join(r.to_json_line() + "\n" for r in self.records)


def _batch_scores(
    id_sims: np.ndarray,
    neg_sims: np.ndarray,
    tau: float,
    variant: str,
    weights: np.ndarray | None,
) -> np.ndarray:
    if variant == "nl":
        return nl_scores_from_sims(id_sims, neg_sims, tau)
    if variant == "aa":
        return aa_scores_from_sims(id_sims, neg_sims, tau)
    return ew_scores_from_sims(id_sims, neg_sims, weights, tau, variant)


class _SimWorkspace:
    """Per-batch state computed from the retained similarity matrix.

    Used by the raw-cosine activation metric (queue rows are the
    similarities themselves) and by the ``ew1`` variant, whose weights
    sit inside the exponent and therefore need raw logits.
    """

    def __init__(self, sims: np.ndarray, c: int, tau: float, softmax_kind: bool):
        self._sims = sims
        self._c = c
        self._tau = tau
        self._softmax = softmax_kind
        self._exp: np.ndarray | None = None
        self._rowsum: np.ndarray | None = None

    def pred(self) -> np.ndarray:
        return np.argmax(self._sims[:, : self._c], axis=1)

    def scores(self, neg_indices: np.ndarray, variant: str, weights) -> np.ndarray:
        return _batch_scores(
            self._sims[:, : self._c],
            self._sims[:, self._c + neg_indices],
            self._tau,
            variant,
            weights,
        )

    def _materialize(self) -> None:
        if self._softmax and self._exp is None:
            self._exp, self._rowsum = exp_rows(self._sims, self._tau)

    def rows(self, mask: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if not self._softmax:
            return self._sims[mask]
        self._materialize()
        return normalized_rows(self._exp, self._rowsum, np.flatnonzero(mask), out=out)

    def pair_means(self, mask_a, mask_b):
        counts = (int(mask_a.sum()), int(mask_b.sum()))
        live = [i for i, n in enumerate(counts) if n]
        if not live:
            return None, None
        if self._softmax:
            self._materialize()
            base = self._exp
            weights = [np.where(m, 1.0 / self._rowsum, 0.0) for m in (mask_a, mask_b)]
        else:
            base = self._sims
            weights = [m.astype(np.float64) for m in (mask_a, mask_b)]
        stacked = weighted_colsums(base, np.stack([weights[i] for i in live]))
        out = [None, None]
        for row, i in enumerate(live):
            out[i] = stacked[row].astype(np.float64) / counts[i]
        return out[0], out[1]


class _ExpWorkspace:
    """Per-batch state computed in place on the similarity matrix.

    The exponentials of the max-shifted, temperature-scaled logits are
    written over the similarities in two passes; every downstream
    quantity (scores, predictions, activation means, queue rows) is a
    ratio of these exponentials, where the per-row shift cancels. Rows
    whose in-distribution mass underflows float32 entirely (a label
    outscoring every ID label by >100/tau in cosine) are rescued through
    the exact per-row kernel on the original features.
    """

    def __init__(
        self,
        sims: np.ndarray,
        c: int,
        feats: np.ndarray,
        id_embeds: np.ndarray,
        corpus_embeds: np.ndarray,
        tau: float,
    ):
        self._exp, self._rowsum = exp_rows(sims, out=sims)
        self._c = c
        self._feats = feats
        self._id_embeds = id_embeds
        self._corpus_embeds = corpus_embeds
        self._tau = tau
        self._id_mass = self._exp[:, :c].sum(axis=1, dtype=np.float64)
        self._underflow = np.flatnonzero(self._id_mass == 0.0)

    def pred(self) -> np.ndarray:
        pred = np.argmax(self._exp[:, : self._c], axis=1)
        for i in self._underflow:
            pred[i] = int(np.argmax(self._feats[i] @ self._id_embeds.T))
        return pred

    def scores(self, neg_indices: np.ndarray, variant: str, weights) -> np.ndarray:
        neg_exp = self._exp[:, self._c + neg_indices].astype(np.float64)
        if variant == "aa":
            den = self._id_mass[:, None] + np.cumsum(neg_exp, axis=1)
            with np.errstate(invalid="ignore"):
                out = np.where(den > 0, self._id_mass[:, None] / den, 0.0).mean(axis=1)
        else:
            neg_mass = neg_exp @ weights if variant == "ew2" else neg_exp.sum(axis=1)
            den = self._id_mass + neg_mass
            with np.errstate(invalid="ignore"):
                out = np.where(den > 0, self._id_mass / den, 0.0)
        for i in self._underflow:
            id_sims = (self._feats[i] @ self._id_embeds.T)[None, :]
            neg_sims = (self._feats[i] @ self._corpus_embeds[neg_indices].T)[None, :]
            out[i] = _batch_scores(id_sims, neg_sims, self._tau, variant, weights)[0]
        return out

    def rows(self, mask: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        return normalized_rows(self._exp, self._rowsum, np.flatnonzero(mask), out=out)

    def pair_means(self, mask_a, mask_b):
        counts = (int(mask_a.sum()), int(mask_b.sum()))
        live = [i for i, n in enumerate(counts) if n]
        if not live:
            return None, None
        weights = [np.where(m, 1.0 / self._rowsum, 0.0) for m in (mask_a, mask_b)]
        stacked = weighted_colsums(self._exp, np.stack([weights[i] for i in live]))
        out = [None, None]
        for row, i in enumerate(live):
            out[i] = stacked[row].astype(np.float64) / counts[i]
        return out[0], out[1]


def _flip_first_batch(
    pos_mask: np.ndarray,
    neg_mask: np.ndarray,
    rate: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Deliberately misroute a fraction of first-batch queue insertions."""
    pos_idx = np.flatnonzero(pos_mask)
    neg_idx = np.flatnonzero(neg_mask)
    flip_pos = rng.choice(pos_idx, size=round(rate * pos_idx.size), replace=False) if pos_idx.size else []
    flip_neg = rng.choice(neg_idx, size=round(rate * neg_idx.size), replace=False) if neg_idx.size else []
    pos_mask = pos_mask.copy()
    neg_mask = neg_mask.copy()
    pos_mask[flip_pos] = False
    neg_mask[flip_pos] = True
    neg_mask[flip_neg] = False
    pos_mask[flip_neg] = True
    return pos_mask, neg_mask


def run_stream(
    bank: LabelBank,
    stream: TestStream,
    config: DetectorConfig,
    noise_features: EmbeddingMatrix | None = None,
) -> RunResult:
    """Run the adaptive detector over a test stream, in stream order."""
    config.validate()
    if config.num_negatives < 1:
        raise ValueError("the adaptive detector needs num_negatives >= 1")
    c = bank.num_id
    tau = config.tau
    softmax_kind = config.activation_metric == "softmax"
    use_weights = config.score_variant in EW_VARIANTS
    rng = np.random.default_rng(config.seed)
    all_embeds = bank.all_embeds()
    # With the softmax metric the temperature is folded into the batch
    # features before the big similarity product, saving one full-matrix
    # scaling pass; the cosine metric keeps raw similarity rows. The
    # ew1 variant needs raw logits (its weights sit inside the exponent)
    # and so keeps the similarity matrix alive.
    prescale = softmax_kind
    kernel_tau = 1.0 if prescale else tau
    use_exp_path = softmax_kind and config.score_variant != "ew1"

    qinit = init_queues(
        bank,
        capacity=config.queue_capacity,
        tau=tau,
        seed=rng,
        noise_features=noise_features,
        row_kind=config.activation_metric,
        low_memory=config.low_memory,
        recompute_every=config.recompute_every,
    )
    pos_queue, neg_queue = qinit.pos, qinit.neg

    def queue_activation(queue: RowQueue) -> np.ndarray:
        if not config.low_memory:
            return queue.mean()
        sims = queue.rows() @ all_embeds.T
        rows = softmax_rows(sims, tau) if softmax_kind else sims
        return rows.mean(axis=0, dtype=np.float64)

    def mine(act_diff: np.ndarray) -> tuple[MinedLabels, np.ndarray | None]:
        mined = mine_activated(act_diff[c:], config.num_negatives)
        weights = activation_weights(mined.scores) if use_weights else None
        return mined, weights

    mined, weights = mine(queue_activation(neg_queue) - queue_activation(pos_queue))

    # Seed the score history with the initialization entries' own scores
    # (positives first), reusing the similarity rows computed while
    # filling the queues.
    if qinit.pos_sims is not None:
        sim_blocks = [qinit.pos_sims, qinit.neg_sims]
    else:
        sim_blocks = [
            qinit.pos_features @ all_embeds.T,
            qinit.neg_features @ all_embeds.T,
        ]
    history = ScoreHistory(config.history_capacity)
    for block in sim_blocks:
        history.push_many(
            _batch_scores(
                block[:, :c], block[:, c + mined.indices], tau, config.score_variant, weights
            )
        )
    qinit.pos_sims = qinit.neg_sims = None
    del sim_blocks
    seed_count = len(history)

    if config.gamma.mode == "fixed":
        gamma = float(config.gamma.fixed_value)
    else:
        gamma = dynamic_gamma(history.values()).gamma

    records: list[ScoreRecord] = []
    batch_states: list[BatchState] = []
    pushed_pos = pushed_neg = 0
    push_buf: np.ndarray | None = None  # scratch for gathered queue rows
    sims_buf: np.ndarray | None = None  # scratch for the batch similarity product

    for batch_index, (start, feats) in enumerate(stream.batches(config.batch_size)):
        if config.freeze_after_init:
            # Frozen ablation: initialization-time negatives and gamma throughout.
            id_sims = feats @ bank.id_embeds.data.T
            neg_sims = feats @ bank.corpus_embeds.data[mined.indices].T
            final = _batch_scores(id_sims, neg_sims, tau, config.score_variant, weights)
            pred = np.argmax(id_sims, axis=1)
        else:
            batch_in = feats * np.float32(1.0 / tau) if prescale else feats
            if sims_buf is None or sims_buf.shape[0] < feats.shape[0]:
                sims_buf = np.empty((feats.shape[0], all_embeds.shape[0]), dtype=np.float32)
            sims = np.matmul(batch_in, all_embeds.T, out=sims_buf[: feats.shape[0]])
            if use_exp_path:
                cache = _ExpWorkspace(
                    sims, c, feats, bank.id_embeds.data, bank.corpus_embeds.data, tau
                )
            else:
                cache = _SimWorkspace(sims, c, kernel_tau, softmax_kind)
            gate = GateConfig(gamma, config.gap)
            if config.blend == "batch":
                provisional = cache.scores(mined.indices, config.score_variant, weights)
                batch_pos = provisional >= gate.positive_cut
                batch_neg = provisional < gate.negative_cut
                mean_pos, mean_neg = cache.pair_means(batch_pos, batch_neg)
                act_pos = _blend(queue_activation(pos_queue), mean_pos, config.alpha)
                act_neg = _blend(queue_activation(neg_queue), mean_neg, config.alpha)
            else:
                act_pos = queue_activation(pos_queue)
                act_neg = queue_activation(neg_queue)
            mined, weights = mine(act_neg - act_pos)
            final = cache.scores(mined.indices, config.score_variant, weights)
            pred = cache.pred()

        for i, score in enumerate(final):
            records.append(
                ScoreRecord(
                    index=start + i,
                    score=float(score),
                    pred_class=int(pred[i]),
                    is_id=decide(float(score), gamma),
                    gamma=gamma,
                    batch=batch_index,
                )
            )
        batch_states.append(
            BatchState(
                batch=batch_index,
                neg_indices=mined.indices.copy(),
                gamma=gamma,
                weights=None if weights is None else weights.copy(),
            )
        )

        if config.freeze_after_init:
            continue

        history.push_many(final)
        if config.gamma.mode == "dynamic":
            gamma = dynamic_gamma(history.values()).gamma
        gate = GateConfig(gamma, config.gap)
        push_pos = final >= gate.positive_cut
        push_neg = final < gate.negative_cut
        if batch_index == 0 and config.early_error_rate > 0.0:
            push_pos, push_neg = _flip_first_batch(push_pos, push_neg, config.early_error_rate, rng)
        # The scratch buffer is shared by both gathers, so push each
        # queue before gathering the next block.
        for queue, mask in ((pos_queue, push_pos), (neg_queue, push_neg)):
            count = int(mask.sum())
            if not count:
                continue
            if config.low_memory:
                queue.push_many(feats[mask])
            else:
                if push_buf is None or push_buf.shape[0] < mask.size:
                    push_buf = np.empty((mask.size, all_embeds.shape[0]), dtype=np.float32)
                queue.push_many(cache.rows(mask, out=push_buf))
            if queue is pos_queue:
                pushed_pos += count
            else:
                pushed_neg += count

    return RunResult(
        records=records,
        batch_states=batch_states,
        config=config,
        pushed_pos=pushed_pos,
        pushed_neg=pushed_neg,
        seed_scores=seed_count,
    )


def _blend(hist: np.ndarray, batch: np.ndarray | None, alpha: float) -> np.ndarray:
    if batch is None:
        return hist
    return alpha * hist + (1.0 - alpha) * batch


def run_baseline(
    bank: LabelBank,
    stream: TestStream,
    config: DetectorConfig,
    noise_features: EmbeddingMatrix | None = None,
) -> RunResult:
    """Static pipeline: distance-mined negatives once, plain score, no adaptation.

    Scoring is stateless, so per-sample records are identical under any
    stream order. In dynamic gamma mode the threshold is computed once
    from the initialization entries' scores and then held fixed.
    """
    config.validate()
    mined = (
        mine_baseline(bank, config.num_negatives, config.baseline_percentile)
        if config.num_negatives > 0
        else MinedLabels(indices=np.empty(0, dtype=np.int64), scores=np.empty(0), variant="baseline")
    )
    neg_embeds = bank.corpus_embeds.data[mined.indices]

    if config.gamma.mode == "fixed":
        gamma = float(config.gamma.fixed_value)
    else:
        rng = np.random.default_rng(config.seed)
        qinit = init_queues(
            bank,
            capacity=config.queue_capacity,
            tau=config.tau,
            seed=rng,
            noise_features=noise_features,
            low_memory=True,  # only the seed features are needed here
        )
        init_feats = np.vstack([qinit.pos_features, qinit.neg_features])
        seed_scores = nl_scores_from_sims(
            init_feats @ bank.id_embeds.data.T, init_feats @ neg_embeds.T, config.tau
        )
        gamma = dynamic_gamma(seed_scores).gamma

    records: list[ScoreRecord] = []
    batch_states: list[BatchState] = []
    for batch_index, (start, feats) in enumerate(stream.batches(config.batch_size)):
        id_sims = feats @ bank.id_embeds.data.T
        final = nl_scores_from_sims(id_sims, feats @ neg_embeds.T, config.tau)
        pred = np.argmax(id_sims, axis=1)
        for i, score in enumerate(final):
            records.append(
                ScoreRecord(
                    index=start + i,
                    score=float(score),
                    pred_class=int(pred[i]),
                    is_id=decide(float(score), gamma),
                    gamma=gamma,
                    batch=batch_index,
                )
            )
        batch_states.append(BatchState(batch=batch_index, neg_indices=mined.indices.copy(), gamma=gamma))
    return RunResult(records=records, batch_states=batch_states, config=config)
