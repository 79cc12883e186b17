"""Fixed-capacity FIFO memories backing the streaming detector.

``RowQueue`` holds float32 rows (cached probability rows, or raw
features in low-memory mode) in a preallocated ring buffer and keeps
float64 running column sums so activation reads are O(width). Sums are
fully recomputed every ``recompute_every`` pushes to bound float drift.
``ScoreHistory`` is the scalar FIFO of recent scores used for dynamic
thresholding.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from tanl._kernels import prob_rows_from_sims
from tanl.bundle import EmbeddingMatrix, LabelBank
from tanl.similarity import DEFAULT_TAU

DEFAULT_CAPACITY = 300
HISTORY_CAPACITY = 20_000
RECOMPUTE_EVERY = 1024


class RowQueue:
    """FIFO of float32 rows with incremental float64 running sums."""

    def __init__(self, capacity: int, width: int, recompute_every: int = RECOMPUTE_EVERY):
        if capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.width = width
        self._buf = np.zeros((capacity, width), dtype=np.float32)
        self._start = 0
        self._len = 0
        self._sum = np.zeros(width, dtype=np.float64)
        self._recompute_every = max(1, recompute_every)
        self._since_recompute = 0
        self.mutations = 0

    def __len__(self) -> int:
        return self._len

    def _ring_slices(self, start: int, count: int) -> list[slice]:
        first = min(count, self.capacity - start)
        slices = [slice(start, start + first)]
        if count > first:
            slices.append(slice(0, count - first))
        return slices

    def push(self, row: np.ndarray) -> None:
        self.push_many(np.asarray(row, dtype=np.float32)[None, :])

    def push_many(self, rows: np.ndarray) -> None:
        """Insert rows in order, evicting oldest entries as needed."""
        rows = np.ascontiguousarray(rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[1] != self.width:
            raise ValueError(f"rows have shape {rows.shape}, queue width is {self.width}")
        k = rows.shape[0]
        if k == 0:
            return
        self.mutations += k
        self._since_recompute += k

        if k >= self.capacity:
            # The whole queue turns over: keep only the newest rows.
            self._buf[:] = rows[-self.capacity :]
            self._start = 0
            self._len = self.capacity
            self._recompute()
            return

        evict = max(0, self._len + k - self.capacity)
        if evict:
            for sl in self._ring_slices(self._start, evict):
                self._sum -= self._buf[sl].sum(axis=0, dtype=np.float64)
            self._start = (self._start + evict) % self.capacity
            self._len -= evict

        write_at = (self._start + self._len) % self.capacity
        written = 0
        for sl in self._ring_slices(write_at, k):
            n = sl.stop - sl.start
            self._buf[sl] = rows[written : written + n]
            written += n
        self._len += k
        self._sum += rows.sum(axis=0, dtype=np.float64)

        if self._since_recompute >= self._recompute_every:
            self._recompute()

    def _recompute(self) -> None:
        total = np.zeros(self.width, dtype=np.float64)
        for sl in self._ring_slices(self._start, self._len):
            total += self._buf[sl].sum(axis=0, dtype=np.float64)
        self._sum = total
        self._since_recompute = 0

    @property
    def running_sum(self) -> np.ndarray:
        return self._sum.copy()

    def mean(self) -> np.ndarray:
        """Running-sum activation read: float64 elementwise mean."""
        if self._len == 0:
            raise ValueError("cannot read the mean of an empty queue")
        return self._sum / self._len

    def rows(self) -> np.ndarray:
        """Snapshot of current entries, oldest first (copy)."""
        parts = [self._buf[sl] for sl in self._ring_slices(self._start, self._len)]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.width), np.float32)


class ScoreHistory:
    """Scalar FIFO of the most recent scores."""

    def __init__(self, capacity: int = HISTORY_CAPACITY):
        if capacity < 1:
            raise ValueError(f"history capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._scores: deque[float] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._scores)

    def push_many(self, scores: np.ndarray) -> None:
        self._scores.extend(float(s) for s in np.asarray(scores).ravel())

    def values(self) -> np.ndarray:
        return np.fromiter(self._scores, dtype=np.float64, count=len(self._scores))


@dataclass
class GateConfig:
    """Confidence gate: dead zone around the decision threshold gamma."""

    gamma: float
    gap: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.gap <= 1.0:
            raise ValueError(f"gap must lie in [0, 1], got {self.gap}")

    @property
    def positive_cut(self) -> float:
        return self.gamma + (1.0 - self.gamma) * self.gap

    @property
    def negative_cut(self) -> float:
        return self.gamma - self.gamma * self.gap


def gated_update(
    pos_queue: RowQueue,
    neg_queue: RowQueue,
    scores: np.ndarray,
    rows: np.ndarray,
    gate: GateConfig,
) -> tuple[int, int]:
    """Push high-confidence rows into the queues, in stream order.

    A row joins the positive queue iff its score is at or above the
    positive cut, the negative queue iff strictly below the negative
    cut; scores inside the dead zone join neither. Returns the number
    of rows pushed to each queue.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos_mask = scores >= gate.positive_cut
    neg_mask = scores < gate.negative_cut
    if pos_mask.any():
        pos_queue.push_many(rows[pos_mask])
    if neg_mask.any():
        neg_queue.push_many(rows[neg_mask])
    return int(pos_mask.sum()), int(neg_mask.sum())


@dataclass
class QueueInit:
    """Initialized queues plus the seed features that filled them.

    ``pos_sims``/``neg_sims`` retain the seed features' similarity rows
    over all C+N labels (absent in low-memory mode) so callers can score
    the seed entries without redoing the feature-label product.
    """

    pos: RowQueue
    neg: RowQueue
    pos_features: np.ndarray
    neg_features: np.ndarray
    pos_sims: np.ndarray | None = None
    neg_sims: np.ndarray | None = None


def _sample_noise(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    noise = rng.standard_normal((count, dim))
    noise /= np.linalg.norm(noise, axis=1, keepdims=True)
    return noise.astype(np.float32)


def init_queues(
    bank: LabelBank,
    capacity: int = DEFAULT_CAPACITY,
    tau: float = DEFAULT_TAU,
    seed: int | np.random.Generator = 0,
    noise_features: EmbeddingMatrix | None = None,
    row_kind: str = "softmax",
    low_memory: bool = False,
    recompute_every: int = RECOMPUTE_EVERY,
) -> QueueInit:
    """Fill the positive queue with ID-label rows and the negative queue with noise rows.

    Positives are ID label embeddings sampled uniformly without
    replacement when C >= capacity (with replacement otherwise);
    negatives are the supplied noise features, or seeded isotropic
    Gaussian directions when none are provided. In low-memory mode the
    queues store the features themselves instead of cached rows.
    """
    if capacity < 1:
        raise ValueError(f"queue capacity must be >= 1, got {capacity}")
    if row_kind not in ("softmax", "cosine"):
        raise ValueError(f"unknown row kind {row_kind!r}")
    rng = np.random.default_rng(seed)

    c = bank.num_id
    picks = rng.choice(c, size=capacity, replace=c < capacity)
    pos_features = bank.id_embeds.data[picks]

    if noise_features is not None:
        pool = noise_features.data
        if pool.shape[1] != bank.dim:
            raise ValueError(f"noise features have dim {pool.shape[1]}, bank dim is {bank.dim}")
        if pool.shape[0] >= capacity:
            neg_features = pool[:capacity].copy()
        else:
            neg_features = pool[rng.choice(pool.shape[0], size=capacity, replace=True)]
    else:
        neg_features = _sample_noise(rng, capacity, bank.dim)

    width = bank.dim if low_memory else bank.num_id + bank.num_corpus
    pos = RowQueue(capacity, width, recompute_every)
    neg = RowQueue(capacity, width, recompute_every)
    if low_memory:
        pos.push_many(pos_features)
        neg.push_many(neg_features)
        return QueueInit(pos=pos, neg=neg, pos_features=pos_features, neg_features=neg_features)

    all_embeds = bank.all_embeds()
    sims_by_queue = {}
    for queue, feats in ((pos, pos_features), (neg, neg_features)):
        sims = feats @ all_embeds.T
        sims_by_queue[queue] = sims
        queue.push_many(prob_rows_from_sims(sims, tau) if row_kind == "softmax" else sims)
    return QueueInit(
        pos=pos,
        neg=neg,
        pos_features=pos_features,
        neg_features=neg_features,
        pos_sims=sims_by_queue[pos],
        neg_sims=sims_by_queue[neg],
    )
