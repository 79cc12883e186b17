from collections import deque

import numpy as np
import pytest

from tanl.memory import GateConfig, RowQueue, ScoreHistory, gated_update, init_queues
from tanl.similarity import prob_rows
from tests.conftest import make_bank, unit_rows


class TestRowQueue:
    def test_capacity_three_evicts_oldest(self):
        q = RowQueue(capacity=3, width=2)
        rows = np.array([[1, 1], [2, 2], [3, 3], [4, 4]], dtype=np.float32)
        q.push_many(rows)
        assert len(q) == 3
        np.testing.assert_array_equal(q.rows(), rows[1:])
        np.testing.assert_allclose(q.running_sum, rows[1:].sum(axis=0))

    def test_block_larger_than_capacity_keeps_newest(self, rng):
        q = RowQueue(capacity=4, width=3)
        rows = rng.random((11, 3)).astype(np.float32)
        q.push_many(rows)
        np.testing.assert_array_equal(q.rows(), rows[-4:])
        np.testing.assert_allclose(q.running_sum, rows[-4:].sum(axis=0, dtype=np.float64))

    def test_fifo_order_over_random_pushes(self, rng):
        q = RowQueue(capacity=7, width=4)
        mirror = deque(maxlen=7)
        for _ in range(200):
            block = rng.random((int(rng.integers(1, 5)), 4)).astype(np.float32)
            q.push_many(block)
            mirror.extend(block)
            np.testing.assert_array_equal(q.rows(), np.array(mirror))

    def test_running_sum_tracks_true_sum(self, rng):
        q = RowQueue(capacity=50, width=8, recompute_every=97)
        for _ in range(400):
            q.push_many(rng.random((int(rng.integers(1, 9)), 8)).astype(np.float32))
            truth = q.rows().sum(axis=0, dtype=np.float64)
            np.testing.assert_allclose(q.running_sum, truth, rtol=1e-6)
            assert len(q) <= 50

    def test_mean_equals_activation_of_entries(self, rng):
        q = RowQueue(capacity=20, width=5)
        q.push_many(rng.random((33, 5)).astype(np.float32))
        np.testing.assert_allclose(q.mean(), q.rows().mean(axis=0, dtype=np.float64), rtol=1e-9)

    def test_empty_mean_rejected(self):
        with pytest.raises(ValueError):
            RowQueue(capacity=3, width=2).mean()


class TestScoreHistory:
    def test_capacity_five_drops_oldest(self):
        h = ScoreHistory(capacity=5)
        h.push_many(np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
        np.testing.assert_array_equal(h.values(), [2, 3, 4, 5, 6])

    def test_mean_matches_naive(self, rng):
        h = ScoreHistory(capacity=100)
        seen = []
        for _ in range(30):
            block = rng.random(int(rng.integers(1, 20)))
            h.push_many(block)
            seen.extend(block.tolist())
        np.testing.assert_allclose(h.values().mean(), np.mean(seen[-100:]), rtol=1e-12)


class TestGatedUpdate:
    def gate(self):
        return GateConfig(gamma=0.5, gap=0.2)

    def test_cuts_from_defaults(self):
        gate = self.gate()
        assert gate.positive_cut == pytest.approx(0.6)
        assert gate.negative_cut == pytest.approx(0.4)

    def test_score_above_positive_cut_goes_positive(self):
        pos, neg = RowQueue(4, 2), RowQueue(4, 2)
        n_pos, n_neg = gated_update(pos, neg, np.array([0.65]), np.ones((1, 2), np.float32), self.gate())
        assert (n_pos, n_neg) == (1, 0)

    def test_score_below_negative_cut_goes_negative(self):
        pos, neg = RowQueue(4, 2), RowQueue(4, 2)
        n_pos, n_neg = gated_update(pos, neg, np.array([0.35]), np.ones((1, 2), np.float32), self.gate())
        assert (n_pos, n_neg) == (0, 1)

    def test_dead_zone_enters_neither(self):
        pos, neg = RowQueue(4, 2), RowQueue(4, 2)
        scores = np.array([0.40, 0.45, 0.55, 0.599999])
        n_pos, n_neg = gated_update(pos, neg, scores, np.ones((4, 2), np.float32), self.gate())
        assert (n_pos, n_neg) == (0, 0)
        assert len(pos) == 0 and len(neg) == 0

    def test_boundary_is_inclusive_for_positive(self):
        pos, neg = RowQueue(4, 2), RowQueue(4, 2)
        n_pos, _ = gated_update(pos, neg, np.array([0.6]), np.ones((1, 2), np.float32), self.gate())
        assert n_pos == 1

    def test_eviction_with_sums_matches_naive(self, rng):
        pos, neg = RowQueue(3, 4), RowQueue(3, 4)
        rows = rng.random((4, 4)).astype(np.float32)
        gated_update(pos, neg, np.array([0.9, 0.95, 0.99, 0.7]), rows, self.gate())
        assert len(pos) == 3
        np.testing.assert_array_equal(pos.rows(), rows[1:])
        np.testing.assert_allclose(pos.running_sum, rows[1:].sum(axis=0, dtype=np.float64), rtol=1e-9)


class TestInitQueues:
    def test_sampling_without_replacement_when_labels_suffice(self):
        bank = make_bank(num_id=40, num_corpus=10, dim=16)
        qinit = init_queues(bank, capacity=30, seed=3)
        assert len(qinit.pos) == 30
        # With C >= L the sampled label features are pairwise distinct.
        assert len({row.tobytes() for row in qinit.pos_features}) == 30

    def test_sampling_with_replacement_when_labels_scarce(self):
        bank = make_bank(num_id=4, num_corpus=10, dim=16)
        qinit = init_queues(bank, capacity=12, seed=3)
        assert len(qinit.pos) == 12

    def test_same_seed_identical_queues(self):
        bank = make_bank(num_id=8, num_corpus=20, dim=16)
        a = init_queues(bank, capacity=10, seed=11)
        b = init_queues(bank, capacity=10, seed=11)
        np.testing.assert_array_equal(a.pos.rows(), b.pos.rows())
        np.testing.assert_array_equal(a.neg.rows(), b.neg.rows())
        np.testing.assert_array_equal(a.neg_features, b.neg_features)

    def test_supplied_noise_features_used(self, rng):
        bank = make_bank(num_id=8, num_corpus=20, dim=16)
        noise = unit_rows(rng, 10, 16)
        from tanl.bundle import EmbeddingMatrix

        qinit = init_queues(bank, capacity=6, seed=0, noise_features=EmbeddingMatrix(noise))
        np.testing.assert_array_equal(qinit.neg_features, noise[:6])

    def test_queue_rows_are_prob_rows(self):
        bank = make_bank(num_id=5, num_corpus=9, dim=16)
        qinit = init_queues(bank, capacity=4, seed=2)
        expected = prob_rows(qinit.pos_features, bank)
        np.testing.assert_allclose(qinit.pos.rows(), expected, atol=1e-7)

    def test_noise_activation_on_id_entries_near_uniform(self):
        # Empirical mean over 300 seeded noise rows at D=512; the band
        # is frozen from a reference run of this exact construction.
        bank = make_bank(num_id=10, num_corpus=100, dim=512, seed=5)
        qinit = init_queues(bank, capacity=300, seed=17)
        act = qinit.neg.mean()
        uniform = 1.0 / (bank.num_id + bank.num_corpus)
        id_mean = act[: bank.num_id].mean()
        assert 0.25 * uniform < id_mean < 4.0 * uniform

    def test_low_memory_stores_features(self):
        bank = make_bank(num_id=5, num_corpus=9, dim=16)
        qinit = init_queues(bank, capacity=4, seed=2, low_memory=True)
        np.testing.assert_array_equal(qinit.pos.rows(), qinit.pos_features)

    def test_invalid_capacity_rejected(self):
        with pytest.raises(ValueError):
            init_queues(make_bank(), capacity=0)
