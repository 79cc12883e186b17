import numpy as np
import pytest

from tanl.bundle import EmbeddingMatrix, LabelBank, TestStream


def unit_rows(rng, count, dim):
    rows = rng.standard_normal((count, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)


def make_bank(num_id=3, num_corpus=10, dim=16, seed=0):
    rng = np.random.default_rng(seed)
    return LabelBank(
        id_names=[f"id_{i}" for i in range(num_id)],
        id_embeds=EmbeddingMatrix(unit_rows(rng, num_id, dim)),
        corpus_names=[f"word_{i}" for i in range(num_corpus)],
        corpus_embeds=EmbeddingMatrix(unit_rows(rng, num_corpus, dim)),
    )


def orthogonal_bank(num_id=3, num_corpus=5, dim=None):
    """Bank whose labels are distinct standard basis vectors."""
    dim = dim or (num_id + num_corpus)
    assert dim >= num_id + num_corpus
    eye = np.eye(dim, dtype=np.float32)
    return LabelBank(
        id_names=[f"id_{i}" for i in range(num_id)],
        id_embeds=EmbeddingMatrix(eye[:num_id]),
        corpus_names=[f"word_{i}" for i in range(num_corpus)],
        corpus_embeds=EmbeddingMatrix(eye[num_id : num_id + num_corpus]),
    )


def make_stream(count=20, dim=16, seed=1, with_gt=True):
    rng = np.random.default_rng(seed)
    gt_domain = rng.random(count) < 0.5 if with_gt else None
    if with_gt and gt_domain.all():
        gt_domain[0] = False
    if with_gt and not gt_domain.any():
        gt_domain[0] = True
    gt_class = None
    if with_gt:
        gt_class = np.where(gt_domain, rng.integers(0, 3, size=count), -1).astype(np.int32)
    return TestStream(
        features=EmbeddingMatrix(unit_rows(rng, count, dim)),
        gt_domain=gt_domain,
        gt_class=gt_class,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
