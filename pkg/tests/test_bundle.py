import numpy as np
import pytest

from tanl.bundle import (
    MAGIC,
    BadMagicError,
    EmbeddingMatrix,
    FormatError,
    LabelBank,
    NonFiniteRowError,
    NormalizationError,
    TestStream,
    ZeroNormRowError,
    l2_normalize,
    load_bundle,
    save_bundle,
)
from tests.conftest import make_bank, make_stream, unit_rows


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], rtol=1e-12)

    def test_unit_vector_fixed_point(self):
        v = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(l2_normalize(v), v)

    def test_random_512_dim_has_unit_norm(self, rng):
        v = rng.standard_normal(512)
        assert abs(np.linalg.norm(l2_normalize(v)) - 1.0) < 1e-6

    def test_zero_vector_rejected(self):
        with pytest.raises(NormalizationError):
            l2_normalize(np.zeros(4))

    def test_non_finite_rejected(self):
        with pytest.raises(NormalizationError):
            l2_normalize(np.array([1.0, np.nan]))


class TestEmbeddingMatrix:
    def test_zero_row_names_offender(self):
        data = unit_rows(np.random.default_rng(0), 10, 8)
        data[7] = 0.0
        with pytest.raises(ZeroNormRowError, match="row 7"):
            EmbeddingMatrix.ingest(data, "test_features")

    def test_non_finite_row_names_offender(self):
        data = unit_rows(np.random.default_rng(0), 4, 8)
        data[2, 3] = np.inf
        with pytest.raises(NonFiniteRowError, match="row 2"):
            EmbeddingMatrix.ingest(data, "id_labels")

    def test_drifted_rows_are_renormalized(self):
        data = unit_rows(np.random.default_rng(0), 5, 8)
        data[1] *= 3.0
        mat = EmbeddingMatrix.ingest(data)
        assert mat.max_norm_deviation() < 1e-4

    def test_rows_within_tolerance_left_untouched(self):
        data = unit_rows(np.random.default_rng(0), 5, 8)
        mat = EmbeddingMatrix.ingest(data.copy())
        np.testing.assert_array_equal(mat.data, data)

    def test_shape_invariants(self):
        with pytest.raises(FormatError):
            EmbeddingMatrix(np.ones((1, 1), dtype=np.float32))


class TestDedup:
    def test_colliding_corpus_name_removed(self):
        bank = make_bank(num_id=3, num_corpus=10)
        bank.corpus_names[4] = "ID_1"  # case-insensitive collision
        deduped, removed = bank.dedup_against_id()
        assert deduped.num_corpus == 9
        assert removed == ["ID_1"]
        assert "id_1" not in [n.lower() for n in deduped.corpus_names]

    def test_dedup_is_idempotent(self):
        bank = make_bank(num_id=3, num_corpus=10)
        bank.corpus_names[0] = "id_2"
        once, removed_first = bank.dedup_against_id()
        twice, removed_second = once.dedup_against_id()
        assert removed_first and not removed_second
        assert twice is once

    def test_name_count_mismatch_rejected(self):
        with pytest.raises(FormatError):
            LabelBank(
                id_names=["a"],
                id_embeds=EmbeddingMatrix(unit_rows(np.random.default_rng(0), 2, 8)),
                corpus_names=["b"],
                corpus_embeds=EmbeddingMatrix(unit_rows(np.random.default_rng(1), 1, 8)),
            )


class TestRoundTrip:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        bank = make_bank(num_id=3, num_corpus=10, dim=8)
        stream = make_stream(count=5, dim=8)
        noise = EmbeddingMatrix(unit_rows(rng, 4, 8))
        path = tmp_path / "bundle.tanlemb"
        save_bundle(path, bank, stream, noise)
        loaded = load_bundle(path)

        assert loaded.bank.id_names == bank.id_names
        assert loaded.bank.corpus_names == bank.corpus_names
        assert loaded.bank.id_embeds.data.tobytes() == bank.id_embeds.data.tobytes()
        assert loaded.bank.corpus_embeds.data.tobytes() == bank.corpus_embeds.data.tobytes()
        assert loaded.stream.features.data.tobytes() == stream.features.data.tobytes()
        assert loaded.noise_features.data.tobytes() == noise.data.tobytes()
        np.testing.assert_array_equal(loaded.stream.gt_domain, stream.gt_domain)
        np.testing.assert_array_equal(loaded.stream.gt_class, stream.gt_class)
        assert loaded.dedup_removed == []

    def test_save_load_save_is_stable(self, tmp_path):
        bank = make_bank()
        stream = make_stream()
        first = tmp_path / "a.tanlemb"
        second = tmp_path / "b.tanlemb"
        save_bundle(first, bank, stream)
        loaded = load_bundle(first)
        save_bundle(second, loaded.bank, loaded.stream, loaded.noise_features)
        assert first.read_bytes() == second.read_bytes()

    def test_max_norm_deviation_after_load(self, tmp_path):
        bank = make_bank(dim=32)
        bank.id_embeds.data[0] *= 1.5  # exporter slop, gets renormalized on load
        path = tmp_path / "bundle.tanlemb"
        save_bundle(path, bank, make_stream(dim=32))
        loaded = load_bundle(path)
        for mat in (loaded.bank.id_embeds, loaded.bank.corpus_embeds, loaded.stream.features):
            assert mat.max_norm_deviation() < 1e-4

    def test_load_applies_dedup_and_reports(self, tmp_path):
        bank = make_bank(num_id=3, num_corpus=10)
        bank.corpus_names[5] = "id_0"
        path = tmp_path / "bundle.tanlemb"
        save_bundle(path, bank, make_stream())
        loaded = load_bundle(path)
        assert loaded.bank.num_corpus == 9
        assert loaded.dedup_removed == ["id_0"]


class TestFormatErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tanlemb"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(BadMagicError):
            load_bundle(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.tanlemb"
        save_bundle(path, make_bank(), make_stream())
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(FormatError):
            load_bundle(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "trail.tanlemb"
        save_bundle(path, make_bank(), make_stream())
        path.write_bytes(path.read_bytes() + b"\x00" * 4)
        with pytest.raises(FormatError):
            load_bundle(path)

    def test_header_length_overflow(self, tmp_path):
        path = tmp_path / "hdr.tanlemb"
        path.write_bytes(MAGIC + (2**31).to_bytes(4, "little") + b"{}")
        with pytest.raises(FormatError):
            load_bundle(path)

    def test_gt_length_mismatch_rejected(self):
        with pytest.raises(FormatError):
            TestStream(
                features=EmbeddingMatrix(unit_rows(np.random.default_rng(0), 5, 8)),
                gt_domain=np.ones(4, dtype=bool),
            )
