"""Embedding bundle container (`.tanlemb`) and label banks.

File layout::

    bytes 0..8    magic b"TANLEMB1"
    bytes 8..12   little-endian uint32 header length H
    bytes 12..12+H UTF-8 JSON header
    remainder     raw section payloads at the absolute offsets the
                  header declares

The header carries ``dim``, the label name lists, and one entry per
section (name, rows, dtype, offset). Float sections are little-endian
float32, row-major; ``gt_domain`` is uint8 (1 = in-distribution),
``gt_class`` is int32 with -1 marking out-of-distribution samples.
Everything is seekable and round-trips bit-exactly.

On load, every embedding matrix is validated: non-finite values and
exactly-zero rows are errors naming the offending row; rows whose L2
norm deviates from 1 by more than ``RENORM_TOLERANCE`` are silently
re-normalized (exporters may emit pre-norm features). Corpus labels
that collide with an ID label name (case-insensitive exact match) are
dropped and reported.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"TANLEMB1"
RENORM_TOLERANCE = 1e-4

_FLOAT_SECTIONS = ("id_labels", "corpus_labels", "test_features", "noise_features")


class BundleError(Exception):
    """Base class for bundle I/O and validation failures."""


class BadMagicError(BundleError):
    """File does not start with the expected magic bytes."""


class FormatError(BundleError):
    """Structural problem: inconsistent sizes, offsets, or header fields."""


class NonFiniteRowError(BundleError):
    """An embedding row contains NaN or infinity."""

    def __init__(self, section: str, row: int):
        super().__init__(f"non-finite value in section {section!r}, row {row}")
        self.section = section
        self.row = row


class ZeroNormRowError(BundleError):
    """An embedding row is exactly zero and cannot be normalized."""

    def __init__(self, section: str, row: int):
        super().__init__(f"zero-norm row in section {section!r}, row {row}")
        self.section = section
        self.row = row


class NormalizationError(ValueError):
    """Single-vector normalization received a zero or non-finite input."""


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return ``v`` scaled to unit L2 norm.

    Raises :class:`NormalizationError` on zero or non-finite input.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NormalizationError("cannot normalize a non-finite vector")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise NormalizationError("cannot normalize a zero vector")
    return v / norm


def _validate_rows(data: np.ndarray, section: str) -> np.ndarray:
    """Check finiteness, reject zero rows, re-normalize drifted rows."""
    finite = np.isfinite(data).all(axis=1)
    if not finite.all():
        raise NonFiniteRowError(section, int(np.argmin(finite)))
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    zero = norms == 0.0
    if zero.any():
        raise ZeroNormRowError(section, int(np.argmax(zero)))
    drifted = np.abs(norms - 1.0) > RENORM_TOLERANCE
    if drifted.any():
        data = data.copy()
        data[drifted] = (data[drifted].astype(np.float64) / norms[drifted, None]).astype(np.float32)
    return data


@dataclass
class EmbeddingMatrix:
    """Row-major float32 matrix of unit-normalized feature vectors."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise FormatError(f"embedding matrix must be 2-D, got shape {self.data.shape}")
        if self.rows < 1 or self.dim < 2:
            raise FormatError(f"embedding matrix needs rows >= 1 and dim >= 2, got {self.data.shape}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @classmethod
    def ingest(cls, raw: np.ndarray, section: str = "embeddings") -> "EmbeddingMatrix":
        """Build a matrix from possibly pre-norm data, enforcing row invariants."""
        data = np.ascontiguousarray(raw, dtype=np.float32)
        if data.ndim != 2:
            raise FormatError(f"section {section!r} must be 2-D, got shape {data.shape}")
        return cls(_validate_rows(data, section))

    def max_norm_deviation(self) -> float:
        norms = np.linalg.norm(self.data.astype(np.float64), axis=1)
        return float(np.max(np.abs(norms - 1.0)))


@dataclass
class LabelBank:
    """ID label set plus the candidate corpus it is mined against."""

    id_names: list[str]
    id_embeds: EmbeddingMatrix
    corpus_names: list[str]
    corpus_embeds: EmbeddingMatrix

    def __post_init__(self):
        if len(self.id_names) != self.id_embeds.rows:
            raise FormatError(
                f"{len(self.id_names)} ID names vs {self.id_embeds.rows} ID embedding rows"
            )
        if len(self.corpus_names) != self.corpus_embeds.rows:
            raise FormatError(
                f"{len(self.corpus_names)} corpus names vs {self.corpus_embeds.rows} corpus rows"
            )
        if self.id_embeds.dim != self.corpus_embeds.dim:
            raise FormatError("ID and corpus embedding dimensions differ")

    @property
    def num_id(self) -> int:
        return len(self.id_names)

    @property
    def num_corpus(self) -> int:
        return len(self.corpus_names)

    @property
    def dim(self) -> int:
        return self.id_embeds.dim

    def dedup_against_id(self) -> tuple["LabelBank", list[str]]:
        """Drop corpus labels whose name matches an ID name (case-insensitive).

        Returns the deduplicated bank and the removed names. Idempotent.
        """
        id_lower = {name.lower() for name in self.id_names}
        keep = [i for i, name in enumerate(self.corpus_names) if name.lower() not in id_lower]
        if len(keep) == len(self.corpus_names):
            return self, []
        if not keep:
            raise FormatError("corpus deduplication removed every corpus label")
        removed = [n for n in self.corpus_names if n.lower() in id_lower]
        bank = LabelBank(
            id_names=self.id_names,
            id_embeds=self.id_embeds,
            corpus_names=[self.corpus_names[i] for i in keep],
            corpus_embeds=EmbeddingMatrix(self.corpus_embeds.data[keep]),
        )
        return bank, removed

    def all_embeds(self) -> np.ndarray:
        """Stacked (C+N, D) float32 matrix, ID rows first (memoized)."""
        cached = getattr(self, "_all_embeds", None)
        if cached is None or cached.shape[0] != self.num_id + self.num_corpus:
            cached = np.vstack([self.id_embeds.data, self.corpus_embeds.data])
            self._all_embeds = cached
        return cached


@dataclass
class TestStream:
    """Test features in stream order with optional ground truth."""

    __test__ = False  # not a pytest class, despite the name

    features: EmbeddingMatrix
    gt_domain: np.ndarray | None = None  # bool, True = in-distribution
    gt_class: np.ndarray | None = None  # int32, -1 for OOD samples
    batch_size: int = 256

    def __post_init__(self):
        if self.batch_size < 1:
            raise FormatError("batch_size must be positive")
        for name, arr in (("gt_domain", self.gt_domain), ("gt_class", self.gt_class)):
            if arr is not None and len(arr) != self.features.rows:
                raise FormatError(f"{name} has length {len(arr)}, expected {self.features.rows}")

    @property
    def count(self) -> int:
        return self.features.rows

    def batches(self, batch_size: int | None = None):
        """Yield (start_index, feature_block) in stream order."""
        size = batch_size or self.batch_size
        for start in range(0, self.count, size):
            yield start, self.features.data[start : start + size]


@dataclass
class LoadedBundle:
    bank: LabelBank
    stream: TestStream
    noise_features: EmbeddingMatrix | None = None
    dedup_removed: list[str] = field(default_factory=list)


def save_bundle(
    path,
    bank: LabelBank,
    stream: TestStream,
    noise_features: EmbeddingMatrix | None = None,
) -> None:
    """Write a `.tanlemb` bundle. Data is written as given (no dedup, no renorm)."""
    sections: list[tuple[str, np.ndarray]] = [
        ("id_labels", bank.id_embeds.data),
        ("corpus_labels", bank.corpus_embeds.data),
        ("test_features", stream.features.data),
    ]
    if noise_features is not None:
        sections.append(("noise_features", noise_features.data))
    if stream.gt_domain is not None:
        sections.append(("gt_domain", np.asarray(stream.gt_domain, dtype=np.uint8)))
    if stream.gt_class is not None:
        sections.append(("gt_class", np.asarray(stream.gt_class, dtype=np.int32)))

    entries = []
    payload_parts = []
    for name, arr in sections:
        if arr.dtype == np.float32:
            dtype, rows = "f32", arr.shape[0]
        elif arr.dtype == np.uint8:
            dtype, rows = "u8", arr.shape[0]
        else:
            dtype, rows = "i32", arr.shape[0]
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        entries.append({"name": name, "rows": int(rows), "dtype": dtype, "nbytes": len(raw)})
        payload_parts.append(raw)

    header = {
        "version": 1,
        "dim": bank.dim,
        "id_names": bank.id_names,
        "corpus_names": bank.corpus_names,
        "sections": entries,
    }
    # Two-pass offset assignment: serialize once to learn the header size.
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    base = len(MAGIC) + 4 + len(blob)
    # Offsets shift the header length; recompute until stable (at most twice).
    for _ in range(3):
        offset = base
        for entry in entries:
            entry["offset"] = offset
            offset += entry["nbytes"]
        new_blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
        if len(new_blob) == len(blob):
            blob = new_blob
            break
        blob = new_blob
        base = len(MAGIC) + 4 + len(blob)

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for raw in payload_parts:
            fh.write(raw)


_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1"), "i32": np.dtype("<i4")}


def load_bundle(path) -> LoadedBundle:
    """Read, validate, re-normalize, and deduplicate a `.tanlemb` bundle."""
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a TANLEMB1 bundle")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_end = len(MAGIC) + 4 + header_len
    if header_end > len(blob):
        raise FormatError(f"{path}: declared header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[len(MAGIC) + 4 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed JSON header: {exc}") from exc

    dim = int(header.get("dim", 0))
    if dim < 2:
        raise FormatError(f"{path}: header dim must be >= 2, got {dim}")

    raw_sections: dict[str, np.ndarray] = {}
    expected_end = header_end
    for entry in header.get("sections", []):
        name, rows = entry["name"], int(entry["rows"])
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise FormatError(f"{path}: unknown section dtype {entry['dtype']!r}")
        per_row = dim if name in _FLOAT_SECTIONS else 1
        nbytes = rows * per_row * dtype.itemsize
        offset = int(entry["offset"])
        if entry.get("nbytes") not in (None, nbytes):
            raise FormatError(f"{path}: section {name!r} declares {entry['nbytes']} bytes, expected {nbytes}")
        if offset < header_end or offset + nbytes > len(blob):
            raise FormatError(f"{path}: section {name!r} payload [{offset}, {offset + nbytes}) out of bounds")
        arr = np.frombuffer(blob, dtype=dtype, count=rows * per_row, offset=offset)
        raw_sections[name] = arr.reshape(rows, dim) if per_row == dim else arr
        expected_end = max(expected_end, offset + nbytes)
    if expected_end != len(blob):
        raise FormatError(f"{path}: {len(blob) - expected_end} trailing bytes after declared sections")

    for required in ("id_labels", "corpus_labels", "test_features"):
        if required not in raw_sections:
            raise FormatError(f"{path}: missing required section {required!r}")

    id_names = list(header.get("id_names", []))
    corpus_names = list(header.get("corpus_names", []))

    bank = LabelBank(
        id_names=id_names,
        id_embeds=EmbeddingMatrix.ingest(raw_sections["id_labels"], "id_labels"),
        corpus_names=corpus_names,
        corpus_embeds=EmbeddingMatrix.ingest(raw_sections["corpus_labels"], "corpus_labels"),
    )
    bank, removed = bank.dedup_against_id()

    test_features = EmbeddingMatrix.ingest(raw_sections["test_features"], "test_features")
    gt_domain = raw_sections.get("gt_domain")
    gt_class = raw_sections.get("gt_class")
    stream = TestStream(
        features=test_features,
        gt_domain=None if gt_domain is None else gt_domain.astype(bool),
        gt_class=None if gt_class is None else gt_class.astype(np.int32),
    )

    noise = raw_sections.get("noise_features")
    noise_matrix = None if noise is None else EmbeddingMatrix.ingest(noise, "noise_features")
    return LoadedBundle(bank=bank, stream=stream, noise_features=noise_matrix, dedup_removed=removed)
