"""Standalone `.tanlemb` writer.

Implements the bundle wire format the detection engine documents:
8-byte magic ``TANLEMB1``, little-endian uint32 header length, UTF-8
JSON header (dim, label name lists, section table with absolute
offsets), then raw little-endian payloads. Float sections are float32
row-major; ``gt_domain`` is uint8 (1 = in-distribution) and
``gt_class`` int32 with -1 for OOD samples. Kept independent of the
engine package on purpose: the file format is the interface.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"TANLEMB1"


def write_bundle(
    path,
    dim: int,
    id_names: list[str],
    id_embeds: np.ndarray,
    corpus_names: list[str],
    corpus_embeds: np.ndarray,
    test_features: np.ndarray,
    noise_features: np.ndarray | None = None,
    gt_domain: np.ndarray | None = None,
    gt_class: np.ndarray | None = None,
) -> None:
    sections: list[tuple[str, np.ndarray, str]] = [
        ("id_labels", np.ascontiguousarray(id_embeds, dtype="<f4"), "f32"),
        ("corpus_labels", np.ascontiguousarray(corpus_embeds, dtype="<f4"), "f32"),
        ("test_features", np.ascontiguousarray(test_features, dtype="<f4"), "f32"),
    ]
    if noise_features is not None:
        sections.append(("noise_features", np.ascontiguousarray(noise_features, dtype="<f4"), "f32"))
    if gt_domain is not None:
        sections.append(("gt_domain", np.ascontiguousarray(gt_domain, dtype=np.uint8), "u8"))
    if gt_class is not None:
        sections.append(("gt_class", np.ascontiguousarray(gt_class, dtype="<i4"), "i32"))

    entries = []
    payloads = []
    for name, arr, dtype in sections:
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "rows": int(arr.shape[0]), "dtype": dtype, "nbytes": len(raw)})
        payloads.append(raw)

    header = {
        "version": 1,
        "dim": int(dim),
        "id_names": list(id_names),
        "corpus_names": list(corpus_names),
        "sections": entries,
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    base = len(MAGIC) + 4 + len(blob)
    # Offsets feed back into the header length; iterate until stable.
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
        for raw in payloads:
            fh.write(raw)
