"""Feature encoders behind the export pipeline.

Encoders take uint8 RGB image arrays or strings and return row-wise
L2-normalized float32 features. ``hash:<dim>`` is a deterministic
pseudo-encoder (content digest seeds a Gaussian direction) for tests
and format work without model weights; ``clip:<checkpoint>`` runs a
real CLIP checkpoint through transformers when torch and the weights
are available.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _l2(rows: np.ndarray) -> np.ndarray:
    rows = rows.astype(np.float32)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.maximum(norms, np.float32(1e-12))


class HashEncoder:
    """Deterministic content-addressed pseudo-features (no model needed).

    The digest of the input seeds a Gaussian direction on the unit
    sphere, so identical inputs map to identical features on any
    platform. No semantic structure is implied.
    """

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ValueError(f"encoder dim must be >= 2, got {dim}")
        self.dim = dim

    def _feature(self, payload: bytes) -> np.ndarray:
        digest = hashlib.blake2b(payload, digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim)

    def encode_images(self, images: list[np.ndarray]) -> np.ndarray:
        rows = []
        for img in images:
            arr = np.ascontiguousarray(img, dtype=np.uint8)
            rows.append(self._feature(repr(arr.shape).encode() + arr.tobytes()))
        return _l2(np.stack(rows))

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        return _l2(np.stack([self._feature(t.encode("utf-8")) for t in texts]))


class ClipEncoder:
    """CLIP features via transformers; needs torch and checkpoint weights."""

    def __init__(self, checkpoint: str, batch_size: int = 64):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(f"encoder unavailable: transformers/torch not importable ({exc})")
        try:
            self._model = CLIPModel.from_pretrained(checkpoint)
            self._processor = CLIPProcessor.from_pretrained(checkpoint)
        except Exception as exc:
            raise RuntimeError(f"encoder unavailable: cannot load {checkpoint!r} ({exc})")
        self._model.eval()
        self.batch_size = batch_size
        self.dim = int(self._model.config.projection_dim)

    def encode_images(self, images: list[np.ndarray]) -> np.ndarray:
        import torch

        rows = []
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                chunk = images[start : start + self.batch_size]
                inputs = self._processor(images=list(chunk), return_tensors="pt")
                feats = self._model.get_image_features(**inputs)
                rows.append(feats.cpu().numpy())
        return _l2(np.concatenate(rows))

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        import torch

        rows = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                chunk = texts[start : start + self.batch_size]
                inputs = self._processor(text=chunk, return_tensors="pt", padding=True, truncation=True)
                feats = self._model.get_text_features(**inputs)
                rows.append(feats.cpu().numpy())
        return _l2(np.concatenate(rows))


def resolve_encoder(identifier: str):
    """Build an encoder from ``hash:<dim>`` or ``clip:<checkpoint>``."""
    kind, _, arg = identifier.partition(":")
    if kind == "hash":
        return HashEncoder(int(arg or 64))
    if kind == "clip":
        if not arg:
            raise ValueError("clip encoder needs a checkpoint, e.g. clip:openai/clip-vit-base-patch16")
        return ClipEncoder(arg)
    raise ValueError(f"unknown encoder identifier {identifier!r} (use hash:<dim> or clip:<checkpoint>)")
