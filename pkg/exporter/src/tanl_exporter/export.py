"""Dataset-to-bundle export pipeline.

Scans an image folder organized one directory per class, encodes every
image, encodes ID and corpus label texts under a prompt template, adds
Gaussian-noise images for queue initialization, and writes a bundle.
Directories whose name matches an ID class (case-insensitive) become
in-distribution samples labeled with that class; every other directory
is out-of-distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from tanl_exporter.encoders import resolve_encoder
from tanl_exporter.format import write_bundle

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")
DEFAULT_TEMPLATE = "The nice <label>"
PLACEHOLDER = "<label>"


@dataclass
class ExportSpec:
    dataset_root: str
    id_class_names: list[str]
    corpus_file: str
    output_path: str
    template: str = DEFAULT_TEMPLATE
    encoder: str = "hash:64"
    noise_count: int = 300
    noise_seed: int = 0
    noise_size: tuple[int, int] = (224, 224)
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.template.count(PLACEHOLDER) != 1:
            raise ValueError(
                f"prompt template must contain {PLACEHOLDER!r} exactly once, got {self.template!r}"
            )
        if not self.id_class_names:
            raise ValueError("need at least one ID class name")
        if self.noise_count < 0:
            raise ValueError("noise_count must be >= 0")

    def prompt(self, label: str) -> str:
        return self.template.replace(PLACEHOLDER, label)


def read_vocabulary(path) -> list[str]:
    words = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            word = line.split("#", 1)[0].strip()
            if word:
                words.append(word)
    if not words:
        raise ValueError(f"{path}: vocabulary file is empty")
    return words


def _load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise ValueError(f"unreadable image {path}: {exc}") from exc


def scan_dataset(root, id_class_names: list[str]):
    """Collect (image paths, gt_domain, gt_class) in deterministic order."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} is not a directory")
    class_index = {name.lower(): i for i, name in enumerate(id_class_names)}
    paths: list[Path] = []
    gt_domain: list[bool] = []
    gt_class: list[int] = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        idx = class_index.get(class_dir.name.lower(), -1)
        for path in files:
            paths.append(path)
            gt_domain.append(idx >= 0)
            gt_class.append(idx)
    if not paths:
        raise ValueError(f"no images found under {root}")
    return paths, np.array(gt_domain, dtype=np.uint8), np.array(gt_class, dtype=np.int32)


def noise_images(count: int, size: tuple[int, int], seed: int) -> list[np.ndarray]:
    """Per-pixel standard Gaussian images, clamped to the valid pixel range."""
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(count):
        g = rng.standard_normal((size[0], size[1], 3))
        images.append((np.clip(g, 0.0, 1.0) * 255).astype(np.uint8))
    return images


def export(spec: ExportSpec) -> dict:
    """Run the export and return a small summary of what was written."""
    spec.validate()
    encoder = resolve_encoder(spec.encoder)
    corpus_names = read_vocabulary(spec.corpus_file)

    paths, gt_domain, gt_class = scan_dataset(spec.dataset_root, spec.id_class_names)
    test_features = encoder.encode_images([_load_image(p) for p in paths])

    id_embeds = encoder.encode_texts([spec.prompt(name) for name in spec.id_class_names])
    corpus_embeds = encoder.encode_texts([spec.prompt(name) for name in corpus_names])

    noise_features = None
    if spec.noise_count:
        noise_features = encoder.encode_images(
            noise_images(spec.noise_count, spec.noise_size, spec.noise_seed)
        )

    write_bundle(
        spec.output_path,
        dim=encoder.dim,
        id_names=list(spec.id_class_names),
        id_embeds=id_embeds,
        corpus_names=corpus_names,
        corpus_embeds=corpus_embeds,
        test_features=test_features,
        noise_features=noise_features,
        gt_domain=gt_domain,
        gt_class=gt_class,
    )
    return {
        "output": str(spec.output_path),
        "dim": encoder.dim,
        "id_classes": len(spec.id_class_names),
        "corpus_words": len(corpus_names),
        "test_samples": len(paths),
        "id_samples": int(gt_domain.sum()),
        "ood_samples": int((1 - gt_domain).sum()),
        "noise_rows": 0 if noise_features is None else int(noise_features.shape[0]),
    }
