"""Export image folders and label vocabularies into `.tanlemb` bundles.

The exporter encodes images and prompted label texts with a pluggable
encoder (a deterministic hash encoder for tests and pipelines without
model weights, or a CLIP checkpoint via transformers) and writes the
binary bundle format the detection engine consumes.
"""

from tanl_exporter.encoders import HashEncoder, resolve_encoder
from tanl_exporter.export import ExportSpec, export

__version__ = "0.1.0"

__all__ = ["ExportSpec", "HashEncoder", "export", "resolve_encoder"]
