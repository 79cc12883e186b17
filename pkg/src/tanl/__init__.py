"""Streaming out-of-distribution detection over precomputed embeddings.

The engine consumes ``.tanlemb`` bundles (unit-normalized image/text
features plus label vocabularies), mines negative labels from a corpus
at test time based on how strongly each label activates on recent
confident samples, and scores every test feature with an
activation-aware softmax score. Baselines, synthetic benchmarks, and an
evaluation harness are included.
"""

from tanl.bundle import (
    BadMagicError,
    BundleError,
    EmbeddingMatrix,
    FormatError,
    LabelBank,
    LoadedBundle,
    NonFiniteRowError,
    TestStream,
    ZeroNormRowError,
    l2_normalize,
    load_bundle,
    save_bundle,
)
from tanl.detector import DetectorConfig, RunResult, ScoreRecord, run_baseline, run_stream
from tanl.metrics import EvalReport, auroc, evaluate, fpr_at_tpr, id_accuracy
from tanl.mining import MinedLabels, mine_activated, mine_baseline, top_select
from tanl.scoring import ScoreContext, fpr_derivative_sign, s_aa, s_aa_ew, s_aa_fast, s_nl
from tanl.synth import SynthSpec, generate
from tanl.threshold import GammaPolicy, decide, dynamic_gamma

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "BundleError",
    "DetectorConfig",
    "EmbeddingMatrix",
    "EvalReport",
    "FormatError",
    "GammaPolicy",
    "LabelBank",
    "LoadedBundle",
    "MinedLabels",
    "NonFiniteRowError",
    "RunResult",
    "ScoreContext",
    "ScoreRecord",
    "SynthSpec",
    "TestStream",
    "ZeroNormRowError",
    "auroc",
    "decide",
    "dynamic_gamma",
    "evaluate",
    "fpr_at_tpr",
    "fpr_derivative_sign",
    "generate",
    "id_accuracy",
    "l2_normalize",
    "load_bundle",
    "mine_activated",
    "mine_baseline",
    "run_baseline",
    "run_stream",
    "s_aa",
    "s_aa_ew",
    "s_aa_fast",
    "s_nl",
    "save_bundle",
    "top_select",
]
