"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints an ``ACCEPTANCE PASS`` line on success (run with ``-s``
to see them live). Golden numbers were produced by the committed
reference run of the default synthetic benchmark and are asserted with
the stated tolerance; they are not recalibrated.

Full-scale published benchmark figures (ImageNet-scale AUROC/FPR95)
need real encoder features and datasets and are out of scope here: the
exporter package can produce conforming bundles from real data, and the
optional check lives with it.
"""

import time
from collections import deque

import mpmath
import numpy as np
import pytest

from tanl.bundle import EmbeddingMatrix, LabelBank, TestStream
from tanl.detector import DetectorConfig, run_baseline, run_stream
from tanl.memory import GateConfig, RowQueue, gated_update
from tanl.metrics import auroc, fpr_at_tpr
from tanl.scoring import ScoreContext, fpr_derivative_sign, s_aa, s_aa_fast
from tanl.synth import SynthSpec, generate
from tanl.threshold import dynamic_gamma

GOLDEN_TANL_AUROC = 0.997412
GOLDEN_TANL_FPR95 = 0.006
GOLDEN_BASELINE_AUROC = 0.994248
GOLDEN_BASELINE_FPR95 = 0.026
GOLDEN_FROZEN_FPR95 = 0.026
AUROC_TOLERANCE = 0.005


def _report(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def _unit(rng, n, d):
    rows = rng.standard_normal((n, d)).astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows


@pytest.fixture(scope="module")
def default_bench():
    return generate(SynthSpec())


def test_prefix_score_oracle_equivalence():
    """Fast prefix score matches the reference prefix evaluation to 1e-7."""
    rng = np.random.default_rng(202401)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(2, 101))
        m = int(rng.integers(1, 2001))
        d = int(rng.integers(8, 513))
        ctx = ScoreContext(id_embeds=_unit(rng, c, d), neg_embeds=_unit(rng, m, d), tau=0.01)
        v = _unit(rng, 1, d)[0]
        reference = s_aa(v, ctx)
        fast = s_aa_fast(v, ctx)
        worst = max(worst, abs(fast - reference) / abs(reference))
    elapsed = time.perf_counter() - started
    assert worst < 1e-7, f"max relative error {worst:.3e}"
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    _report(f"prefix-score oracle equivalence (max rel err {worst:.2e}, {elapsed:.1f}s)")


def test_metric_oracles_exact():
    """AUROC and FPR95 equal exhaustive pairwise/threshold-sweep oracles exactly."""
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(4, 1001))
        gt = rng.random(n) < rng.uniform(0.2, 0.8)
        if gt.all():
            gt[0] = False
        if not gt.any():
            gt[0] = True
        if trial % 2:  # quantized scores force ties
            scores = rng.choice(np.round(rng.random(7), 2), size=n)
        else:
            scores = rng.random(n)

        id_scores, ood_scores = scores[gt], scores[~gt]
        greater = int(np.sum(id_scores[:, None] > ood_scores[None, :]))
        equal = int(np.sum(id_scores[:, None] == ood_scores[None, :]))
        oracle_auroc = (greater + 0.5 * equal) / (id_scores.size * ood_scores.size)
        assert auroc(scores, gt) == oracle_auroc

        oracle_fpr = None
        for t in np.unique(scores)[::-1]:
            if np.count_nonzero(id_scores >= t) / id_scores.size >= 0.95:
                oracle_fpr = np.count_nonzero(ood_scores >= t) / ood_scores.size
                break
        assert fpr_at_tpr(scores, gt) == oracle_fpr
    _report("metric oracles exact on 200 random instances (ties included)")


def test_dynamic_gamma_brute_force():
    """Dynamic threshold attains the exact midpoint-candidate minimum."""
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 201))
        scores = rng.choice(np.round(rng.random(9), 2), size=n) + rng.normal(0, 0.005, n)
        result = dynamic_gamma(scores)
        s = np.sort(scores.astype(np.float64))
        candidates = [
            0.5 * (s[i] + s[i + 1]) for i in range(n - 1) if s[i] < s[i + 1]
        ]
        if not candidates:
            assert result.degenerate
            continue
        objectives = []
        for gamma in candidates:
            upper, lower = s[s >= gamma], s[s < gamma]
            objectives.append(float(np.var(upper) + np.var(lower)))
        best = min(objectives)
        returned = float(np.var(s[s >= result.gamma]) + np.var(s[s < result.gamma]))
        assert returned <= best + 1e-12
        assert result.gamma == pytest.approx(candidates[int(np.argmin(objectives))], abs=1e-12)
    _report("dynamic gamma exact on 100 brute-forced histories")


def test_queue_integrity_under_randomized_updates():
    """Running sums track truth to 1e-6 relative over 10,000 gated updates."""
    rng = np.random.default_rng(23)
    capacity, width = 300, 64
    pos = RowQueue(capacity, width)
    neg = RowQueue(capacity, width)
    mirror_pos: deque = deque(maxlen=capacity)
    mirror_neg: deque = deque(maxlen=capacity)
    worst = 0.0
    for step in range(10_000):
        k = int(rng.integers(1, 6))
        scores = rng.random(k)
        rows = rng.random((k, width)).astype(np.float32)
        gate = GateConfig(gamma=float(rng.uniform(0.2, 0.8)), gap=0.2)
        gated_update(pos, neg, scores, rows, gate)
        mirror_pos.extend(rows[scores >= gate.positive_cut])
        mirror_neg.extend(rows[scores < gate.negative_cut])
        assert len(pos) <= capacity and len(neg) <= capacity
        if step % 500 == 0 or step == 9_999:
            for queue, mirror in ((pos, mirror_pos), (neg, mirror_neg)):
                if not len(queue):
                    continue
                np.testing.assert_array_equal(queue.rows(), np.array(mirror))  # FIFO order
                truth = np.array(mirror, dtype=np.float64).sum(axis=0)
                rel = np.max(np.abs(queue.running_sum - truth) / np.maximum(np.abs(truth), 1e-30))
                worst = max(worst, float(rel))
    assert worst < 1e-6, f"running-sum drift {worst:.2e}"
    _report(f"queue integrity over 10,000 gated updates (drift {worst:.2e})")


def test_synthetic_end_to_end_beats_baseline(default_bench):
    """Default benchmark: adaptive detector hits golden AUROC and beats the baseline FPR95."""
    result = default_bench
    cfg = DetectorConfig()
    t0 = time.perf_counter()
    stream_run = run_stream(result.bank, result.stream, cfg)
    stream_elapsed = time.perf_counter() - t0
    t0 = time.perf_counter()
    base_run = run_baseline(result.bank, result.stream, cfg)
    base_elapsed = time.perf_counter() - t0

    gt = result.stream.gt_domain
    tanl_auroc = auroc(stream_run.scores(), gt)
    tanl_fpr = fpr_at_tpr(stream_run.scores(), gt)
    base_auroc = auroc(base_run.scores(), gt)
    base_fpr = fpr_at_tpr(base_run.scores(), gt)

    assert tanl_auroc >= 0.97
    assert abs(tanl_auroc - GOLDEN_TANL_AUROC) <= AUROC_TOLERANCE
    assert abs(base_auroc - GOLDEN_BASELINE_AUROC) <= AUROC_TOLERANCE
    assert tanl_fpr < base_fpr, f"tanl {tanl_fpr} vs baseline {base_fpr}"
    assert stream_elapsed < 60.0 and base_elapsed < 60.0
    _report(
        "synthetic end-to-end: "
        f"auroc {tanl_auroc:.4f} (golden {GOLDEN_TANL_AUROC}), "
        f"fpr95 {tanl_fpr:.3f} < baseline {base_fpr:.3f}, "
        f"{stream_elapsed:.1f}s/{base_elapsed:.1f}s"
    )


def test_ablation_directionality(default_bench):
    """Alpha=1 equals the distribution-adaptive run bit-exactly; freezing hurts."""
    result = default_bench
    batch_mode = run_stream(result.bank, result.stream, DetectorConfig(alpha=1.0, blend="batch"))
    dist_mode = run_stream(result.bank, result.stream, DetectorConfig(blend="dist"))
    assert batch_mode.to_jsonl() == dist_mode.to_jsonl()

    full = run_stream(result.bank, result.stream, DetectorConfig())
    frozen = run_stream(result.bank, result.stream, DetectorConfig(freeze_after_init=True))
    gt = result.stream.gt_domain
    full_fpr = fpr_at_tpr(full.scores(), gt)
    frozen_fpr = fpr_at_tpr(frozen.scores(), gt)
    assert frozen_fpr > full_fpr, f"frozen {frozen_fpr} vs full {full_fpr}"
    assert frozen_fpr == pytest.approx(GOLDEN_FROZEN_FPR95, abs=0.005)
    _report(
        f"ablation directionality: alpha=1 bit-equals dist; frozen fpr95 {frozen_fpr:.3f} > "
        f"full {full_fpr:.3f}"
    )


def test_determinism_bit_identical(default_bench):
    """Same seed, config, and bundle give byte-identical record streams."""
    result = default_bench
    cfg = DetectorConfig()
    first = run_stream(result.bank, result.stream, cfg).to_jsonl().encode()
    second = run_stream(result.bank, result.stream, cfg).to_jsonl().encode()
    assert first == second
    _report("determinism: byte-identical record streams across reruns")


def test_streaming_throughput():
    """At D=512, C=1000, N=70k, M=1000, batch 256: at least 500 samples/s."""
    rng = np.random.default_rng(99)
    d, c, n, t = 512, 1000, 70_000, 4096
    bank = LabelBank(
        id_names=[f"c{i}" for i in range(c)],
        id_embeds=EmbeddingMatrix(_unit(rng, c, d)),
        corpus_names=[f"w{i}" for i in range(n)],
        corpus_embeds=EmbeddingMatrix(_unit(rng, n, d)),
    )
    cfg = DetectorConfig()
    run_stream(bank, TestStream(features=EmbeddingMatrix(_unit(rng, 256, d))), cfg)  # warm caches
    stream = TestStream(features=EmbeddingMatrix(_unit(rng, t, d)))
    best = 0.0
    for _ in range(2):
        started = time.perf_counter()
        result = run_stream(bank, stream, cfg)
        rate = t / (time.perf_counter() - started)
        best = max(best, rate)
        assert len(result.records) == t
    assert best >= 500.0, f"best throughput {best:.0f} samples/s"
    _report(f"streaming throughput {best:.0f} samples/s (>= 500)")


def test_fpr_derivative_diagnostic_grid():
    """Sign matches sign(p1-p2) on the full grid; values match mpmath to 1e-9."""
    p_grid = np.linspace(0.05, 0.95, 20)
    m_grid = (1, 2, 5, 20, 50)
    lam_grid = (0.25, 0.5, 0.95)
    checked = 0
    with mpmath.workdps(60):
        for p1 in p_grid:
            for p2 in p_grid:
                for m in m_grid:
                    for lam in lam_grid:
                        got = fpr_derivative_sign(p1, p2, m, lam)
                        assert np.sign(got) == np.sign(p1 - p2)
                        q2 = mpmath.mpf(p2) * (1 - mpmath.mpf(p2))
                        z = mpmath.sqrt(mpmath.mpf(p1) * (1 - mpmath.mpf(p1)) / q2)
                        z *= mpmath.erfinv(2 * mpmath.mpf(lam) - 1)
                        z += mpmath.sqrt(m) * (mpmath.mpf(p1) - mpmath.mpf(p2)) / mpmath.sqrt(2 * q2)
                        expected = (
                            mpmath.e ** (-z * z)
                            / (2 * mpmath.sqrt(2 * mpmath.pi))
                            * (mpmath.mpf(p1) - mpmath.mpf(p2))
                            / mpmath.sqrt(m * q2)
                        )
                        if p1 != p2:
                            rel = abs(got - float(expected)) / abs(float(expected))
                            assert rel < 1e-9, f"rel {rel:.2e} at {p1},{p2},{m},{lam}"
                        checked += 1
    assert checked == 20 * 20 * 5 * 3
    _report(f"derivative diagnostic grid: {checked} points, sign and 1e-9 value checks")


@pytest.mark.skip(
    reason="published full-scale benchmark figures need real encoder features of "
    "ImageNet-scale datasets; produce a bundle with the exporter package and "
    "evaluate with the CLI to check them"
)
def test_published_benchmark_figures():
    pass
