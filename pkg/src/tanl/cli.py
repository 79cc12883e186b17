"""Command-line surface: synth, mine, detect, eval, ablate, analyze.

Configs are flat ``key = value`` text files mirroring
:class:`~tanl.detector.DetectorConfig`; CLI flags override file values.
Every run prints a resolved-config block and, when an output path is
given, writes the same block to a ``<out>.config`` sidecar so results
are reproducible from artifacts alone. All subcommands exit nonzero on
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from tanl import __version__
from tanl.activation import oracle_act_d
from tanl.bundle import BundleError, LoadedBundle, TestStream, load_bundle, save_bundle
from tanl.detector import DetectorConfig, ScoreRecord, run_baseline, run_stream
from tanl.metrics import evaluate, fpr_at_tpr, roc_points
from tanl.mining import mine_activated, mine_baseline
from tanl.memory import init_queues
from tanl.scoring import nl_scores_from_sims
from tanl.synth import SynthSpec, generate

ABLATION_PARAMETERS = (
    "M",
    "alpha",
    "g",
    "L",
    "batch_size",
    "gamma",
    "order",
    "early_error_rate",
    "test_count",
)
ORDER_MODES = ("shuffled", "id_first", "ood_first", "sequential")
PREFIX_KS = (10, 50, 100, 500, 1000)


def parse_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment; blanks ignored."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
            key, value = text.split("=", 1)
            mapping[key.strip()] = value.strip()
    return mapping


def resolved_config_text(config: DetectorConfig) -> str:
    lines = [f"{key} = {value}" for key, value in config.to_mapping().items()]
    return "\n".join(lines) + "\n"


def _echo_config(config: DetectorConfig, out_path: str | None) -> None:
    text = resolved_config_text(config)
    sys.stdout.write("# resolved config\n" + text)
    if out_path:
        with open(str(out_path) + ".config", "w", encoding="utf-8") as fh:
            fh.write(text)


def _build_config(args) -> DetectorConfig:
    mapping = parse_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {
        "num_negatives": getattr(args, "num_negatives", None),
        "queue_capacity": getattr(args, "queue_capacity", None),
        "gap": getattr(args, "gap", None),
        "alpha": getattr(args, "alpha", None),
        "tau": getattr(args, "tau", None),
        "batch_size": getattr(args, "batch_size", None),
        "gamma": getattr(args, "gamma", None),
        "score_variant": getattr(args, "score", None),
        "activation_metric": getattr(args, "activation", None),
        "blend": getattr(args, "blend", None),
        "seed": getattr(args, "seed", None),
        "early_error_rate": getattr(args, "early_error_rate", None),
    }
    for key, value in overrides.items():
        if value is not None:
            mapping[key] = value
    if getattr(args, "freeze_after_init", False):
        mapping["freeze_after_init"] = True
    if getattr(args, "low_memory", False):
        mapping["low_memory"] = True
    return DetectorConfig.from_mapping(mapping)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("-M", "--num-negatives", type=int, dest="num_negatives")
    parser.add_argument("-L", "--queue-capacity", type=int, dest="queue_capacity")
    parser.add_argument("-g", "--gap", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--gamma", help="'dynamic' or 'fixed:<v>'")
    parser.add_argument("--score", choices=("nl", "aa", "ew1", "ew2"))
    parser.add_argument("--activation", choices=("softmax", "cosine"))
    parser.add_argument("--blend", choices=("batch", "dist"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--early-error-rate", type=float, dest="early_error_rate")
    parser.add_argument("--freeze-after-init", action="store_true")
    parser.add_argument("--low-memory", action="store_true")


def cmd_synth(args) -> int:
    spec = SynthSpec(
        dim=args.dim,
        id_clusters=args.id_clusters,
        corpus_size=args.corpus_size,
        k_activated=args.k_activated,
        ood_clusters=args.ood_clusters,
        samples_per_cluster=args.samples_per_cluster,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    result = generate(spec)
    save_bundle(args.out, result.bank, result.stream)
    spec_lines = "\n".join(f"{k} = {v}" for k, v in vars(spec).items())
    sys.stdout.write("# resolved synth spec\n" + spec_lines + "\n")
    with open(str(args.out) + ".config", "w", encoding="utf-8") as fh:
        fh.write(spec_lines + "\n")
    sys.stdout.write(
        f"wrote {args.out}: {result.stream.count} test samples, "
        f"{result.bank.num_id} ID labels, {result.bank.num_corpus} corpus labels\n"
    )
    return 0


def cmd_mine(args) -> int:
    bundle = load_bundle(args.bundle)
    config = _build_config(args)
    if args.variant == "baseline":
        mined = mine_baseline(bundle.bank, config.num_negatives, config.baseline_percentile)
    else:
        qinit = init_queues(
            bundle.bank,
            capacity=config.queue_capacity,
            tau=config.tau,
            seed=config.seed,
            noise_features=bundle.noise_features,
            row_kind=config.activation_metric,
        )
        act_diff = qinit.neg.mean() - qinit.pos.mean()
        mined = mine_activated(act_diff[bundle.bank.num_id :], config.num_negatives)
    payload = {
        "variant": mined.variant,
        "M": len(mined),
        "labels": [
            {
                "rank": rank + 1,
                "corpus_index": int(idx),
                "name": bundle.bank.corpus_names[int(idx)],
                "score": float(score),
            }
            for rank, (idx, score) in enumerate(zip(mined.indices, mined.scores))
        ],
    }
    _echo_config(config, args.out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    else:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def _run_method(bundle: LoadedBundle, config: DetectorConfig, method: str):
    stream = bundle.stream
    if method == "baseline":
        return run_baseline(bundle.bank, stream, config, bundle.noise_features)
    return run_stream(bundle.bank, stream, config, bundle.noise_features)


def cmd_detect(args) -> int:
    bundle = load_bundle(args.bundle)
    config = _build_config(args)
    _echo_config(config, args.out)
    started = time.perf_counter()
    result = _run_method(bundle, config, args.method)
    elapsed = time.perf_counter() - started
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(result.to_jsonl())
    rate = len(result.records) / elapsed if elapsed > 0 else float("inf")
    sys.stdout.write(
        f"scored {len(result.records)} samples in {elapsed:.2f}s ({rate:.0f}/s) -> {args.out}\n"
    )
    return 0


def cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    if bundle.stream.gt_domain is None:
        raise ValueError("bundle has no gt_domain section; cannot evaluate")
    with open(args.records, "r", encoding="utf-8") as fh:
        records = [ScoreRecord.from_json_line(line) for line in fh if line.strip()]
    if len(records) != bundle.stream.count:
        raise ValueError(
            f"{len(records)} records vs {bundle.stream.count} test samples in the bundle"
        )
    order = np.argsort([r.index for r in records])
    scores = np.array([records[i].score for i in order])
    preds = np.array([records[i].pred_class for i in order])
    report = evaluate(
        scores,
        bundle.stream.gt_domain,
        pred_class=preds,
        gt_class=bundle.stream.gt_class,
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    sys.stdout.write(report.to_json() + "\n")
    if args.roc_csv:
        thresholds, tpr, fpr = roc_points(scores, bundle.stream.gt_domain)
        with open(args.roc_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "tpr", "fpr"])
            writer.writerows(zip(thresholds, tpr, fpr))
    return 0


@dataclass
class AblationPlan:
    parameter: str
    values: list[str]
    repetitions: int = 1
    base_seed: int = 0

    def validate(self) -> None:
        if self.parameter not in ABLATION_PARAMETERS:
            raise ValueError(f"parameter must be one of {ABLATION_PARAMETERS}")
        if not self.values:
            raise ValueError("value grid must be nonempty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.parameter == "order":
            for v in self.values:
                if v not in ORDER_MODES:
                    raise ValueError(f"order values must be in {ORDER_MODES}, got {v!r}")


def _merge_streams(bundles: list[LoadedBundle]) -> tuple[LoadedBundle, None]:
    first = bundles[0]
    for other in bundles[1:]:
        if other.bank.id_names != first.bank.id_names:
            raise ValueError("all bundles in a sequential ablation must share the ID label set")
    feats = np.vstack([b.stream.features.data for b in bundles])
    gt_domain = (
        np.concatenate([b.stream.gt_domain for b in bundles])
        if all(b.stream.gt_domain is not None for b in bundles)
        else None
    )
    gt_class = (
        np.concatenate([b.stream.gt_class for b in bundles])
        if all(b.stream.gt_class is not None for b in bundles)
        else None
    )
    merged = LoadedBundle(
        bank=first.bank,
        stream=TestStream(
            features=type(first.stream.features)(feats), gt_domain=gt_domain, gt_class=gt_class
        ),
        noise_features=first.noise_features,
    )
    return merged, None


def _reorder(stream: TestStream, mode: str, seed: int) -> TestStream:
    if stream.gt_domain is None and mode in ("id_first", "ood_first"):
        raise ValueError(f"order mode {mode!r} needs gt_domain")
    n = stream.count
    if mode == "sequential":
        order = np.arange(n)
    elif mode == "shuffled":
        order = np.random.default_rng(seed).permutation(n)
    else:
        is_id = stream.gt_domain
        first = np.flatnonzero(is_id) if mode == "id_first" else np.flatnonzero(~is_id)
        second = np.flatnonzero(~is_id) if mode == "id_first" else np.flatnonzero(is_id)
        order = np.concatenate([first, second])
    return TestStream(
        features=type(stream.features)(stream.features.data[order]),
        gt_domain=None if stream.gt_domain is None else stream.gt_domain[order],
        gt_class=None if stream.gt_class is None else stream.gt_class[order],
    )


def _truncate(stream: TestStream, count: int) -> TestStream:
    count = min(count, stream.count)
    return TestStream(
        features=type(stream.features)(stream.features.data[:count]),
        gt_domain=None if stream.gt_domain is None else stream.gt_domain[:count],
        gt_class=None if stream.gt_class is None else stream.gt_class[:count],
    )


def _ablate_point(task) -> dict:
    bundle_paths, plan_parameter, value, rep, base_config_map = task
    bundles = [load_bundle(p) for p in bundle_paths]
    bundle, _ = _merge_streams(bundles) if len(bundles) > 1 else (bundles[0], None)
    config = DetectorConfig.from_mapping(base_config_map)
    config = config.with_overrides(seed=config.seed + rep)
    stream = bundle.stream

    if plan_parameter == "M":
        config = config.with_overrides(num_negatives=int(value))
    elif plan_parameter == "alpha":
        config = config.with_overrides(alpha=float(value))
    elif plan_parameter == "g":
        config = config.with_overrides(gap=float(value))
    elif plan_parameter == "L":
        config = config.with_overrides(queue_capacity=int(value))
    elif plan_parameter == "batch_size":
        config = config.with_overrides(batch_size=int(value))
    elif plan_parameter == "gamma":
        config = config.with_overrides(gamma=value)
    elif plan_parameter == "early_error_rate":
        config = config.with_overrides(early_error_rate=float(value))
    elif plan_parameter == "order":
        stream = _reorder(stream, value, seed=config.seed)
    elif plan_parameter == "test_count":
        stream = _reorder(stream, "shuffled", seed=config.seed)
        stream = _truncate(stream, int(value))

    result = run_stream(bundle.bank, stream, config, bundle.noise_features)
    row = {"parameter": plan_parameter, "value": value, "rep": rep, "samples": stream.count}
    if stream.gt_domain is not None:
        report = evaluate(result.scores(), stream.gt_domain, result.pred_classes(), stream.gt_class)
        row.update(auroc=report.auroc, fpr95=report.fpr95, id_acc=report.id_acc)
    return row


def cmd_ablate(args) -> int:
    plan = AblationPlan(
        parameter=args.param,
        values=[v.strip() for v in args.values.split(",") if v.strip()],
        repetitions=args.reps,
        base_seed=args.seed or 0,
    )
    plan.validate()
    base_map = parse_config_file(args.config) if args.config else {}
    if args.seed is not None:
        base_map["seed"] = args.seed
    config = DetectorConfig.from_mapping(base_map)
    _echo_config(config, args.out)

    tasks = [
        (tuple(args.bundle), plan.parameter, value, rep, config.to_mapping())
        for value in plan.values
        for rep in range(plan.repetitions)
    ]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(_ablate_point, tasks))
    else:
        rows = [_ablate_point(t) for t in tasks]

    # Mean row per grid value, when metrics are present.
    all_rows = list(rows)
    for value in plan.values:
        group = [r for r in rows if r["value"] == value and "auroc" in r]
        if group:
            all_rows.append(
                {
                    "parameter": plan.parameter,
                    "value": value,
                    "rep": "mean",
                    "samples": group[0]["samples"],
                    "auroc": float(np.mean([r["auroc"] for r in group])),
                    "fpr95": float(np.mean([r["fpr95"] for r in group])),
                    "id_acc": None,
                }
            )
    fieldnames = ["parameter", "value", "rep", "samples", "auroc", "fpr95", "id_acc"]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in all_rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})
    sys.stdout.write(f"wrote {len(all_rows)} rows -> {args.out}\n")
    return 0


def cmd_analyze(args) -> int:
    bundle = load_bundle(args.bundle)
    stream = bundle.stream
    if stream.gt_domain is None:
        raise ValueError("analyze needs gt_domain in the bundle")
    config = _build_config(args)
    _echo_config(config, args.out_prefix)

    id_feats = stream.features.data[stream.gt_domain]
    ood_feats = stream.features.data[~stream.gt_domain]
    report = oracle_act_d(bundle.bank, id_feats, ood_feats, config.tau)

    act_path = f"{args.out_prefix}_activation.csv"
    with open(act_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label_name", "act_ood", "act_id", "act_d", "rank"])
        for rank, idx in enumerate(report.ranking, start=1):
            writer.writerow(
                [
                    bundle.bank.corpus_names[int(idx)],
                    f"{report.act_ood[idx]:.9g}",
                    f"{report.act_id[idx]:.9g}",
                    f"{report.act_diff[idx]:.9g}",
                    rank,
                ]
            )

    # FPR95 of the plain negative-label score restricted to the top-k
    # oracle-ranked labels, for growing prefixes of the ranking.
    n = bundle.bank.num_corpus
    ks = sorted({k for k in PREFIX_KS if k <= n} | {n})
    id_sims = stream.features.data @ bundle.bank.id_embeds.data.T
    corpus_sims = stream.features.data @ bundle.bank.corpus_embeds.data.T
    prefix_path = f"{args.out_prefix}_prefix_fpr.csv"
    with open(prefix_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["top_k", "fpr95"])
        for k in ks:
            neg_sims = corpus_sims[:, report.ranking[:k]]
            scores = nl_scores_from_sims(id_sims, neg_sims, config.tau)
            writer.writerow([k, f"{fpr_at_tpr(scores, stream.gt_domain):.9g}"])
    sys.stdout.write(f"wrote {act_path} and {prefix_path}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tanl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=SynthSpec.dim)
    p.add_argument("--id-clusters", type=int, default=SynthSpec.id_clusters)
    p.add_argument("--corpus-size", type=int, default=SynthSpec.corpus_size)
    p.add_argument("--k-activated", type=int, default=SynthSpec.k_activated)
    p.add_argument("--ood-clusters", type=int, default=SynthSpec.ood_clusters)
    p.add_argument("--samples-per-cluster", type=int, default=SynthSpec.samples_per_cluster)
    p.add_argument("--noise-std", type=float, default=SynthSpec.noise_std)
    p.add_argument("--seed", type=int, default=SynthSpec.seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine", help="mine negative labels from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--variant", choices=("baseline", "activated"), default="baseline")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("detect", help="run the detector over a bundle's test stream")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="output JSONL of score records")
    p.add_argument("--method", choices=("stream", "baseline"), default="stream")
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="evaluate score records against bundle ground truth")
    p.add_argument("--bundle", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out")
    p.add_argument("--roc-csv", dest="roc_csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one parameter over a value grid")
    p.add_argument("--bundle", action="append", required=True, help="repeatable")
    p.add_argument("--param", required=True, choices=ABLATION_PARAMETERS)
    p.add_argument("--values", required=True, help="comma-separated grid")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="ground-truth activation report and prefix FPR curve")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out-prefix", required=True, dest="out_prefix")
    _add_config_flags(p)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BundleError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
