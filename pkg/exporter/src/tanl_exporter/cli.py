"""Command-line entry point for the bundle exporter."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from tanl_exporter.export import DEFAULT_TEMPLATE, ExportSpec, export


def _id_classes(value: str) -> list[str]:
    """Comma-separated names, or @file with one name per line."""
    if value.startswith("@"):
        lines = Path(value[1:]).read_text(encoding="utf-8").splitlines()
        names = [line.strip() for line in lines if line.strip()]
    else:
        names = [name.strip() for name in value.split(",") if name.strip()]
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tanl-export",
        description="Encode an image folder and label vocabulary into a .tanlemb bundle",
    )
    parser.add_argument("--data-root", required=True, help="folder with one subdirectory per class")
    parser.add_argument(
        "--id-classes",
        required=True,
        help="comma-separated ID class names, or @file with one per line; "
        "matching subdirectories become ID samples, others OOD",
    )
    parser.add_argument("--corpus-file", required=True, help="candidate label vocabulary, one per line")
    parser.add_argument("--out", required=True)
    parser.add_argument("--template", default=DEFAULT_TEMPLATE, help="prompt with one <label> placeholder")
    parser.add_argument("--encoder", default="hash:64", help="hash:<dim> or clip:<checkpoint>")
    parser.add_argument("--noise-count", type=int, default=300)
    parser.add_argument("--noise-seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        dataset_root=args.data_root,
        id_class_names=_id_classes(args.id_classes),
        corpus_file=args.corpus_file,
        output_path=args.out,
        template=args.template,
        encoder=args.encoder,
        noise_count=args.noise_count,
        noise_seed=args.noise_seed,
    )
    try:
        summary = export(spec)
    except (ValueError, RuntimeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
