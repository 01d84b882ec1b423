"""`teacher-export` command line entry point."""

import argparse
import logging
import sys

from .export import (ExportError, ExportJob, export_embeddings,
                     load_manifest, read_vocab)
from .model import DEFAULT_MODEL_ID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="teacher-export",
        description="Export object-crop and class-prompt embeddings to the "
                    "teacher interchange JSON format")
    p.add_argument("--frames", required=True,
                   help="frame manifest JSON (see README for the schema)")
    p.add_argument("--vocab", required=True,
                   help="class vocabulary JSON ({'classes': [...]})")
    p.add_argument("--out", required=True, help="output interchange path")
    p.add_argument("--model", default=DEFAULT_MODEL_ID,
                   help=f"packaged model id (default {DEFAULT_MODEL_ID})")
    p.add_argument("--quiet", action="store_true",
                   help="suppress the summary line (warnings still print)")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        from pathlib import Path
        job = ExportJob(frames=load_manifest(args.frames),
                        vocab=read_vocab(args.vocab),
                        out=Path(args.out), model_id=args.model)
        summary = export_embeddings(job)
    except (ExportError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if not args.quiet:
        print(f"exported {summary['objects']} object embeddings "
              f"({summary['skipped']} skipped) and {summary['prompts']} "
              f"prompts at dim {summary['dim']} "
              f"[{summary['model_id']}] -> {summary['out']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
