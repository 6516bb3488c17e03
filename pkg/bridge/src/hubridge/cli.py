"""Command-line entry point for feature extraction.

One subcommand: extract. Reads a bridge job file, runs the pretrained
model over every audio row, and writes a corpus (manifest.jsonl plus
PBF1 feature files) the core pipeline loads unmodified. Rows that fail
are listed on stderr and skipped; exit codes: 0 success (possibly with
skipped rows), 2 validation, 3 I/O, 4 unexpected internal error.
"""

from __future__ import annotations

import argparse
import sys

from .bridgefmt import parse_bridge_manifest
from .errors import ValidationError
from .extract import extract

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTERNAL = 4


def _cmd_extract(args) -> int:
    manifest = parse_bridge_manifest(args.manifest)
    if args.checkpoint:
        manifest.checkpoint = args.checkpoint
    result = extract(manifest, args.out, layer=args.layer)
    for utterance_id, message in result.errors:
        print(f"skipped {utterance_id}: {message}", file=sys.stderr)
    if result.errors:
        print(
            f"skipped {len(result.errors)} of {len(manifest.rows)} rows",
            file=sys.stderr,
        )
    print(result.manifest_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hubridge",
        description="Pretrained-model feature extraction into PBF1 corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run the model over a bridge job file")
    p.add_argument("--manifest", required=True, help="bridge job JSON file")
    p.add_argument("--out", required=True, help="output directory for manifest + features")
    p.add_argument("--checkpoint", help="model checkpoint path or hub id "
                                        "(default: the manifest's checkpoint)")
    p.add_argument("--layer", type=int,
                   help="hidden layer to export, negative counts from the end "
                        "(default: the manifest's layer, else -1)")
    p.set_defaults(func=_cmd_extract)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
