"""Command-line front end: export embeddings, verify an export."""

from __future__ import annotations

import argparse
import json
import sys

from .emb1 import Emb1FormatError
from .export import (
    DatasetFormatError,
    EncoderUnavailableError,
    export_embeddings,
    verify_export,
)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_DATA = 3


def cmd_export(args) -> int:
    manifest = export_embeddings(args.data, args.encoder_id, args.out,
                                 max_length=args.max_length)
    print(json.dumps(manifest.to_json_dict()))
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify_export(args.emb, args.data)
    print(json.dumps(report.to_json_dict()))
    return EXIT_OK if report.ok else EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embexport")
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export", help="embed every dataset utterance into an EMB1 file")
    p_exp.add_argument("--data", required=True, help="dataset JSON")
    p_exp.add_argument("--encoder-id", dest="encoder_id", required=True,
                       help="model name or local directory")
    p_exp.add_argument("--out", required=True, help="EMB1 output path")
    p_exp.add_argument("--max-length", dest="max_length", type=int, default=None)
    p_exp.set_defaults(func=cmd_export)

    p_ver = sub.add_parser("verify", help="check an EMB1 file against a dataset")
    p_ver.add_argument("--emb", required=True)
    p_ver.add_argument("--data", required=True)
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DatasetFormatError, Emb1FormatError, EncoderUnavailableError,
            FileNotFoundError) as exc:
        print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
