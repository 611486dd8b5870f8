"""Command-line wrapper: rcv-export --model M --layers L... --manifest F --out D."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import ExportError, ExportSpec, export_dumps


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcv-export",
        description="Dump per-layer activations and gradients of a trained model")
    parser.add_argument("--model", required=True,
                        help="TorchScript archive or pickled torch module")
    parser.add_argument("--layers", nargs="+", required=True,
                        help="named submodules whose outputs to capture")
    parser.add_argument("--manifest", required=True,
                        help="sample ids, one per line, in input row order")
    parser.add_argument("--inputs", required=True,
                        help="NPY file with one input row per manifest id")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--dtype", choices=("f4", "f8"), default="f4")
    parser.add_argument("--prefix", default="export")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(Path(args.model), list(args.layers), Path(args.manifest),
                      Path(args.inputs), Path(args.out),
                      batch_size=args.batch_size, dtype=args.dtype,
                      prefix=args.prefix)
    try:
        paths = export_dumps(spec)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
