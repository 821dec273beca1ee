"""Command-line entry point mirroring ExportSpec."""

from __future__ import annotations

import argparse
import sys

from .export import ExporterError, ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hopcl-export",
        description="Export frozen token embeddings from a pretrained encoder "
                    "to a HOPD split file")
    parser.add_argument("--model", required=True,
                        help="pretrained encoder identifier or local directory")
    parser.add_argument("--input", required=True, help="text file, one sample per line")
    parser.add_argument("--labels", required=True, help="label file, one integer per line")
    parser.add_argument("--out", required=True, help="output .hopd path")
    parser.add_argument("--name", default="exported", help="dataset name in the manifest")
    parser.add_argument("--split", default="train", choices=["train", "val", "test"])
    parser.add_argument("--channels", type=int, default=768,
                        help="expected encoder hidden size")
    parser.add_argument("--max-len", type=int, default=128, help="token cap per sample")
    parser.add_argument("--layer", type=int, default=-1,
                        help="hidden-state layer to export (-1 = last)")
    parser.add_argument("--pair-separator", default=None,
                        help="split each line into a concatenated pair on this string")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--n-classes", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        model_name=args.model, input_path=args.input, labels_path=args.labels,
        out_path=args.out, name=args.name, split=args.split,
        channels=args.channels, max_len=args.max_len, layer=args.layer,
        pair_separator=args.pair_separator, batch_size=args.batch_size,
        n_classes=args.n_classes)
    try:
        result = export(spec)
    except ExporterError as exc:
        print(f"error:export:{exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io:{exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.path} ({result.count} samples, Q={result.channels}, "
          f"{result.skipped} skipped, {result.truncated} truncated)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
