"""Command line front end: extract --manifest m.jsonl --outdir feats/"""

import argparse
import sys

from . import backends, pipeline
from .errors import ManifestError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    parser = _Parser(prog="extract", description=__doc__)
    parser.add_argument("--manifest", required=True, help="JSONL of id/prompt/image")
    parser.add_argument("--outdir", required=True)
    parser.add_argument("--encoder", default="reference",
                        choices=sorted(backends.ENCODERS))
    parser.add_argument("--regressor", default="reference",
                        choices=sorted(backends.REGRESSORS))
    parser.add_argument("--dim", type=int, default=1024)
    parser.add_argument("--overlay", action="store_true",
                        help="also emit mesh-overlay image embeddings")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    if args.dim < 1:
        print("extract: error: --dim must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        result, paths = pipeline.extract(
            args.manifest, args.outdir, encoder_name=args.encoder,
            regressor_name=args.regressor, dim=args.dim,
            want_overlay=args.overlay)
    except (ManifestError, FileNotFoundError, ValueError) as exc:
        print(f"extract: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"extracted {len(result.txt)} ids, {len(result.rejects)} rejects "
          f"-> {args.outdir}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
