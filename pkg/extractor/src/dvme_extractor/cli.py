"""Command line: extract embeddings to EMBX, verify EMBX files.

Exit codes follow the consumer toolkit's convention: 0 success, 2 usage or
configuration error, 3 data/format violation.
"""

import argparse
import sys

from .backbones import CheckpointError
from .embx import EmbxError, verify_format
from .extract import ExtractionJob, ManifestError, run_extraction


def cmd_extract(args):
    if len(args.model) != len(args.checkpoint):
        print("error: need one --checkpoint per --model", file=sys.stderr)
        return 2
    vit_options = {}
    if args.vit_patch_size is not None:
        vit_options["patch_size"] = args.vit_patch_size
    if args.vit_depth is not None:
        vit_options["depth"] = args.vit_depth
    if args.vit_last_blocks is not None:
        vit_options["last_blocks"] = args.vit_last_blocks
    jobs = [
        ExtractionJob(
            model_id=model,
            checkpoint=checkpoint,
            device=args.device,
            vit_options=vit_options if model == "dino" else {},
        )
        for model, checkpoint in zip(args.model, args.checkpoint)
    ]
    summary = run_extraction(jobs, args.manifest, args.out, batch_size=args.batch_size)
    dims = ",".join(f"{name}:{dim}" for name, dim in summary["sources"])
    print(
        f"wrote {args.out}: N={summary['samples']} sources={dims} "
        f"classes={summary['num_classes']}"
    )
    return 0


def cmd_verify(args):
    expect = None
    if args.expect_dims:
        expect = tuple(int(v) for v in args.expect_dims.split(","))
    violations = verify_format(args.path, expect_dims=expect)
    if violations:
        for violation in violations:
            print(f"violation: {violation}")
        return 3
    print(f"{args.path}: ok")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dvme-extract",
        description="Extract frozen-backbone embeddings from images into EMBX files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run one or more backbones over an image manifest")
    p.add_argument("--model", action="append", required=True,
                   choices=("simclr", "swav", "dino"))
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--manifest", required=True,
                   help="CSV/TSV of image path, label, optional group id")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--device", default="cpu")
    p.add_argument("--vit-patch-size", type=int, default=None)
    p.add_argument("--vit-depth", type=int, default=None)
    p.add_argument("--vit-last-blocks", type=int, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("verify", help="independent EMBX format check")
    p.add_argument("path")
    p.add_argument("--expect-dims", default=None, help="comma-separated dims to enforce")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ManifestError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EmbxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())
