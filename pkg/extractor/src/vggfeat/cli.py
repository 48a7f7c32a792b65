"""Command line wrapper around the extractor."""

from __future__ import annotations

import argparse
import json
import sys

from .extract import ExtractionJob, extract


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vggfeat",
        description=(
            "Extract 4096-dim VGG-16 fc7 features from every image in a "
            "directory into one binary feature file (record id = file stem, "
            "sorted). Fixed preprocessing: convert to RGB, bilinear resize "
            "to 224x224, scale to [0,1], normalize with ImageNet mean "
            "(0.485, 0.456, 0.406) and std (0.229, 0.224, 0.225)."
        ),
    )
    parser.add_argument("--images", required=True, help="directory of image files")
    parser.add_argument("--out", required=True, help="output .mmft path")
    parser.add_argument("--batch-size", type=int, default=8, help="images per forward pass (default 8)")
    parser.add_argument("--device", default="cpu", help="device hint, e.g. cpu or cuda (falls back to cpu)")
    parser.add_argument(
        "--weights",
        default=None,
        help="path to a torchvision vgg16 state dict; without it the network "
        "uses seeded random weights and the output is NOT ImageNet features",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for the random-weights fallback (default 0)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        job = ExtractionJob(
            images=args.images,
            out=args.out,
            batch_size=args.batch_size,
            device=args.device,
            weights=args.weights,
            seed=args.seed,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if job.weights is None:
        print(
            f"warning: no --weights given; using seeded random weights "
            f"(seed={job.seed}). Output is deterministic but these are not "
            f"ImageNet features.",
            file=sys.stderr,
        )
    try:
        summary = extract(job)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for entry in summary.skipped:
        print(f"warning: skipped {entry}", file=sys.stderr)
    json.dump(
        {
            "out": str(job.out),
            "written": summary.written,
            "skipped": len(summary.skipped),
            "random_weights": summary.used_random_weights,
        },
        sys.stdout,
        indent=2,
        sort_keys=True,
    )
    print()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
