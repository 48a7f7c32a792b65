"""Command-line interface.

Subcommands: train, caption, eval, retrieve, params. Commands print
machine output to stdout (JSON, or JSON Lines for `caption`); progress
and diagnostics go to stderr; `--table` on eval/retrieve/params swaps
in an aligned human-readable table. Exit codes: 0 on success, 1 when
input data or files are bad, 2 for usage errors.

Options can come from a config file of `key=value` lines (keys are the
long option names; `#` starts a comment). Precedence is command line
over config file over built-in defaults.

Commands that score many pairs fan work across threads; the
MMGRU_THREADS environment variable caps the worker count.

Train writes a run manifest next to the checkpoint: the resolved
config, SHA-256 of every input file, the seed, wall-clock time, and
final metrics. The checkpoint itself contains none of that, so two
runs from the same seed produce byte-identical model files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone

from . import dataset as ds
from . import metrics as mx
from . import report as rp
from . import retrieval as rv
from .decode import DecodeConfig, generate
from .errors import DataError, FormatError
from .gru import StackKind, param_count
from .linalg import Rng
from .model import ModelParams, TrainConfig, load_checkpoint, save_checkpoint, sgd_epoch


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _emit_table(rows: list[list], header: list[str]) -> None:
    widths = [max(len(str(cell)) for cell in column) for column in zip(header, *rows)]
    line = "  ".join(str(cell).ljust(w) for cell, w in zip(header, widths))
    print(line)
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)))


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _threads() -> int:
    limit = min(4, os.cpu_count() or 1)
    env = os.environ.get("MMGRU_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise DataError(f"MMGRU_THREADS must be an integer, got {env!r}")
        if cap < 1:
            raise DataError(f"MMGRU_THREADS must be at least 1, got {cap}")
        limit = min(limit, cap)
    return max(1, limit)


def _read_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, config file, and explicit flags, in that order."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        file_values = _read_config_file(config_path)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise DataError(f"{config_path}: unknown config keys {sorted(unknown)}")
        for key, raw in file_values.items():
            default = defaults[key]
            if isinstance(default, bool):
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise DataError(f"{config_path}: {key} must be true/false, got {raw!r}")
                merged[key] = raw.lower() in ("true", "1")
            elif isinstance(default, int) and not isinstance(default, bool):
                merged[key] = int(raw)
            elif isinstance(default, float) or default is None:
                merged[key] = float(raw)
            else:
                merged[key] = raw
    for key in defaults:
        flag_value = getattr(args, key, argparse.SUPPRESS)
        if flag_value is not argparse.SUPPRESS:
            merged[key] = flag_value
    return merged


def _load_ckpt_and_features(ckpt_path, features_path):
    params, vocab = load_checkpoint(ckpt_path)
    features = ds.load_features(features_path)
    dims = {vec.shape[0] for vec in features.values()}
    if dims and dims != {params.d_img}:
        raise FormatError(
            f"{features_path}: feature dim {sorted(dims)} does not match checkpoint d_img {params.d_img}"
        )
    return params, vocab, features


_TRAIN_DEFAULTS = {
    "hidden": 256,
    "epochs": 1,
    "learning_rate": 1e-2,
    "l2_lambda": 1e-4,
    "seed": 0,
    "stack": "single",
    "layers": None,
    "min_count": 5,
    "init_scale": 0.1,
    "max_grad_norm": None,
}


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _TRAIN_DEFAULTS)
    stack = StackKind(cfg["stack"])
    want_layers = 1 if stack == StackKind.SINGLE else 2
    if cfg["layers"] is not None and int(cfg["layers"]) != want_layers:
        args.parser.error(f"--layers {cfg['layers']} conflicts with --stack {stack.value} ({want_layers} layer(s))")
    cfg["layers"] = want_layers
    started = time.monotonic()
    started_utc = datetime.now(timezone.utc).isoformat(timespec="seconds")
    features = ds.load_features(args.features)
    entries = ds.read_caption_file(args.captions)
    vocab = ds.build_vocab_from_captions(entries, min_count=cfg["min_count"])
    data = ds.load_captions(args.captions, features, vocab)
    if not data.records:
        raise DataError("no training records after joining features and captions")
    train_cfg = TrainConfig(
        learning_rate=cfg["learning_rate"],
        l2_lambda=cfg["l2_lambda"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        hidden_size=cfg["hidden"],
        init_scale=cfg["init_scale"],
        max_grad_norm=cfg["max_grad_norm"],
    )
    rng = Rng(train_cfg.seed)
    params = ModelParams.init(
        rng, data.feature_dim, train_cfg.hidden_size, len(vocab), stack=stack, scale=train_cfg.init_scale
    )
    losses = []
    for epoch in range(1, train_cfg.epochs + 1):
        params, mean_loss = sgd_epoch(params, data, train_cfg, rng)
        losses.append(mean_loss)
        _progress(f"epoch {epoch}/{train_cfg.epochs} mean_loss={mean_loss:.6f}")
    save_checkpoint(params, vocab, args.out)
    wall = time.monotonic() - started
    manifest = {
        "command": "train",
        "config": {**cfg, "features": str(args.features), "captions": str(args.captions), "out": str(args.out)},
        "inputs": {str(args.features): _sha256(args.features), str(args.captions): _sha256(args.captions)},
        "seed": train_cfg.seed,
        "started_utc": started_utc,
        "wall_clock_s": round(wall, 3),
        "results": {
            "epochs": train_cfg.epochs,
            "final_loss": losses[-1] if losses else None,
            "vocab_size": len(vocab),
            "records": len(data.records),
            "pairs": data.num_pairs(),
        },
    }
    manifest_path = str(args.out) + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    payload = {
        "out": str(args.out),
        "manifest": manifest_path,
        "losses": losses,
        "final_loss": losses[-1] if losses else None,
        "vocab_size": len(vocab),
    }
    if args.report_dir:
        payload["report_files"] = rp.train_report(args.report_dir, losses)
    _emit(payload)
    return 0


def cmd_caption(args: argparse.Namespace) -> int:
    params, vocab, features = _load_ckpt_and_features(args.ckpt, args.features)
    if args.ids:
        wanted = [s for s in args.ids.split(",") if s]
        missing = [i for i in wanted if i not in features]
        if missing:
            raise DataError(f"no feature vector for image ids {missing[:5]}")
    else:
        wanted = sorted(features)
    decode_cfg = DecodeConfig(max_len=args.max_len, forbid_unk=not args.allow_unk)
    for image_id in wanted:
        words = generate(params, vocab, features[image_id], decode_cfg)
        json.dump({"id": image_id, "caption": " ".join(words)}, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
    return 0


_METRIC_CHOICES = ("bleu", "meteor", "cider")


def cmd_eval(args: argparse.Namespace) -> int:
    which = [m for m in args.metrics.split(",") if m]
    unknown = set(which) - set(_METRIC_CHOICES)
    if unknown:
        args.parser.error(f"--metrics accepts {','.join(_METRIC_CHOICES)}; unknown: {sorted(unknown)}")
    if args.pairs:
        if args.ckpt or args.features or args.captions:
            args.parser.error("--pairs replaces --ckpt/--features/--captions; give one or the other")
        ids, hyps, refs = mx.read_pairs_file(args.pairs)
    else:
        if not (args.ckpt and args.features and args.captions):
            args.parser.error("eval needs --ckpt, --features and --captions (or --pairs)")
        params, vocab, features = _load_ckpt_and_features(args.ckpt, args.features)
        entries = ds.read_caption_file(args.captions)
        decode_cfg = DecodeConfig(max_len=args.max_len, forbid_unk=True)
        ids, hyps, refs = [], [], []
        for image_id, sentences in entries:
            if image_id not in features:
                raise DataError(f"no feature vector for image id {image_id!r}")
            ids.append(image_id)
            hyps.append(generate(params, vocab, features[image_id], decode_cfg))
            refs.append([ds.normalize_text(s) for s in sentences])
    payload: dict = {"ids": ids, "flags": []}
    names: list[str] = []
    values: list[float] = []
    per_image_rows: list[list] = []
    if "bleu" in which:
        bleu_out = mx.bleu_scores(hyps, refs)
        payload["bleu"] = {f"b{n}": s for n, s in enumerate(bleu_out["scores"], start=1)}
        payload["bleu_precisions"] = bleu_out["precisions"]
        payload["brevity_penalty"] = bleu_out["brevity_penalty"]
        if bleu_out["zero_orders"]:
            payload["flags"].append(
                "bleu_zero_precision_orders=" + ",".join(str(n) for n in bleu_out["zero_orders"])
            )
        names += [f"B-{n}" for n in range(1, 5)]
        values += bleu_out["scores"]
    if "meteor" in which:
        sentence_scores = []
        greedy_ids = []
        for image_id, hyp, group in zip(ids, hyps, refs):
            score, info = mx.meteor_sentence(hyp, group)
            sentence_scores.append(score)
            if info["any_greedy"]:
                greedy_ids.append(image_id)
        if greedy_ids:
            payload["flags"].append("meteor_greedy_alignment=" + ",".join(greedy_ids[:10]))
        payload["meteor"] = sum(sentence_scores) / len(sentence_scores)
        names.append("METEOR")
        values.append(payload["meteor"])
        per_image_rows += [[i, "meteor", s] for i, s in zip(ids, sentence_scores)]
    if "cider" in which:
        cider_corpus, cider_each = mx.cider(hyps, refs)
        payload["cider"] = cider_corpus
        names.append("CIDEr")
        values.append(cider_corpus)
        per_image_rows += [[i, "cider", s] for i, s in zip(ids, cider_each)]
    if args.report_dir:
        payload["report_files"] = rp.eval_report(args.report_dir, names, values, per_image_rows)
    if args.table:
        _emit_table([[n, f"{v:.4f}"] for n, v in zip(names, values)], ["metric", "value"])
    else:
        _emit(payload)
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    params, vocab, features = _load_ckpt_and_features(args.ckpt, args.features)
    data = ds.load_captions(args.captions, features, vocab)
    ks = sorted({int(k) for k in args.k.split(",") if k})
    if not ks or any(k < 1 for k in ks):
        args.parser.error(f"--k must list positive integers, got {args.k!r}")
    directions = list(rv.DIRECTIONS) if args.direction == "both" else [args.direction]
    matrix, image_ids, entries = rv.score_matrix(params, data, normalize=not args.raw_scores, threads=_threads())
    payload: dict = {"median_mode": args.median_mode, "normalized_scores": not args.raw_scores}
    summary_rows = []
    results_by_direction = {}
    for direction in directions:
        ranked = rv.rank_from_matrix(matrix, image_ids, entries, direction)
        results_by_direction[direction] = ranked
        recalls = {str(k): rv.recall_at_k(ranked, k) for k in ks}
        med = rv.median_rank(ranked, mode=args.median_mode)
        payload[direction] = {"queries": len(ranked), "recall": recalls, "median_rank": med}
        summary_rows.extend([[direction, f"R@{k}", recalls[str(k)]] for k in ks])
        summary_rows.append([direction, f"Med-r ({args.median_mode})", med])
    if args.report_dir:
        payload["report_files"] = rp.retrieval_report(args.report_dir, results_by_direction, summary_rows)
    if args.table:
        _emit_table([[d, m, f"{v:.4f}"] for d, m, v in summary_rows], ["direction", "metric", "value"])
    else:
        _emit(payload)
    return 0


def cmd_params(args: argparse.Namespace) -> int:
    hiddens = sorted({int(h) for h in args.hidden.split(",") if h})
    if not hiddens or any(h < 1 for h in hiddens):
        args.parser.error(f"--hidden must list positive integers, got {args.hidden!r}")
    rows = []
    for h in hiddens:
        d_in = args.d_in if args.d_in else h
        rows.append(
            {
                "hidden": h,
                "d_in": d_in,
                "gru": param_count("gru", d_in, h),
                "lstm": param_count("lstm", d_in, h),
                "gru_2layer_conventional": param_count("gru", d_in, h, StackKind.CONVENTIONAL),
                "gru_2layer_feedback": param_count("gru", d_in, h, StackKind.FEEDBACK),
            }
        )
    if args.table:
        header = ["hidden", "gru", "lstm", "gru_2layer_conventional", "gru_2layer_feedback"]
        _emit_table([[row[k] for k in header] for row in rows], header)
    else:
        _emit({"params": rows})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmgru", description="Multimodal GRU captioning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a caption model from features and captions")
    train.add_argument("--features", required=True, help="MMFT feature file")
    train.add_argument("--captions", required=True, help="caption file (JSON lines)")
    train.add_argument("--out", required=True, help="checkpoint path to write")
    train.add_argument("--config", help="key=value config file")
    train.add_argument("--report-dir", help="directory for loss table and figure")
    train.add_argument("--hidden", type=int, default=argparse.SUPPRESS)
    train.add_argument("--epochs", type=int, default=argparse.SUPPRESS)
    train.add_argument("--learning-rate", type=float, default=argparse.SUPPRESS)
    train.add_argument("--l2-lambda", type=float, default=argparse.SUPPRESS)
    train.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    train.add_argument("--stack", choices=[k.value for k in StackKind], default=argparse.SUPPRESS)
    train.add_argument("--layers", type=int, choices=[1, 2], default=argparse.SUPPRESS,
                       help="layer count; must agree with --stack")
    train.add_argument("--min-count", type=int, default=argparse.SUPPRESS)
    train.add_argument("--init-scale", type=float, default=argparse.SUPPRESS)
    train.add_argument("--max-grad-norm", type=float, default=argparse.SUPPRESS)
    train.set_defaults(func=cmd_train)

    caption = sub.add_parser("caption", help="greedy captions for image features (JSON lines)")
    caption.add_argument("--ckpt", required=True, help="checkpoint file")
    caption.add_argument("--features", required=True, help="MMFT feature file")
    caption.add_argument("--ids", help="comma-separated image ids (default: all, sorted)")
    caption.add_argument("--max-len", type=int, default=30)
    caption.add_argument("--allow-unk", action="store_true", help="let the decoder emit the unknown token")
    caption.set_defaults(func=cmd_caption)

    ev = sub.add_parser("eval", help="caption metrics for a model or a pairs file")
    ev.add_argument("--ckpt", help="checkpoint file")
    ev.add_argument("--features", help="MMFT feature file")
    ev.add_argument("--captions", help="caption file with reference sentences")
    ev.add_argument("--pairs", help="precomputed {id, hyp, refs} JSON lines")
    ev.add_argument("--metrics", default="bleu,meteor,cider", help="comma-separated subset to compute")
    ev.add_argument("--max-len", type=int, default=30)
    ev.add_argument("--report-dir", help="directory for metric tables and figure")
    ev.add_argument("--table", action="store_true", help="human-readable table instead of JSON")
    ev.set_defaults(func=cmd_eval)

    retrieve = sub.add_parser("retrieve", help="rank images against captions both ways")
    retrieve.add_argument("--ckpt", required=True, help="checkpoint file")
    retrieve.add_argument("--features", required=True, help="MMFT feature file")
    retrieve.add_argument("--captions", required=True, help="caption file defining the candidate pool")
    retrieve.add_argument("--direction", choices=[*rv.DIRECTIONS, "both"], default="both")
    retrieve.add_argument("--k", default="1,5,10", help="comma-separated recall cutoffs")
    retrieve.add_argument("--median-mode", choices=list(rv.MEDIAN_MODES), default="per-query")
    retrieve.add_argument("--raw-scores", action="store_true", help="rank by unnormalized log probability")
    retrieve.add_argument("--report-dir", help="directory for rank table and figure")
    retrieve.add_argument("--table", action="store_true", help="human-readable table instead of JSON")
    retrieve.set_defaults(func=cmd_retrieve)

    par = sub.add_parser("params", help="parameter counts for recurrent units and stacks")
    par.add_argument("--hidden", default="256,512,1024", help="comma-separated hidden sizes")
    par.add_argument("--d-in", type=int, help="input size (default: same as hidden)")
    par.add_argument("--table", action="store_true", help="human-readable table instead of JSON")
    par.set_defaults(func=cmd_params)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.parser = parser
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
