"""``blockspot`` command line: blockgen, eval, train-toy, decode, synth.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are the
long flag names with dashes replaced by underscores); explicit flags win over
file values. Exit status: 0 success, 2 usage or input error, 1 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import blockgen, dataset_io, metrics, tokenizer, toy, uvlm

log = logging.getLogger("blockspot")


class UsageError(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("BLOCKSPOT_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"BLOCKSPOT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _ordered_map(fn, items):
    return toy.ordered_map(fn, items, _threads())


# --------------------------------------------------------------------------
# argument handling


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def _unit_interval(s):
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {s}")
    return v


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {s}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _fraction(s):
    v = float(s)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {s}")
    return v


def _nonneg_float(s):
    v = float(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


# flag defaults live here so config files can fill gaps before them
DEFAULTS = {
    "blockgen": {"images_dir": None, "eps": 0.3, "min_pts": 1, "position_weight": 1.0, "k": 8,
                 "d": 64},
    "eval": {"protocol": "both", "threshold": metrics.GF_THRESHOLD, "out_dir": ".",
             "no_normalize": False},
    "train-toy": {"samples": 64, "mask": "uvlm", "seed": 0, "out_dir": ".",
                  "d_model": toy.TOY_MODEL["d_model"], "layers": toy.TOY_MODEL["n_layers"],
                  "heads": toy.TOY_MODEL["n_heads"], "d_ff": toy.TOY_MODEL["d_ff"],
                  "max_len": toy.TOY_MODEL["max_len"], "lr": toy.TOY_OPTIM["lr"],
                  "steps": toy.TOY_OPTIM["steps"], "batch_size": toy.TOY_OPTIM["batch_size"],
                  "eval_every": toy.TOY_OPTIM["eval_every"],
                  "warmup": toy.TOY_OPTIM["warmup_steps"], "schedule": toy.TOY_OPTIM["schedule"],
                  "stop_accuracy": None},
    "decode": {"beam": 4, "max_new_tokens": 63, "length_penalty": 0.0},
    "synth": {"count": 16, "seed": 0, "out_dir": "."},
}

# validators re-applied to values that come from a config file
VALIDATORS = {
    "eps": _positive_float, "min_pts": _positive_int, "position_weight": _nonneg_float,
    "k": _positive_int, "d": _positive_int, "threshold": _unit_interval,
    "samples": _positive_int, "steps": _positive_int, "d_model": _positive_int,
    "layers": _positive_int, "heads": _positive_int, "d_ff": _positive_int,
    "max_len": _positive_int, "lr": _nonneg_float, "batch_size": _positive_int,
    "eval_every": _positive_int, "beam": _positive_int, "max_new_tokens": _positive_int,
    "count": _positive_int, "length_penalty": _nonneg_float, "stop_accuracy": _fraction,
    "warmup": _nonneg_int,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockspot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with default values for the flags")
        return p

    p = add("blockgen", "generate block-level labels from instance annotations")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--images-dir", type=Path)
    p.add_argument("--eps", type=_positive_float)
    p.add_argument("--min-pts", type=_positive_int)
    p.add_argument("--lambda", dest="position_weight", type=_nonneg_float)
    p.add_argument("--k", type=_positive_int)
    p.add_argument("--d", type=_positive_int)

    p = add("eval", "score predictions against ground truth with NS and/or GF")
    p.add_argument("gt", type=Path)
    p.add_argument("pred", type=Path)
    p.add_argument("--protocol", choices=["ns", "gf", "both"])
    p.add_argument("--threshold", type=_unit_interval)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--no-normalize", action="store_true")

    p = add("train-toy", "train the toy recognizer on synthetic glyph images")
    p.add_argument("--samples", type=_positive_int)
    p.add_argument("--steps", type=_positive_int)
    p.add_argument("--mask", choices=["uvlm", "causal"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--d-model", type=_positive_int)
    p.add_argument("--layers", type=_positive_int)
    p.add_argument("--heads", type=_positive_int)
    p.add_argument("--d-ff", type=_positive_int)
    p.add_argument("--max-len", type=_positive_int)
    p.add_argument("--lr", type=_nonneg_float)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--eval-every", type=_positive_int)
    p.add_argument("--warmup", type=_nonneg_int)
    p.add_argument("--schedule", choices=["constant", "cosine"])
    p.add_argument("--stop-accuracy", type=_fraction)

    p = add("decode", "transcribe an image or block crop with a trained checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("image", type=Path)
    p.add_argument("--beam", type=_positive_int)
    p.add_argument("--max-new-tokens", type=_positive_int)
    p.add_argument("--length-penalty", type=_nonneg_float)

    p = add("synth", "write a synthetic glyph corpus (PNG images + annotation JSONL)")
    p.add_argument("--count", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> argparse.Namespace:
    """Merge defaults < config file < explicit flags, validating file values."""
    merged = dict(DEFAULTS[args.command])
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            with open(cfg_path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            key = key.replace("-", "_")
            if key == "lambda":
                key = "position_weight"
            if key not in merged:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if key in VALIDATORS and value is not None:
                try:
                    value = VALIDATORS[key](value)
                except (argparse.ArgumentTypeError, ValueError, TypeError) as exc:
                    raise UsageError(f"config {key}: {exc}") from None
            merged[key] = value
    merged.update({k: v for k, v in vars(args).items() if k != "config"})
    return argparse.Namespace(**merged)


# --------------------------------------------------------------------------
# commands


def cmd_blockgen(a) -> int:
    cfg = blockgen.BlockGenConfig(eps=a.eps, min_pts=a.min_pts, k=a.k, d=a.d,
                                  position_weight=a.position_weight)
    records = dataset_io.load_annotations(a.input)
    root = a.images_dir if a.images_dir is not None else a.input.parent
    extractor = blockgen.HistogramExtractor(dim=cfg.d)
    out = _ordered_map(lambda r: blockgen.generate_blocks(r, cfg, image_root=root,
                                                          extractor=extractor), records)
    dataset_io.save_annotations(out, a.output)
    log.info("wrote %d records to %s", len(out), a.output)
    return 0


def _spotting(rec) -> list:
    return [metrics.SpottingResult(i.polygon, i.text) for i in rec.instances]


def cmd_eval(a) -> int:
    gt = dataset_io.load_annotations(a.gt)
    pred = {r.image: r for r in dataset_io.load_annotations(a.pred)}
    dataset = [(g.instances, _spotting(pred[g.image]) if g.image in pred else []) for g in gt]
    report = metrics.evaluate(dataset, a.protocol, a.threshold, not a.no_normalize,
                              names=[g.image for g in gt])
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.summary(), encoding="utf-8")
    sys.stdout.write(report.summary())
    return 0


def cmd_train_toy(a) -> int:
    vocab = tokenizer.Vocab()
    samples = toy.synth_corpus(a.samples, a.seed, _threads())
    data = toy.corpus_batch(samples, vocab)
    cfg = uvlm.ModelConfig(vocab_size=len(vocab), patch_dim=data.patches.shape[2],
                           d_model=a.d_model, n_layers=a.layers, n_heads=a.heads,
                           d_ff=a.d_ff, max_len=a.max_len)
    params = uvlm.init_params(cfg, seed=a.seed)
    optim = uvlm.OptimConfig(lr=a.lr, batch_size=a.batch_size, steps=a.steps,
                             eval_every=a.eval_every, warmup_steps=a.warmup,
                             schedule=a.schedule, stop_accuracy=a.stop_accuracy)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(pt):
        if pt.accuracy is not None:
            log.info("step %d loss %.4f accuracy %.4f", pt.step, pt.loss, pt.accuracy)

    result = uvlm.train(params, data, optim, seed=a.seed, mask_kind=a.mask, callback=progress)
    uvlm.save_checkpoint(out / "checkpoint.bin", result.params, vocab,
                         extra={"mask": a.mask, "seed": a.seed, "samples": a.samples})
    with open(out / "loss_curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "accuracy"])
        for pt in result.curve:
            w.writerow([pt.step, repr(pt.loss), "" if pt.accuracy is None else repr(pt.accuracy)])
    return 0


def cmd_decode(a) -> int:
    params, vocab, extra = uvlm.load_checkpoint(a.checkpoint)
    img = dataset_io.read_image(a.image)
    if img.shape[:2] != (tokenizer.INPUT_HEIGHT, tokenizer.INPUT_WIDTH):
        img = tokenizer.resize(img, tokenizer.INPUT_HEIGHT, tokenizer.INPUT_WIDTH)
    patches = tokenizer.patch_image(img)
    if patches.shape[1] != params.config.patch_dim:
        raise UsageError(f"image patches have {patches.shape[1]} values, "
                         f"checkpoint expects {params.config.patch_dim}")
    cfg = uvlm.DecodeConfig(beam_width=a.beam, max_new_tokens=a.max_new_tokens,
                            length_penalty=a.length_penalty)
    res = uvlm.decode(params, patches, vocab, cfg, mask_kind=extra.get("mask", "uvlm"))
    sys.stdout.write(res.text + "\n")
    return 0


def cmd_synth(a) -> int:
    out = Path(a.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i, s in enumerate(toy.synth_corpus(a.count, a.seed, _threads())):
        rel = f"images/synth_{i:05d}.png"
        dataset_io.write_png(out / rel, s.image)
        h, w = s.image.shape[:2]
        records.append(dataset_io.AnnotationRecord(
            rel, w, h, [blockgen.TextInstance(poly, word) for word, poly in s.words]))
    dataset_io.save_annotations(records, out / "annotations.jsonl")
    return 0


COMMANDS = {"blockgen": cmd_blockgen, "eval": cmd_eval, "train-toy": cmd_train_toy,
            "decode": cmd_decode, "synth": cmd_synth}

INPUT_ERRORS = (UsageError, dataset_io.SchemaError, FileNotFoundError, IsADirectoryError,
                uvlm.CheckpointError, ValueError, KeyError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](resolve_config(args))
    except INPUT_ERRORS as exc:
        print(f"blockspot {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"blockspot {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
