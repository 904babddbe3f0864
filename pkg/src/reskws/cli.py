"""Command line: train, eval, footprint, predict, plot-data.

Machine-readable results go to stdout, diagnostics to stderr.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import CLASS_NAMES, AugmentationConfig, DatasetError, export_manifest
from .evaluation import evaluate, report_from_scores
from .frontend import WavFormatError, extract_mfcc, pad_or_clip, read_wav
from .models import INPUT_DIMS, VARIANTS, build, footprint, get_spec
from .training import (
    CheckpointError,
    CheckpointMismatchError,
    KWSData,
    TrainConfig,
    load_checkpoint,
    model_from_checkpoint,
    run_metadata,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATA_ENV = "KWS_DATA_ROOT"

log = logging.getLogger("reskws")


class UsageError(Exception):
    pass


def _data_root(args):
    root = args.data or os.environ.get(DATA_ENV)
    if not root:
        raise UsageError(f"no dataset root: pass --data or set {DATA_ENV}")
    return root


def _add_data_args(p):
    p.add_argument("--data", help=f"Speech Commands root (default: ${DATA_ENV})")
    p.add_argument("--limit", type=int, default=None, help="subsample N clips (smoke runs)")
    p.add_argument("--data-seed", type=int, default=0)


def _add_aug_args(p):
    d = AugmentationConfig()
    p.add_argument("--noise-prob", type=float, default=d.noise_prob)
    p.add_argument("--shift-ms", type=float, default=d.shift_ms)
    p.add_argument("--noise-max-amplitude", type=float, default=d.noise_max_amplitude)
    p.add_argument("--evict-frac", type=float, default=d.cache_eviction_frac)
    p.add_argument("--silence-frac", type=float, default=d.silence_frac)
    p.add_argument("--unknown-frac", type=float, default=d.unknown_frac)


def aug_config(args) -> AugmentationConfig:
    return AugmentationConfig(
        noise_prob=args.noise_prob,
        shift_ms=args.shift_ms,
        noise_max_amplitude=args.noise_max_amplitude,
        cache_eviction_frac=args.evict_frac,
        silence_frac=args.silence_frac,
        unknown_frac=args.unknown_frac,
    )


def train_config(args) -> TrainConfig:
    return TrainConfig(
        lr0=args.lr,
        lr_decay=args.lr_decay,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        plateau_patience=args.patience,
        seed=args.seed,
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="reskws", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    d = TrainConfig()
    p = sub.add_parser("train", help="train one model")
    p.add_argument("--arch", choices=list(VARIANTS), default="res8-narrow")
    _add_data_args(p)
    _add_aug_args(p)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--lr", type=float, default=d.lr0)
    p.add_argument("--lr-decay", type=float, default=d.lr_decay)
    p.add_argument("--momentum", type=float, default=d.momentum)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--patience", type=int, default=d.plateau_patience)
    p.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--checkpoint")
    p.add_argument("--arch", choices=list(VARIANTS), help="expected arch of --checkpoint, or a fresh model without one")
    p.add_argument("--seed", type=int, default=1, help="init seed with --arch")
    _add_data_args(p)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--out", default=None, help="directory for report.json and roc.csv")

    p = sub.add_parser("footprint", help="parameter and multiply counts")
    p.add_argument("--arch", choices=list(VARIANTS) + ["all"], default="all")
    p.add_argument("--frames", type=int, default=INPUT_DIMS[0])
    p.add_argument("--coeffs", type=int, default=INPUT_DIMS[1])
    p.add_argument("--format", choices=["text", "json"], default="text")

    p = sub.add_parser("predict", help="classify one WAV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("wav")

    p = sub.add_parser("plot-data", help="averaged ROC curves of several checkpoints as CSV")
    p.add_argument("--checkpoint", action="append", required=True, help="NAME=PATH or PATH; repeatable")
    _add_data_args(p)
    p.add_argument("--split", choices=["validation", "test"], default="test")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    return parser


def cmd_train(args):
    aug = aug_config(args)
    cfg = train_config(args)
    data = KWSData.from_root(_data_root(args), aug, limit=args.limit, data_seed=args.data_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_manifest(data.samples, out / "manifest.jsonl")
    resume = load_checkpoint(out / "last.ckpt") if args.resume else None
    meta = run_metadata(cfg, aug, arch=args.arch, data_root=str(data.root), limit=args.limit, data_seed=args.data_seed)
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    result = train(args.arch, data, cfg, out_dir=out, resume_from=resume)
    summary = {
        "arch": args.arch,
        "best_checkpoint": str(out / "best.ckpt"),
        "best_epoch": result.best.epoch,
        "best_val_accuracy": result.best.val_accuracy,
        "epochs": len(result.history),
    }
    print(json.dumps(summary))
    return EXIT_OK


def _load_model(args):
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        if args.arch and args.arch != ckpt.arch:
            raise CheckpointMismatchError(f"{args.checkpoint} holds {ckpt.arch!r}, not the requested {args.arch!r}")
        return model_from_checkpoint(ckpt)
    if not args.arch:
        raise UsageError("eval needs --checkpoint or --arch")
    return build(get_spec(args.arch), np.random.default_rng([args.seed, 0]))


def cmd_eval(args):
    model = _load_model(args)
    data = KWSData.from_root(_data_root(args), limit=args.limit, data_seed=args.data_seed)
    x, y = data.eval_arrays(args.split)
    if len(y) == 0:
        raise DatasetError(f"{args.split} split is empty")
    report = evaluate(model, x, y)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json(indent=2) + "\n")
        report.write_roc_csv(out / "roc.csv")
    print(report.to_json())
    return EXIT_OK


def cmd_footprint(args):
    names = list(VARIANTS) if args.arch == "all" else [args.arch]
    fps = [footprint(n, (args.frames, args.coeffs)) for n in names]
    if args.format == "json":
        payload = [f.to_dict() for f in fps]
        print(json.dumps(payload[0] if len(payload) == 1 else payload))
    else:
        print("\n\n".join(f.to_text() for f in fps))
    return EXIT_OK


def cmd_predict(args):
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    feats = extract_mfcc(pad_or_clip(read_wav(args.wav)))
    probs = model.predict_proba(feats[None])[0]
    k = int(np.argmax(probs))
    print(json.dumps({"label": CLASS_NAMES[k], "index": k, "probabilities": dict(zip(CLASS_NAMES, probs.tolist()))}))
    return EXIT_OK


def cmd_plot_data(args):
    data = KWSData.from_root(_data_root(args), limit=args.limit, data_seed=args.data_seed)
    x, y = data.eval_arrays(args.split)
    rows = ["model,far,frr"]
    for spec in args.checkpoint:
        name, _, path = spec.rpartition("=")
        ckpt = load_checkpoint(path)
        name = name or ckpt.arch
        report = report_from_scores(model_from_checkpoint(ckpt).predict_proba(x), y)
        avg = report.roc_average
        rows += [f"{name},{a:.6f},{r:.6f}" for a, r in zip(avg.far, avg.frr)]
    text = "\n".join(rows) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "footprint": cmd_footprint,
    "predict": cmd_predict,
    "plot-data": cmd_plot_data,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DatasetError, WavFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"reskws: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValueError) as exc:
        print(f"reskws: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"reskws: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
