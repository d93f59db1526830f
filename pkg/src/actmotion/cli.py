"""Command-line entry point: ``python -m actmotion <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cvae, harness
from .data import (DatasetError, Dataset, SyntheticSpec, default_spec, generate_synthetic,
                   load_dataset, save_dataset, split_dataset)


def _actions(text: str) -> list[int]:
    try:
        return [int(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actmotion",
                                     description="Action-conditioned variable-length motion prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic motion corpus")
    p.add_argument("--spec", default="default", help="'default' or a JSON SyntheticSpec file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-per-action", type=int, default=None)

    p = sub.add_parser("split", help="stratified train/test split of a corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory receiving train.jsonl and test.jsonl")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train the generator")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="overrides the config output directory")

    p = sub.add_parser("train-classifier", help="train the action classifier used by eval")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="training corpus; defaults to the config's train split")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("predict", help="sample futures for a chain of action labels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="corpus supplying the history")
    p.add_argument("--index", type=int, default=0, help="sample whose first N frames are the history")
    p.add_argument("--actions", type=_actions, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a generator on a test corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--classifier", default=None, help="classifier checkpoint; trained on the fly if absent")
    p.add_argument("--steps", type=int, default=None, help="recursive protocol length (config default)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--csv", default=None, help="optional per-step CSV")
    return parser


def _gen_data(args) -> None:
    if args.spec == "default":
        spec = default_spec(args.seed)
    else:
        spec = SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
        spec.seed = args.seed
    if args.samples_per_action is not None:
        spec.samples_per_action = args.samples_per_action
    save_dataset(generate_synthetic(spec), args.out)


def _split(args) -> None:
    train, test = split_dataset(load_dataset(args.data), args.test_fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.jsonl")
    save_dataset(test, out / "test.jsonl")


def _load_config(args) -> harness.RunConfig:
    cfg = harness.RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _train(args) -> None:
    cfg = _load_config(args)
    if args.out is not None:
        cfg.out = args.out
    result = harness.train(cfg)
    last = result.log.rows[-1]["total"] if result.log.rows else float("nan")
    print(f"wrote {result.checkpoint} ({cfg.epochs} epochs, final loss {last:.6g})")


def _train_classifier(args) -> None:
    cfg = _load_config(args)
    train = load_dataset(args.data) if args.data else harness.load_splits(cfg)[0]
    clf, stats = harness.fit_classifier(cfg, train)
    harness.save_classifier(args.out, clf, stats)
    print(f"wrote {args.out} (train accuracy {clf.train_accuracy:.4f})")


def _generator(path) -> tuple[harness.RunConfig, harness.Generator]:
    cfg, model, params, _k, T_max = harness.load_generator(path)
    stop = cvae.StoppingConfig(Q=cfg.Q, delta=cfg.delta, T_max=T_max)
    return cfg, harness.Generator(params, model, stop, window=cfg.smooth_L)


def _predict(args) -> None:
    _cfg, gen = _generator(args.ckpt)
    data = load_dataset(args.data)
    if not 0 <= args.index < len(data):
        raise DatasetError(f"--index {args.index} outside [0, {len(data)})")
    motion = data.samples[args.index].motion
    if motion.T < gen.model.N:
        raise DatasetError(f"sample {args.index} has {motion.T} frames, history needs {gen.model.N}")
    bad = [a for a in args.actions if not 0 <= a < gen.model.A]
    if bad or not args.actions:
        raise ValueError(f"actions must be in [0, {gen.model.A}), got {args.actions}")
    rng = np.random.default_rng(args.seed)
    cuts = cvae.predict_sequence(gen.params, gen.model, motion.frames[:, :gen.model.N], args.actions,
                                 gen.stop, rng)
    doc = {"history": motion.frames[:, :gen.model.N].T.tolist(),
           "segments": [{"action": a, "frames": y.T.tolist()} for a, y in zip(args.actions, cuts)]}
    Path(args.out).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {args.out} ({', '.join(str(y.shape[1]) for y in cuts)} frames)")


def _eval(args) -> None:
    cfg, gen = _generator(args.ckpt)
    if args.seed is not None:
        cfg.seed = args.seed
    test = load_dataset(args.data, split="test")
    if args.classifier:
        clf, train_stats = harness.load_classifier(args.classifier)
    else:
        clf, train_stats = harness.fit_classifier(cfg, harness.load_splits(cfg)[0])
    steps = cfg.steps if args.steps is None else args.steps
    report = harness.evaluate(gen, test, clf, train_stats, S=cfg.S, seed=cfg.seed, steps=steps,
                              config=cfg.echo())
    report.save(args.report)
    if args.csv:
        Path(args.csv).write_text(report.csv_rows(), encoding="utf-8")
    print(f"wrote {args.report} (Acc {report.Acc:.4f})")


COMMANDS = {"gen-data": _gen_data, "split": _split, "train": _train,
            "train-classifier": _train_classifier, "predict": _predict, "eval": _eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except (DatasetError, ValueError, OSError, KeyError, harness.TrainingError) as exc:
        print(f"actmotion {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
