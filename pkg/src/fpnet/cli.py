"""``fpnet`` command line: train, eval, count-params, verify, describe.

Exit codes: 0 success, 1 verification or validation failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import data as data_mod
from .models import CIFAR_BLOCKS, BASES, ConfigError, CifarResNet, ModelSpec, describe
from .tensor import default_dtype
from .trainer import (
    CheckpointError, TrainConfig, TrainingDiverged, evaluate, load_checkpoint, train,
)
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
# shorthand for the ResNet-50 with FP-blocks in layers 2 and 4
ALIASES = {"resnet50-fp": ("resnet50", "0101")}


class UsageError(Exception):
    pass


def _milestones(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"milestones must be comma-separated integers, got {text!r}")


def _model_spec(args, cifar_only: bool = False) -> ModelSpec:
    if cifar_only and args.model not in CIFAR_BLOCKS:
        raise UsageError(f"{args.model} can only be described and counted, not trained or evaluated")
    base, config = ALIASES.get(args.model, (args.model, None))
    if args.config is not None:
        config = args.config
    try:
        return ModelSpec(base, config, args.q, ablation=getattr(args, "ablation", False))
    except ConfigError as e:
        raise UsageError(str(e))


def _data_dir(args) -> Path:
    path = args.data_dir or data_mod.default_data_dir()
    if path is None:
        raise UsageError(f"no data directory: pass --data-dir or set ${data_mod.DATA_DIR_ENV}")
    return Path(path)


def _print_config(title: str, cfg: dict) -> None:
    print(f"# {title}: " + json.dumps(cfg, sort_keys=True, default=str))


def cmd_train(args) -> int:
    spec = _model_spec(args, cifar_only=True)
    config = TrainConfig(epochs=args.epochs, lr=args.lr, milestones=args.milestones,
                         momentum=args.momentum, batch_size=args.batch_size,
                         weight_decay=args.weight_decay, seed=args.seed, precision=args.precision)
    data_dir = _data_dir(args)
    out_dir = Path(args.out_dir)
    _print_config("resolved config", {"model": asdict(spec), "train": asdict(config),
                                      "data_dir": str(data_dir), "subset": args.subset,
                                      "out_dir": str(out_dir)})
    strict = not args.allow_nonstandard
    train_set = data_mod.load_cifar10(data_dir, "train", strict=strict)
    test_set = data_mod.load_cifar10(data_dir, "test", strict=strict)
    if args.subset:
        train_set = data_mod.subset_per_class(train_set, args.subset // data_mod.NUM_CLASSES)
    with default_dtype(config.precision):
        model = CifarResNet(spec, seed=args.seed)
    resume = load_checkpoint(args.resume) if args.resume else None

    def report(rec):
        print(f"epoch {rec.epoch:3d}  loss {rec.train_loss:.4f}  acc {rec.train_acc:.4f}  "
              f"test_err {rec.test_error:.4f}  lr {rec.lr:g}  {rec.wall_seconds:.1f}s", flush=True)

    try:
        result = train(model, train_set, test_set, config, out_dir=out_dir, resume=resume, progress=report)
    except TrainingDiverged as e:
        print(f"training diverged: {e} (last checkpoint: {e.checkpoint})", file=sys.stderr)
        return EXIT_FAIL
    summary = {"model": spec.name, "min_test_error": result.min_test_error,
               "final_test_error": result.final_test_error, "epochs": len(result.metrics)}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    m = ckpt.model
    spec = ModelSpec(m["base"], m["config"], m["q"], m["num_classes"], m["ablation"])
    dtype = next(iter(ckpt.tensors.values())).dtype
    _print_config("resolved config", {"checkpoint": str(args.checkpoint), "model": m,
                                      "epoch": ckpt.epoch, "precision": str(dtype)})
    with default_dtype(dtype):
        model = CifarResNet(spec, seed=m.get("seed") or 0)
    model.load_state_dict({k: v for k, v in ckpt.tensors.items() if not k.startswith("optim.")})
    test_set = data_mod.load_cifar10(_data_dir(args), "test", strict=not args.allow_nonstandard)
    err = evaluate(model, test_set)
    print(json.dumps({"model": spec.name, "epoch": ckpt.epoch, "test_error": err}))
    return EXIT_OK


def cmd_count_params(args) -> int:
    spec = _model_spec(args)
    summary = describe(spec)
    if args.json:
        print(json.dumps({"model": summary.name, "config": summary.config, "q": summary.q,
                          "total_params": summary.total_params,
                          "per_layer_params": dict(summary.per_layer_params)}, indent=2))
        return EXIT_OK
    _print_config("resolved config", asdict(spec))
    for name, n in summary.per_layer_params:
        print(f"{name:<10}{n:>14,}")
    total = summary.total_params
    scale = f"{total / 1e6:.2f}M" if total >= 1e6 else f"{round(total / 1e3)}K"
    print(f"{'total':<10}{total:>14,}  ({scale})")
    return EXIT_OK


def cmd_verify(args) -> int:
    _print_config("resolved config", {"suite": args.suite, "data_dir": args.data_dir})
    data_dir = args.data_dir or data_mod.default_data_dir()
    checks = run_suite(args.suite, data_dir)
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print(f"{args.suite}: {'all checks passed' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_describe(args) -> int:
    spec = _model_spec(args)
    summary = describe(spec)
    print(summary.to_json() if args.json else summary.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpnet", description="Feature-product ResNets on CIFAR-10.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def model_flags(sp, models=BASES + tuple(ALIASES)):
        sp.add_argument("--model", required=True, choices=models)
        sp.add_argument("--config", default=None, help="binary layer-substitution string, e.g. 001")
        sp.add_argument("--q", type=int, default=None, help="expansion factor (default 2 CIFAR, 1 ImageNet)")

    t = sub.add_parser("train", help="train a CIFAR ResNet / FP-ResNet")
    model_flags(t, tuple(CIFAR_BLOCKS))
    t.add_argument("--ablation", action="store_true", help="single-filter + ReLU blocks")
    t.add_argument("--data-dir", default=None)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--milestones", type=_milestones, default=(100, 150))
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--subset", type=int, default=0, help="train on the first N/10 images of each class")
    t.add_argument("--out-dir", default="runs/latest")
    t.add_argument("--precision", choices=("float32", "float64"), default="float32")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--allow-nonstandard", action="store_true", help="accept files with != 10000 records")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="test error of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data-dir", default=None)
    e.add_argument("--allow-nonstandard", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("count-params", help="per-layer and total parameter counts")
    model_flags(c)
    c.add_argument("--ablation", action="store_true")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_count_params)

    v = sub.add_parser("verify", help="run a self-check suite")
    v.add_argument("--suite", required=True, choices=SUITES)
    v.add_argument("--data-dir", default=None)
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("describe", help="layer-by-layer architecture table")
    model_flags(d)
    d.add_argument("--ablation", action="store_true")
    d.add_argument("--json", action="store_true")
    d.set_defaults(func=cmd_describe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"fpnet {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, CheckpointError) as e:
        print(f"fpnet {args.command}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
