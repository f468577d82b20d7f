"""``pavecnn`` command line: gen, train, eval, predict.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data, models, train
from .exceptions import FormatError, ValidationError

log = logging.getLogger("pavecnn")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pavecnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    tasks = sorted(data.TASK_LABELS)

    p = sub.add_parser("gen", help="write a synthetic labeled corpus")
    p.add_argument("--task", choices=tasks, required=True)
    p.add_argument("--count", type=positive_int, required=True, help="images per class")
    p.add_argument("--size", type=int, default=64, help="image side length (>= 32)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train a task model on a manifest")
    p.add_argument("--task", choices=tasks, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--epochs", type=positive_int, help="default: 30 (crack, severity) / 20 (mark)")
    p.add_argument("--batch-size", type=positive_int, default=64)
    p.add_argument("--lr", type=positive_float, default=0.01)
    p.add_argument("--val-split", type=unit_interval, help="default: 0.2 / 0.1 / 0.3 by task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=positive_int, default=5)
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--input-size", type=positive_int,
                   help="network input side; default 256 (crack, mark) / 500 (severity)")
    p.add_argument("--model-out", type=Path, default=Path("model.pcnn"))
    p.add_argument("--log-out", type=Path, default=Path("train_log.csv"))

    p = sub.add_parser("eval", help="evaluate a saved model on a manifest")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--task", choices=tasks, help="fail unless the model was trained for this task")
    p.add_argument("--confusion-out", type=Path, help="also write the confusion matrix CSV here")

    p = sub.add_parser("predict", help="classify image files")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--image", type=Path, nargs="+", required=True)
    return parser


def cmd_gen(args) -> int:
    if args.size < 32:
        raise UsageError(f"--size must be >= 32, got {args.size}")
    manifest = data.generate_synthetic_corpus(args.task, args.count, args.size, args.seed, args.out)
    print(f"wrote {len(manifest)} images and {args.out / 'manifest.csv'}")
    return EXIT_OK


def _accuracy_line(label: str, result: train.EvalResult) -> str:
    return f"{label}: loss={result.loss:.6f} accuracy={result.accuracy:.6f}"


def cmd_train(args) -> int:
    defaults = train.TASK_DEFAULTS[args.task]
    config = train.TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.lr,
        max_epochs=args.epochs or defaults["max_epochs"],
        val_ratio=args.val_split or defaults["val_ratio"],
        seed=args.seed,
        early_stopping=not args.no_early_stop,
        patience=args.patience,
    )
    size = args.input_size or models.DEFAULT_INPUT_SIZE[args.task]
    manifest = data.load_manifest(args.manifest, args.task)
    X, y = data.load_dataset(manifest, size)
    tr, va = data.split_dataset(len(y), config.val_ratio, config.seed)
    net = models.build_model(args.task, config.seed, input_size=size)
    log.info("%s: %d train / %d val samples, %d parameters", models.MODEL_NAMES[args.task],
             len(tr), len(va), models.count_parameters(net))
    history = train.fit(net, (X[tr], y[tr]), (X[va], y[va]), config)
    models.save_model(net, args.model_out)
    history.write_csv(args.log_out)

    # report on the weights as stored, so `eval` on the same files reproduces these numbers
    saved = models.load_model(args.model_out)
    print(f"epochs run: {len(history)} (best epoch {history.best_epoch}"
          f"{', stopped early' if history.stopped_early else ''})")
    print(_accuracy_line("train", train.evaluate(saved, X[tr], y[tr])))
    print(_accuracy_line("val", train.evaluate(saved, X[va], y[va])))
    print(_accuracy_line("manifest", train.evaluate(saved, X, y)))
    print(f"model: {args.model_out}\nlog: {args.log_out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = models.load_model(args.model)
    if args.task is not None and args.task != net.task:
        raise UsageError(f"model was trained for task {net.task!r}, not {args.task!r}")
    manifest = data.load_manifest(args.manifest, net.task)
    X, y = data.load_dataset(manifest, net.input_shape[0])
    result = train.evaluate(net, X, y)
    names = models.class_names(net)
    print(f"loss={result.loss:.6f}")
    print(f"accuracy={result.accuracy:.6f}")
    for name, acc, n in zip(names, result.confusion.per_class_accuracy(), result.confusion.counts.sum(axis=1)):
        print(f"{name}: {acc:.6f} of {n}")
    csv_text = result.confusion.to_csv(names)
    print(csv_text, end="")
    if args.confusion_out is not None:
        args.confusion_out.write_text(csv_text, encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    net = models.load_model(args.model)
    names = models.class_names(net)
    size = net.input_shape[0]
    status = EXIT_OK
    for path in args.image:
        try:
            x = data.preprocess(data.load_image(path), size)
        except (OSError, FormatError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            status = EXIT_RUNTIME
            continue
        idx, probs = train.predict(net, x)
        print(f"{path},{names[idx]}," + ",".join(f"{p:.6f}" for p in probs))
    return status


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad flags, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
