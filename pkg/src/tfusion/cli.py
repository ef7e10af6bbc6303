"""Command-line driver: train, eval, ensemble-eval, predict,
export-attention, count-params.

Exit codes are stable API: 0 ok, 2 configuration error, 3 data error,
4 I/O error, 5 checkpoint format error.
"""

import argparse
import sys

from .attention import export_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config
from .data import load_dataset, load_image, make_batches, normalize, resize_bilinear
from .ensemble import EnsembleModel, FusionParams
from .errors import ConfigError, DataError, FormatError
from .layers import Mode
from .metrics import classification_metrics, confusion_matrix
from .model import build_tfusion, count_parameters
from .training import single_thread_blas, train as run_training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IO = 4
EXIT_CHECKPOINT = 5


class _CliExit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_model(path):
    try:
        return load_checkpoint(path)
    except FormatError as exc:
        raise _CliExit(EXIT_CHECKPOINT, f"checkpoint {path}: {exc}") from None


def _check_classes(ds, num_classes):
    if len(ds.class_names) != num_classes:
        raise DataError(
            f"dataset has {len(ds.class_names)} classes but the model expects {num_classes}"
        )


def _evaluate_to_report(predict_batch, ds, batch_size=16):
    true_labels, pred_labels = [], []
    for batch in make_batches(ds, range(len(ds)), batch_size):
        pred_labels.extend(predict_batch(batch.images))
        true_labels.extend(ds.samples[i][1] for i in batch.indices)
    cm = confusion_matrix(true_labels, pred_labels, len(ds.class_names))
    return classification_metrics(cm)


def _emit_report(report, metrics_path):
    if metrics_path:
        with open(metrics_path, "w", encoding="ascii") as fh:
            fh.write(report.to_json() + "\n")
    print(f"accuracy={report.accuracy:.4f}")


def cmd_train(args):
    rc = load_run_config(args.config, overrides={
        "seed": args.seed,
        "max_epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
    })
    ds = load_dataset(args.data, (rc.model.input_h, rc.model.input_w))
    _check_classes(ds, rc.model.num_classes)
    model = build_tfusion(rc.model, rc.train.seed)
    model.class_names = ds.class_names
    model, history = run_training(model, ds, rc.train, log=print)
    save_checkpoint(model, args.out)
    if args.history:
        history.write_csv(args.history)
    return EXIT_OK


def cmd_eval(args):
    model = _load_model(args.model)
    ds = load_dataset(args.data, (model.config.input_h, model.config.input_w))
    _check_classes(ds, model.config.num_classes)

    def predict_batch(images):
        return model.forward(images, Mode.INFER).argmax(axis=1).tolist()

    _emit_report(_evaluate_to_report(predict_batch, ds), args.metrics)
    return EXIT_OK


def cmd_ensemble_eval(args):
    members = [_load_model(p) for p in args.models]
    params = FusionParams(alpha=args.alpha, epsilon=args.epsilon, bias=args.bias)
    ens = EnsembleModel(members, params)
    cfg = members[0].config
    ds = load_dataset(args.data, (cfg.input_h, cfg.input_w))
    _check_classes(ds, cfg.num_classes)

    def predict_batch(images):
        labels, _ = ens.predict(images)
        return labels

    _emit_report(_evaluate_to_report(predict_batch, ds), args.metrics)
    return EXIT_OK


def _load_input_image(model, path):
    img = resize_bilinear(load_image(path), model.config.input_h, model.config.input_w)
    return normalize(img)[None, :, :, :]


def cmd_predict(args):
    model = _load_model(args.model)
    batch = _load_input_image(model, args.image)
    probs = model.forward(batch, Mode.INFER)[0]
    cls = int(probs.argmax())
    name = model.class_names[cls] if model.class_names else str(cls)
    print(f"class={name} prob={probs[cls]:.4f}")
    return EXIT_OK


def cmd_export_attention(args):
    model = _load_model(args.model)
    batch = _load_input_image(model, args.image)
    attention = model.attention_map(batch, Mode.INFER)
    export_attention(attention, args.out)
    return EXIT_OK


def cmd_count_params(args):
    rc = load_run_config(args.config)
    model = build_tfusion(rc.model, seed=0)
    rows = model.parameter_breakdown()
    width = max(len(name) for name, _, _ in rows)
    print(f"{'layer':<{width}}  {'trainable':>10}  {'total':>10}")
    for name, trainable, total in rows:
        print(f"{name:<{width}}  {trainable:>10}  {total:>10}")
    trainable, total = count_parameters(model)
    print(f"trainable={trainable} total={total}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfusion",
        description="Train, evaluate, and inspect attention-gated fusion CNNs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a class-per-directory image tree")
    p.add_argument("--data", required=True, help="dataset root (one subdirectory per class)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="run seed (overrides config)")
    p.add_argument("--epochs", type=int, help="override max_epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="override batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate", help="override learning_rate")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", help="write per-epoch metrics CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble-eval", help="fuzzy-max fuse several checkpoints and evaluate")
    p.add_argument("--models", required=True, nargs="+")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--epsilon", type=float, default=0.0001)
    p.add_argument("--bias", type=float, default=20.0)
    p.add_argument("--metrics", help="write metrics JSON here")
    p.set_defaults(func=cmd_ensemble_eval)

    p = sub.add_parser("predict", help="classify a single image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-attention", help="write the attention map for an image as PGM")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("count-params", help="print the per-layer parameter table")
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(func=cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    try:
        with single_thread_blas():
            return args.func(args)
    except _CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
