"""
The ``ecgtcn`` command.

One entry point with a subcommand per pipeline stage::

    ecgtcn train     TRAIN_FILE --out MODEL
    ecgtcn eval      MODEL TEST_FILE [--compare FLOAT_MODEL] [--jobs N]
    ecgtcn quantize  MODEL --calib TRAIN_FILE --out QMODEL
    ecgtcn report    QMODEL [--out FILE]
    ecgtcn tileplan  QMODEL [--budget 80kB] [--out FILE]
    ecgtcn codegen   QMODEL --out-dir DIR [--golden N --data TEST_FILE]
    ecgtcn infer     MODEL BEAT_FILE

Options resolve as built-in defaults, then ``--config FILE``, then explicit
flags. Exit codes: 0 success, 1 usage, 2 data or container, 3 numeric
divergence, 4 infeasible plan.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Final

import numpy as np

from . import __version__
from .codegen import emit_golden_vectors, emit_source, write_bundle
from .config import ArchConfig, TrainConfig, load_config_file
from .container import load_model, save_model
from .cost import cost_report, count_params, format_report, report_key_values
from .data import CLASS_NAMES, load_ucr, read_beats, stratified_holdout
from .engine import qpredict_batch
from .errors import ContainerError, EcgTcnError, UsageError
from .metrics import accuracy, balanced_accuracy, confusion
from .network import Network, build_ecg_tcn, forward, predict
from .quantize import QNetwork, calibrate, fold_batchnorm, quantize_network
from .tiling import format_plan, parse_budget, plan_key_values, plan_tiles
from .training import train

__all__ = ["build_parser", "main"]

logger = logging.getLogger(__name__)

LOG_FORMAT: Final = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Options a --config file may set, with their built-in defaults.
_DEFAULTS: Final[dict[str, object]] = {
    "seed": 0,
    "epochs": TrainConfig.epochs,
    "batch_size": TrainConfig.batch_size,
    "lr": TrainConfig.lr,
    "dropout": ArchConfig.dropout_p,
    "val_fraction": 0.2,
    "precision": TrainConfig.precision,
    "jobs": 1,
    "budget": "80kB",
    "golden": 0,
}


def _settings(args: argparse.Namespace) -> dict[str, object]:
    from_file = load_config_file(args.config) if args.config else {}
    unknown = sorted(set(from_file) - set(_DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    merged: dict[str, object] = {}
    for key, default in _DEFAULTS.items():
        value = getattr(args, key, None)
        if value is None and key in from_file:
            try:
                value = type(default)(from_file[key])
            except ValueError:
                raise UsageError(f"config key {key}: bad value {from_file[key]!r}") from None
        merged[key] = default if value is None else value
    return merged


def _quantized(model: Network | QNetwork, path: str) -> QNetwork:
    if not isinstance(model, QNetwork):
        raise UsageError(f"{path} holds a float model; run `ecgtcn quantize` first")
    return model


def cmd_train(args: argparse.Namespace, opts: dict[str, object]) -> int:
    seed = int(opts["seed"])
    full = load_ucr(args.train_file)
    train_ds, val_ds = stratified_holdout(full, float(opts["val_fraction"]), seed=seed)
    print(f"fitting on {len(train_ds)} beats, selecting on {len(val_ds)} held-out beats")
    cfg = TrainConfig(
        batch_size=int(opts["batch_size"]),
        lr=float(opts["lr"]),
        epochs=int(opts["epochs"]),
        seed=seed,
        precision=str(opts["precision"]),  # type: ignore[arg-type]
    )
    net = build_ecg_tcn(ArchConfig(dropout_p=float(opts["dropout"])), seed=seed)
    result = train(net, train_ds, val_ds, cfg)

    print("epoch      loss  val acc  val bal acc")
    for r in result.history:
        print(
            f"{r.epoch:>5}  {r.loss:8.4f}  {r.val_accuracy:7.3f}  {r.val_balanced_accuracy:11.3f}"
        )
    print(f"selected epoch {result.best_epoch}")
    meta = {**cfg.to_metadata(), "train.best_epoch": str(result.best_epoch)}
    save_model(args.out, result.network, meta)
    return 0


def cmd_eval(args: argparse.Namespace, opts: dict[str, object]) -> int:
    model = load_model(args.model)
    test = load_ucr(args.test_file, expected_len=model.cfg.input_len)
    if isinstance(model, QNetwork):
        preds, qlogits = qpredict_batch(model, test.x, jobs=int(opts["jobs"]))
        print("quantized=1")
    else:
        preds, qlogits = predict(model, test.x), None
        print("quantized=0")
    cm = confusion(preds, test.y, test.class_count)
    acc = accuracy(cm)
    print(f"accuracy          {acc:.3f}")
    print(f"balanced accuracy {balanced_accuracy(cm):.3f}  (macro-averaged recall)")
    print(cm.format(test.class_names))

    if args.compare:
        parent = load_model(args.compare)
        if not isinstance(parent, Network) or qlogits is None:
            raise UsageError("--compare takes a float model and a quantized MODEL")
        float_acc = accuracy(confusion(predict(parent, test.x), test.y, test.class_count))
        assert isinstance(model, QNetwork)
        dequant = qlogits.astype(np.float64) * model.dense.logit_scale
        error = float(np.mean(np.abs(dequant - forward(parent, test.x))))
        print(f"float accuracy    {float_acc:.3f}")
        print(f"accuracy drop     {100 * (float_acc - acc):.2f} points")
        print(f"mean |logit err|  {error:.4f}")
    return 0


def cmd_quantize(args: argparse.Namespace, opts: dict[str, object]) -> int:
    model = load_model(args.model)
    if isinstance(model, QNetwork):
        raise ContainerError(f"{args.model} is already quantized")
    calib = load_ucr(args.calib, expected_len=model.cfg.input_len)
    folded = fold_batchnorm(model)
    ranges = calibrate(folded, calib)
    qnet = quantize_network(folded, ranges, float_param_count=count_params(model))
    print(f"{'edge':<18}{'scale':>14}{'zero point':>12}")
    for edge, qp in qnet.edges().items():
        print(f"{edge:<18}{qp.scale:>14.6g}{qp.zero_point:>12}")
    save_model(args.out, qnet, {"calibration.beats": str(len(calib))})
    return 0


def cmd_report(args: argparse.Namespace, opts: dict[str, object]) -> int:
    report = cost_report(load_model(args.model))
    print(format_report(report))
    if args.out:
        Path(args.out).write_text(report_key_values(report), encoding="utf-8")
    return 0


def cmd_tileplan(args: argparse.Namespace, opts: dict[str, object]) -> int:
    qnet = _quantized(load_model(args.model), args.model)
    plan = plan_tiles(qnet, parse_budget(str(opts["budget"])), double_buffer=args.double_buffer)
    print(format_plan(plan))
    if args.out:
        Path(args.out).write_text(plan_key_values(plan), encoding="utf-8")
        logger.info("wrote %s", args.out)
    return 0


def cmd_codegen(args: argparse.Namespace, opts: dict[str, object]) -> int:
    qnet = _quantized(load_model(args.model), args.model)
    bundle = emit_source(qnet, native_dilation=args.native_dilation)
    for path in write_bundle(bundle, args.out_dir):
        print(path)
    golden = int(opts["golden"])
    if golden:
        if not args.data:
            raise UsageError("--golden needs --data TEST_FILE")
        ds = load_ucr(args.data, expected_len=qnet.cfg.input_len)
        vectors = emit_golden_vectors(qnet, ds, golden, seed=int(opts["seed"]))
        path = Path(args.out_dir) / "golden.txt"
        path.write_text(vectors.to_text(), encoding="utf-8")
        print(path)
    print(f"constant bytes {bundle.constant_bytes}, arena bytes {bundle.arena_bytes}")
    return 0


def cmd_infer(args: argparse.Namespace, opts: dict[str, object]) -> int:
    model = load_model(args.model)
    beats = read_beats(args.beat_file, expected_len=model.cfg.input_len)
    if not beats:
        return 0
    x = np.stack(beats)
    if isinstance(model, QNetwork):
        preds, logits = qpredict_batch(model, x, jobs=int(opts["jobs"]))
    else:
        logits = np.atleast_2d(forward(model, x))
        preds = np.argmax(logits, axis=1) + 1
    for p, row in zip(preds, logits):
        values = " ".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row.tolist())
        print(f"{CLASS_NAMES[int(p) - 1]}\t{values}")
    return 0


Command = Callable[[argparse.Namespace, dict[str, object]], int]


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for every subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value file overriding defaults")
    common.add_argument("--seed", type=int, help="seed of every random draw (default 0)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")

    parser = argparse.ArgumentParser(
        prog="ecgtcn", description="ECG-TCN training, INT-8 deployment and code generation."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, handler: Command, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help, description=help)
        p.set_defaults(handler=handler)
        return p

    p = add("train", cmd_train, "train a float network on a UCR file")
    p.add_argument("train_file")
    p.add_argument("--out", required=True, metavar="MODEL")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument(
        "--val-fraction",
        dest="val_fraction",
        type=float,
        help="share of the training file held out to select the best epoch (default 0.2); "
        "the network is fitted on the remaining beats only",
    )
    p.add_argument("--precision", choices=("standard", "high"))

    p = add("eval", cmd_eval, "report accuracy and the confusion matrix")
    p.add_argument("model")
    p.add_argument("test_file")
    p.add_argument("--compare", metavar="FLOAT_MODEL", help="float parent of a quantized MODEL")
    p.add_argument("--jobs", type=int, help="threads for quantized inference")

    p = add("quantize", cmd_quantize, "fold batch norm, calibrate and quantize to INT-8")
    p.add_argument("model")
    p.add_argument("--calib", required=True, metavar="TRAIN_FILE")
    p.add_argument("--out", required=True, metavar="QMODEL")

    p = add("report", cmd_report, "parameter, MAC and memory accounting")
    p.add_argument("model")
    p.add_argument("--out", metavar="FILE", help="write key=value figures")

    p = add("tileplan", cmd_tileplan, "plan L1 tiles under a memory budget")
    p.add_argument("model")
    p.add_argument("--budget", help="L1 budget, bytes or e.g. 80kB (default 80kB)")
    p.add_argument("--no-double-buffer", dest="double_buffer", action="store_false")
    p.add_argument("--out", metavar="FILE", help="write the machine-readable plan")

    p = add("codegen", cmd_codegen, "emit C99 sources and golden vectors")
    p.add_argument("model")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--golden", type=int, metavar="N", help="also write N golden vectors")
    p.add_argument("--data", metavar="TEST_FILE", help="beats the golden vectors are drawn from")
    p.add_argument("--no-native-dilation", dest="native_dilation", action="store_false")

    p = add("infer", cmd_infer, "classify the beats of a file")
    p.add_argument("model")
    p.add_argument("beat_file")
    p.add_argument("--jobs", type=int, help="threads for quantized inference")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 1
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    try:
        return args.handler(args, _settings(args))
    except EcgTcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
