"""Command-line entry point: ``rwmcgan <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
abort, 4 classifier gate failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import mnist
from .errors import DomainError, FormatError, GateError, NonFiniteError, RwmError, ShapeError, TrainingAborted
from .harness import evaluate as ev
from .harness.config import ALIASES, RunConfig, dump_config_text, load_config, parse_value
from .harness.train import LAST_NAME, load_checkpoint, train_gan

log = logging.getLogger("rwmcgan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_GATE = 0, 1, 2, 3, 4
DEFAULT_CLASSIFIER = "runs/classifier.rwmc"

_FLAG_FOR = {v: k for k, v in ALIASES.items()}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _on_off(raw):
    try:
        return parse_value("residual_units", raw)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _classes(raw):
    if raw.strip().lower() == "all":
        return list(range(10))
    try:
        out = [int(p) for p in raw.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad class list {raw!r}") from exc
    if not out or any(not 0 <= c <= 9 for c in out):
        raise argparse.ArgumentTypeError(f"classes must be 'all' or digits 0-9, got {raw!r}")
    return out


def _add_config_flags(p):
    """One flag per RunConfig field; --ru/--wm/--out/--mask-refresh use short names."""
    p.add_argument("--config", metavar="PATH", help="key = value config file (flags override it)")
    for f in fields(RunConfig):
        flag = "--" + _FLAG_FOR.get(f.name, f.name).replace("_", "-")
        kind = {"bool": _on_off, "int": int, "float": float}.get(f.type, str)
        metavar = "on|off" if f.type == "bool" else None
        p.add_argument(flag, dest=f.name, type=kind, default=None, metavar=metavar)


def _config_from(args):
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    try:
        return load_config(args.config, overrides)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc


def build_parser():
    parser = _Parser(prog="rwmcgan", description="Residual / weight-mask conditional GAN on MNIST")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one GAN configuration")
    _add_config_flags(p)
    p.add_argument("--checkpoint", metavar="PATH", help="resume from this checkpoint")

    p = sub.add_parser("generate", help="write PGM samples from a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--classes", type=_classes, default=list(range(10)), metavar="LIST")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("evaluate", help="per-class IS/FID report for a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--classifier", default=DEFAULT_CLASSIFIER, metavar="PATH")
    p.add_argument("--data-dir", default=None, metavar="PATH")
    p.add_argument("--n", type=int, default=200, help="samples per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, metavar="DIR")

    p = sub.add_parser("ablate", help="train and score the four (RU, WM) legs")
    _add_config_flags(p)
    p.add_argument("--classifier", default=DEFAULT_CLASSIFIER, metavar="PATH")
    p.add_argument("--n", type=int, default=200, help="samples per class")

    p = sub.add_parser("train-classifier", help="train the scoring classifier")
    p.add_argument("--data-dir", default=RunConfig().data_dir, metavar="PATH")
    p.add_argument("--out", default=DEFAULT_CLASSIFIER, metavar="PATH")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export-masks", help="write the checkpoint's class masks as PGM")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="DIR")
    return parser


# ----------------------------------------------------------------- commands

def cmd_train(args):
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        config = state.config
        if args.epochs is not None:
            state.config = config = config.replace(epochs=args.epochs)
        if args.max_steps is not None:
            state.config = config = config.replace(max_steps=args.max_steps)
        out = args.out_dir or str(Path(args.checkpoint).parent)
    else:
        state = None
        config = _config_from(args)
        out = config.out_dir
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "config.txt").write_text(dump_config_text(config), encoding="utf-8")
    state, train_log = train_gan(config if state is None else None, state=state, out_dir=out)
    last = train_log.steps[-1] if train_log.steps else None
    losses = f"d_loss {last[2]:.4f} g_loss {last[3]:.4f}" if last else "no steps run"
    print(f"{config.leg_name}: step {state.step} epoch {state.epoch} {losses} -> {Path(out) / LAST_NAME}")


def cmd_generate(args):
    if args.n < 1:
        raise UsageError("--n must be positive")
    paths = ev.generate(args.checkpoint, args.classes, args.n, args.seed, args.out)
    print(f"wrote {len(paths)} images to {args.out}")


def cmd_evaluate(args):
    classifier = ev.load_classifier(args.classifier)
    state = load_checkpoint(args.checkpoint)
    data_dir = args.data_dir or state.config.data_dir
    test = mnist.load_split(data_dir, "test")
    out = args.out or str(Path(args.checkpoint).parent)
    report = ev.evaluate_run(state, classifier, test, args.seed, out, args.n)
    print(f"{report.label}: mean IS {report.mean_is:.3f} mean FID {report.mean_fid:.3f} -> {Path(out) / 'report.md'}")


def cmd_ablate(args):
    config = _config_from(args)
    classifier = ev.load_classifier(args.classifier)
    test = mnist.load_split(config.data_dir, "test")
    report = ev.run_ablation(config, classifier, test, config.out_dir, args.n)
    sys.stdout.write(report.to_csv())
    failed = [r.method for r in report.rows if r.report is None]
    if failed:
        log.error("failed legs: %s", ", ".join(failed))
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_train_classifier(args):
    clf = ev.train_and_save_classifier(args.data_dir, args.out, args.epochs, args.seed)
    print(f"classifier test accuracy {clf.test_accuracy:.4f} -> {args.out}")


def cmd_export_masks(args):
    paths = ev.export_masks(args.checkpoint, args.out)
    print(f"wrote {len(paths)} masks to {args.out}")


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "train-classifier": cmd_train_classifier,
    "export-masks": cmd_export_masks,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GateError as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (TrainingAborted, NonFiniteError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ShapeError, DomainError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RwmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
