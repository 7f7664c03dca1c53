"""Sample generation, metric reports, mask export and the four-leg ablation."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import mnist
from ..autodiff.tensor import Tensor
from ..errors import FormatError, GateError, RwmError
from ..metrics import FeatureClassifier, evaluate_generator, real_class_stats, train_classifier
from ..models import forward_generator
from ..rng import Rng, derive_seed
from . import container
from .config import LEG_NAMES
from .images import to_bytes, write_pgm
from .train import LAST_NAME, load_checkpoint, train_gan

log = logging.getLogger(__name__)

CLASSIFIER_KIND = "rwmcgan-classifier"
ABLATION_ORDER = [(False, False), (True, False), (False, True), (True, True)]
_GENERATE_KEY = 6


# ---------------------------------------------------------------- classifier

def save_classifier(classifier, path):
    meta = {"kind": CLASSIFIER_KIND, "seed": classifier.seed, "epochs": classifier.epochs,
            "test_accuracy": classifier.test_accuracy}
    container.write(path, {k: v.data for k, v in classifier.params.items()}, meta)


def load_classifier(path):
    if path is None or not Path(path).exists():
        raise GateError(f"no trained classifier at {path}; run train-classifier first")
    tensors, meta = container.read(path)
    if meta.get("kind") != CLASSIFIER_KIND:
        raise FormatError(f"{path}: not a classifier file (kind={meta.get('kind')!r})")
    params = {k: Tensor(v) for k, v in tensors.items()}
    return FeatureClassifier(params, meta["seed"], meta["epochs"], meta["test_accuracy"])


def train_and_save_classifier(data_dir, path, epochs=2, seed=0):
    train = mnist.load_split(data_dir, "train")
    test = mnist.load_split(data_dir, "test")
    clf = train_classifier(train, test, epochs=epochs, seed=seed, enforce_gate=False)
    save_classifier(clf, path)
    clf.require_gate()
    return clf


# ---------------------------------------------------------------- generation

def generate(checkpoint, classes, n, seed, out_dir):
    """Write ``n`` PGM samples per class as ``gen_c{class}_{index:04d}.pgm``."""
    state = load_checkpoint(checkpoint) if not hasattr(checkpoint, "g_params") else checkpoint
    g_spec, _ = state.specs
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for c in classes:
        z = Rng(derive_seed(seed, _GENERATE_KEY, c)).normal((n, g_spec.z_dim))
        images = forward_generator(g_spec, state.g_params, z, np.full(n, c)).data
        for i in range(n):
            path = out / f"gen_c{c}_{i:04d}.pgm"
            write_pgm(path, to_bytes(images[i, 0]))
            written.append(path)
    return written


def export_masks(checkpoint, out_dir):
    state = load_checkpoint(checkpoint) if not hasattr(checkpoint, "masks") else checkpoint
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, mask in enumerate(state.masks):
        path = out / f"mask_c{c}.pgm"
        write_pgm(path, to_bytes(mask, 0.0, 1.0))
        paths.append(path)
    return paths


# ---------------------------------------------------------------- evaluation

def evaluate_run(checkpoint, classifier, real_test, seed, out_dir=None, n_per_class=200, label=None,
                 real_stats=None):
    """Score a checkpoint and (optionally) write ``report.csv`` / ``report.md``."""
    if classifier is None:
        raise GateError("no classifier supplied; run train-classifier first")
    state = load_checkpoint(checkpoint) if not hasattr(checkpoint, "g_params") else checkpoint
    g_spec, _ = state.specs
    report = evaluate_generator(g_spec, state.g_params, classifier, real_test, n_per_class, seed,
                                label=label or state.config.leg_name, real_stats=real_stats)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    return report


@dataclass
class AblationRow:
    method: str
    report: object = None
    error: str | None = None

    @property
    def is_value(self):
        return None if self.report is None else self.report.mean_is

    @property
    def fid_value(self):
        return None if self.report is None else self.report.mean_fid


@dataclass
class AblationReport:
    rows: list
    seed: int

    def row(self, method):
        return next(r for r in self.rows if r.method == method)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "is", "fid"])
        for r in self.rows:
            if r.report is None:
                w.writerow([r.method, "failed", "failed"])
            else:
                w.writerow([r.method, f"{r.is_value:.6f}", f"{r.fid_value:.6f}"])
        return buf.getvalue()

    def to_markdown(self):
        lines = [f"Ablation (master seed {self.seed})", "", "| Method | IS | FID |", "|---|---|---|"]
        for r in self.rows:
            name = "baseline(CGAN)" if r.method == "baseline" else r.method
            if r.report is None:
                lines.append(f"| {name} | failed | failed |")
            else:
                lines.append(f"| {name} | {r.is_value:.3f} | {r.fid_value:.3f} |")
        base, full = self.row("baseline"), self.row("baseline+RU+WM")
        if base.report is not None and full.report is not None:
            for title, attr in (("IS", "is_mean"), ("FID", "fid")):
                lines += ["", f"{title} per class: CGAN vs RWM-CGAN", "", "| Class | CGAN | RWM-CGAN |", "|---|---|---|"]
                for b, f in zip(base.report.rows, full.report.rows):
                    lines.append(f"| {b.class_id} | {getattr(b, attr):.3f} | {getattr(f, attr):.3f} |")
                mean = (lambda rep: rep.mean_is) if attr == "is_mean" else (lambda rep: rep.mean_fid)
                lines.append(f"| mean | {mean(base.report):.3f} | {mean(full.report):.3f} |")
        failures = [r for r in self.rows if r.error]
        if failures:
            lines += ["", "Failed legs:"] + [f"- {r.method}: {r.error}" for r in failures]
        return "\n".join(lines) + "\n"


def run_ablation(base_config, classifier, real_test, out_dir=None, n_per_class=200, data=None):
    """Train and score the four (RU, WM) legs with identical seeds and budget."""
    classifier.require_gate()
    out = Path(out_dir if out_dir is not None else base_config.out_dir)
    real_stats = real_class_stats(classifier, real_test)
    rows = []
    for ru, wm in ABLATION_ORDER:
        method = LEG_NAMES[(ru, wm)]
        leg_dir = out / method
        config = base_config.replace(residual_units=ru, weight_mask=wm, out_dir=str(leg_dir))
        try:
            state, _ = train_gan(config, data=data)
            report = evaluate_run(state, classifier, real_test, config.seed, leg_dir, n_per_class,
                                  label=method, real_stats=real_stats)
            rows.append(AblationRow(method, report))
        except (RwmError, ArithmeticError, ValueError) as exc:
            log.error("ablation leg %s failed: %s", method, exc)
            rows.append(AblationRow(method, error=str(exc)))
    report = AblationReport(rows, base_config.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "ablation.md").write_text(report.to_markdown(), encoding="utf-8")
    return report


def final_checkpoint(run_dir):
    return Path(run_dir) / LAST_NAME
