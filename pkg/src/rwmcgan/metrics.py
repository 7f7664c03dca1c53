"""Inception Score and Frechet distance computed with an in-repo MNIST classifier."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.optim import AdamState, adam_step
from .autodiff.tensor import Tape, Tensor
from .errors import DomainError, GateError, ShapeError
from .mnist import make_batches
from .models import forward_generator
from .rng import Rng, derive_seed

log = logging.getLogger(__name__)

ACCURACY_GATE = 0.97
FEATURE_DIM = 64
_EVAL_KEY = 4


# ---------------------------------------------------------------- classifier

@dataclass
class FeatureClassifier:
    params: dict
    seed: int = 0
    epochs: int = 0
    test_accuracy: float | None = None

    @property
    def gate_passed(self):
        return self.test_accuracy is not None and self.test_accuracy >= ACCURACY_GATE

    def require_gate(self):
        if not self.gate_passed:
            raise GateError(
                f"classifier accuracy {self.test_accuracy} is below the {ACCURACY_GATE} gate",
                self.test_accuracy,
            )


def build_classifier(seed):
    rng = Rng(seed)

    def he(shape, fan_in):
        return Tensor(rng.normal(shape) * np.float32(np.sqrt(2.0 / fan_in)), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)

    return {
        "conv1.weight": he((16, 1, 3, 3), 9), "conv1.bias": zeros(16),
        "conv2.weight": he((32, 16, 3, 3), 144), "conv2.bias": zeros(32),
        "fc1.weight": he((32 * 7 * 7, FEATURE_DIM), 32 * 7 * 7), "fc1.bias": zeros(FEATURE_DIM),
        "fc2.weight": he((FEATURE_DIM, 10), FEATURE_DIM), "fc2.bias": zeros(10),
    }


def classifier_forward(params, images):
    """Return (penultimate features, logits) as tensors."""
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
    h = ops.leaky_relu(ops.conv2d(x, params["conv1.weight"], params["conv1.bias"], stride=2, padding=1), 0.2)
    h = ops.leaky_relu(ops.conv2d(h, params["conv2.weight"], params["conv2.bias"], stride=2, padding=1), 0.2)
    h = h.reshape(x.shape[0], 32 * 7 * 7)
    feats = ops.relu(ops.affine(h, params["fc1.weight"], params["fc1.bias"]))
    return feats, ops.affine(feats, params["fc2.weight"], params["fc2.bias"])


def classifier_accuracy(params, dataset, batch=500):
    correct = 0
    for i in range(0, len(dataset), batch):
        _, logits = classifier_forward(params, dataset.images[i:i + batch])
        correct += int((logits.data.argmax(axis=1) == dataset.labels[i:i + batch]).sum())
    return correct / len(dataset)


def train_classifier(train_set, test_set, epochs=2, lr=1e-3, batch_size=64, seed=0, enforce_gate=True):
    """Train the scoring classifier with cross-entropy and Adam.

    Raises :class:`GateError` when test accuracy ends below the gate, unless
    ``enforce_gate`` is false (the accuracy is still recorded).
    """
    if len(train_set) == 0:
        raise DomainError("cannot train the classifier on an empty set")
    params = build_classifier(seed)
    state = AdamState(lr=lr, beta1=0.9, beta2=0.999, eps=1e-8)
    for epoch in range(epochs):
        for idx in make_batches(train_set, batch_size, seed, epoch):
            with Tape() as tape:
                _, logits = classifier_forward(params, train_set.images[idx])
                loss = ops.softmax_cross_entropy(logits, train_set.labels[idx])
                tape.backward(loss)
            grads = {k: tape.grad(v) for k, v in params.items()}
            params, state = adam_step(params, grads, state)
        log.info("classifier epoch %d done, last loss %.4f", epoch, loss.item())
    acc = classifier_accuracy(params, test_set)
    clf = FeatureClassifier(params, seed, epochs, acc)
    log.info("classifier test accuracy %.4f", acc)
    if enforce_gate:
        clf.require_gate()
    return clf


def extract_features(classifier, images, batch=500):
    """Penultimate features (N x 64) and softmax probabilities (N x 10)."""
    feats, probs = [], []
    images = np.asarray(images, dtype=np.float32)
    for i in range(0, len(images), batch):
        f, logits = classifier_forward(classifier.params, images[i:i + batch])
        feats.append(f.data.astype(np.float64))
        probs.append(ops.softmax(logits.data.astype(np.float64)))
    if not feats:
        return np.zeros((0, FEATURE_DIM)), np.zeros((0, 10))
    return np.concatenate(feats), np.concatenate(probs)


# ------------------------------------------------------------ inception score

def inception_score(probs, splits=10):
    """Mean and std over splits of ``exp(E_x KL(p(y|x) || p(y)))`` (nats).

    The mean KL of each split is floored at 0 so rounding cannot push the
    score below 1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeError(f"probabilities must be N x K, got {probs.shape}")
    n = probs.shape[0]
    if splits < 1 or n % splits:
        raise DomainError(f"{n} rows cannot be divided into {splits} equal splits")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-4):
        raise DomainError("every row must be a probability vector")
    scores = []
    for part in np.split(probs, splits):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        kl = max(terms.sum(axis=1).mean(), 0.0)
        scores.append(np.exp(kl))
    return float(np.mean(scores)), float(np.std(scores))


# ----------------------------------------------------------------------- FID

@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int


def gaussian_stats(features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DomainError(f"need at least two feature rows, got shape {x.shape}")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (x.shape[0] - 1)
    return GaussianStats(mu, (sigma + sigma.T) / 2.0, x.shape[0])


def matrix_sqrt_psd(a, tol=1e-6):
    """Symmetric PSD square root via eigendecomposition with clamped eigenvalues."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"matrix_sqrt_psd needs a square matrix, got {a.shape}")
    asym = np.abs(a - a.T).max() if a.size else 0.0
    if asym > tol:
        raise DomainError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    vals, vecs = np.linalg.eigh((a + a.T) / 2.0)
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return (root + root.T) / 2.0


def fid(stats1, stats2):
    """Frechet distance between two Gaussians, via sqrt(S1^1/2 S2 S1^1/2)."""
    if stats1.mu.shape != stats2.mu.shape or stats1.sigma.shape != stats2.sigma.shape:
        raise ShapeError(f"stats dimensions differ: {stats1.mu.shape} vs {stats2.mu.shape}")
    diff = stats1.mu - stats2.mu
    root1 = matrix_sqrt_psd(stats1.sigma)
    inner = root1 @ stats2.sigma @ root1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    value = diff @ diff + np.trace(stats1.sigma) + np.trace(stats2.sigma) - 2.0 * tr_cross
    return float(max(value, 0.0))


# ------------------------------------------------------------------- reports

@dataclass(frozen=True)
class ClassMetrics:
    class_id: int
    is_mean: float
    is_std: float
    fid: float
    n_generated: int
    n_real: int


@dataclass(frozen=True)
class MetricReport:
    rows: tuple
    seed: int
    pooled_is: tuple = (float("nan"), float("nan"))
    label: str = "model"
    extra: dict = field(default_factory=dict)

    @property
    def mean_is(self):
        return float(np.mean([r.is_mean for r in self.rows]))

    @property
    def mean_is_std(self):
        return float(np.mean([r.is_std for r in self.rows]))

    @property
    def mean_fid(self):
        return float(np.mean([r.fid for r in self.rows]))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "is_mean", "is_std", "fid"])
        for r in self.rows:
            writer.writerow([r.class_id, f"{r.is_mean:.6f}", f"{r.is_std:.6f}", f"{r.fid:.6f}"])
        writer.writerow(["mean", f"{self.mean_is:.6f}", f"{self.mean_is_std:.6f}", f"{self.mean_fid:.6f}"])
        return buf.getvalue()

    def to_markdown(self):
        lines = [f"IS per class ({self.label})", "", f"| Class | {self.label} |", "|---|---|"]
        lines += [f"| {r.class_id} | {r.is_mean:.3f} |" for r in self.rows]
        lines += [f"| mean | {self.mean_is:.3f} |", ""]
        lines += [f"FID per class ({self.label})", "", f"| Class | {self.label} |", "|---|---|"]
        lines += [f"| {r.class_id} | {r.fid:.3f} |" for r in self.rows]
        lines += [f"| mean | {self.mean_fid:.3f} |", ""]
        lines.append(f"Pooled IS over all {sum(r.n_generated for r in self.rows)} samples: "
                     f"{self.pooled_is[0]:.3f} +/- {self.pooled_is[1]:.3f} (seed {self.seed})")
        return "\n".join(lines) + "\n"


def real_class_stats(classifier, real_set, num_classes=10):
    stats = {}
    for c in range(num_classes):
        feats, _ = extract_features(classifier, real_set.of_class(c).images)
        stats[c] = gaussian_stats(feats)
    return stats


def generate_class_samples(gen_spec, gen_params, class_id, n, seed, batch=200):
    z = Rng(derive_seed(seed, _EVAL_KEY, class_id)).normal((n, gen_spec.z_dim))
    out = [forward_generator(gen_spec, gen_params, z[i:i + batch], np.full(len(z[i:i + batch]), class_id)).data
           for i in range(0, n, batch)]
    return np.concatenate(out)


def evaluate_generator(gen_spec, gen_params, classifier, real_set, n_per_class=200, seed=0,
                       splits=10, num_classes=10, label="model", real_stats=None):
    """Per-class IS (``splits`` splits) and per-class FID against real images of that class."""
    classifier.require_gate()
    if real_stats is None:
        real_stats = real_class_stats(classifier, real_set, num_classes)
    rows, all_probs = [], []
    for c in range(num_classes):
        samples = generate_class_samples(gen_spec, gen_params, c, n_per_class, seed)
        feats, probs = extract_features(classifier, samples)
        is_mean, is_std = inception_score(probs, splits)
        rows.append(ClassMetrics(c, is_mean, is_std, fid(gaussian_stats(feats), real_stats[c]),
                                 n_per_class, real_stats[c].n))
        all_probs.append(probs)
    pooled_probs = np.concatenate(all_probs)
    # Samples arrive grouped by class; shuffle so each split mixes classes.
    order = Rng(derive_seed(seed, _EVAL_KEY, -1)).permutation(len(pooled_probs))
    pooled = inception_score(pooled_probs[order], splits)
    return MetricReport(tuple(rows), seed, pooled, label)
