"""Difference-image weight masks and stochastic weight dropout.

Pipeline per class: a template is averaged from generator draws, every real
sample is differenced against it, the differences are averaged into a map
``p``, and the mask is the min-max normalized reciprocal of ``p``. Pixels
that habitually disagree with the template get weights near 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .models import forward_generator
from .rng import Rng, derive_seed

DEFAULT_EPSILON = 1e-6
_TEMPLATE_KEY = 3


@dataclass(frozen=True)
class DifferenceStack:
    d: np.ndarray  # M x H x W, entries >= 0
    class_id: int = -1

    @property
    def count(self):
        return self.d.shape[0]


@dataclass(frozen=True)
class AverageDifferenceMap:
    p: np.ndarray
    class_id: int = -1
    count: int = 0


@dataclass(frozen=True)
class WeightMaskImage:
    mask: np.ndarray
    class_id: int = -1
    epsilon: float = DEFAULT_EPSILON


@dataclass(frozen=True)
class DropoutMask:
    masks: dict
    q: float
    seed: int = 0


@dataclass(frozen=True)
class WeightMaskSet:
    masks: tuple  # 10 WeightMaskImage
    averages: tuple = ()
    templates: tuple = ()

    def as_array(self, dtype=np.float32):
        return np.stack([m.mask for m in self.masks]).astype(dtype)


def identity_masks(num_classes=10, shape=(28, 28)):
    return np.ones((num_classes,) + shape, dtype=np.float32)


def class_template(gen_spec, gen_params, class_id, draws=16, seed=0):
    """Mean of ``draws`` generator samples for ``class_id``, rescaled to [0, 1]."""
    if draws < 1:
        raise DomainError(f"template needs at least one draw, got {draws}")
    z = Rng(seed).normal((draws, gen_spec.z_dim))
    out = forward_generator(gen_spec, gen_params, z, np.full(draws, class_id), training=False)
    mean = out.data[:, 0].astype(np.float64).mean(axis=0)
    return (mean + 1.0) / 2.0


def compute_difference_stack(samples, template, class_id=-1):
    samples = np.asarray(samples, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    if samples.ndim == template.ndim:
        samples = samples[None]
    if samples.ndim != template.ndim + 1 or samples.shape[1:] != template.shape or samples.shape[0] < 1:
        raise ShapeError(f"samples {samples.shape} do not match template {template.shape}")
    return DifferenceStack(np.abs(samples - template), class_id)


def average_map(stack):
    d = stack.d if isinstance(stack, DifferenceStack) else np.asarray(stack, dtype=np.float64)
    class_id = stack.class_id if isinstance(stack, DifferenceStack) else -1
    if d.shape[0] < 1:
        raise DomainError("average_map needs at least one difference image")
    return AverageDifferenceMap(d.mean(axis=0), class_id, d.shape[0])


def normalize_mask(avg, epsilon=DEFAULT_EPSILON):
    """Min-max normalize ``1 / max(p, epsilon)``; a constant map gives all ones."""
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    p = avg.p if isinstance(avg, AverageDifferenceMap) else np.asarray(avg, dtype=np.float64)
    class_id = avg.class_id if isinstance(avg, AverageDifferenceMap) else -1
    r = 1.0 / np.maximum(p, epsilon)
    lo, hi = r.min(), r.max()
    if hi == lo:
        return WeightMaskImage(np.ones_like(r), class_id, epsilon)
    return WeightMaskImage((r - lo) / (hi - lo), class_id, epsilon)


def build_mask_set(gen_spec, gen_params, dataset, samples_per_class=100, draws=16,
                   epsilon=DEFAULT_EPSILON, seed=0, num_classes=10):
    """Run template -> differences -> average -> mask for every class.

    Uses the first ``samples_per_class`` members of each class in dataset
    order; the template for class ``c`` uses noise stream
    ``derive_seed(seed, 3, c)``.
    """
    masks, averages, templates = [], [], []
    for c in range(num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < samples_per_class:
            raise DomainError(f"class {c} has {len(members)} samples, mask needs {samples_per_class}")
        real = (dataset.images[members[:samples_per_class], 0].astype(np.float64) + 1.0) / 2.0
        template = class_template(gen_spec, gen_params, c, draws, derive_seed(seed, _TEMPLATE_KEY, c))
        avg = average_map(compute_difference_stack(real, template, c))
        masks.append(normalize_mask(avg, epsilon))
        averages.append(avg)
        templates.append(template)
    return WeightMaskSet(tuple(masks), tuple(averages), tuple(templates))


def sample_weight_dropout(shapes, q, seed=0, rng=None):
    """Bernoulli(1 - q) keep indicators for every named weight shape.

    Draws from ``rng`` when given (the training run's stream), else from a
    fresh stream seeded by ``seed``. Names are visited in sorted order.
    """
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"dropout probability must lie in [0, 1], got {q}")
    rng = rng if rng is not None else Rng(seed)
    masks = {name: rng.bernoulli(shapes[name], 1.0 - q) for name in sorted(shapes)}
    return DropoutMask(masks, q, seed)
