"""Generator and discriminator architectures for the CGAN baseline and RWM-CGAN.

Models are plain parameter dicts (name -> Tensor) plus a frozen spec record;
forward passes are functions of both. Batch-norm running statistics live in
the same dict as non-trainable tensors. Forwards never mutate the dict: in
training mode they report refreshed statistics through ``bn_updates`` and
the caller decides whether to merge them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.ops import BatchNormState
from .autodiff.tensor import Tensor
from .errors import DomainError, ShapeError
from .rng import Rng

IMAGE_SHAPE = (1, 28, 28)
INIT_STD = 0.02


@dataclass(frozen=True)
class LayerRecord:
    name: str
    kind: str  # "affine", "conv", "conv_transpose", "batchnorm", "residual"
    kernel: int = 0
    stride: int = 0
    in_features: int = 0
    out_features: int = 0


@dataclass(frozen=True)
class ResidualBlockSpec:
    in_channels: int
    out_channels: int
    stride: int = 1

    @property
    def projected(self):
        return self.in_channels != self.out_channels or self.stride != 1


@dataclass(frozen=True)
class GeneratorSpec:
    variant: str = "rwm"  # "baseline" (fully connected) or "rwm" (conv + residual units)
    z_dim: int = 100
    num_classes: int = 10

    def __post_init__(self):
        if self.variant not in ("baseline", "rwm"):
            raise DomainError(f"unknown generator variant {self.variant!r}")

    def layers(self):
        c_in = self.z_dim + self.num_classes
        if self.variant == "baseline":
            return [
                LayerRecord("fc1", "affine", in_features=c_in, out_features=256),
                LayerRecord("fc2", "affine", in_features=256, out_features=512),
                LayerRecord("fc3", "affine", in_features=512, out_features=784),
            ]
        return [
            LayerRecord("fc", "affine", in_features=c_in, out_features=64 * 7 * 7),
            LayerRecord("bn0", "batchnorm"),
            LayerRecord("res1", "residual", kernel=3, stride=1, in_features=64, out_features=64),
            LayerRecord("up1", "conv_transpose", kernel=4, stride=2, in_features=64, out_features=32),
            LayerRecord("bn1", "batchnorm"),
            LayerRecord("res2", "residual", kernel=3, stride=1, in_features=32, out_features=32),
            LayerRecord("up2", "conv_transpose", kernel=4, stride=2, in_features=32, out_features=1),
        ]


@dataclass(frozen=True)
class DiscriminatorSpec:
    variant: str = "rwm"
    num_classes: int = 10
    mask_enabled: bool = True
    weight_dropout_prob: float = 0.1

    def __post_init__(self):
        if self.variant not in ("baseline", "rwm"):
            raise DomainError(f"unknown discriminator variant {self.variant!r}")
        if not 0.0 <= self.weight_dropout_prob <= 1.0:
            raise DomainError(f"weight_dropout_prob must lie in [0, 1], got {self.weight_dropout_prob}")

    def layers(self):
        if self.variant == "baseline":
            return [
                LayerRecord("fc1", "affine", in_features=784 + self.num_classes, out_features=512),
                LayerRecord("fc2", "affine", in_features=512, out_features=256),
                LayerRecord("fc3", "affine", in_features=256, out_features=1),
            ]
        c0 = 1 + self.num_classes
        return [
            LayerRecord("conv1", "conv", 3, 2, c0, 16),
            LayerRecord("conv2", "conv", 3, 2, 16, 32),
            LayerRecord("conv3", "conv", 3, 2, 32, 64),
            LayerRecord("head", "conv", 1, 1, 64, 1),
        ]

    def conv_weight_names(self):
        return [f"{layer.name}.weight" for layer in self.layers() if layer.kind == "conv"]


# -------------------------------------------------------------- param helpers

class _Init:
    def __init__(self, seed):
        self.rng = Rng(seed)
        self.params = {}

    def normal(self, name, shape, std=INIT_STD):
        self.params[name] = Tensor(self.rng.normal(shape) * np.float32(std), requires_grad=True)

    def zeros(self, name, shape):
        self.params[name] = Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    def batchnorm(self, name, channels):
        self.params[f"{name}.gamma"] = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        state = BatchNormState.fresh(channels)
        self.params[f"{name}.running_mean"] = Tensor(state.running_mean)
        self.params[f"{name}.running_var"] = Tensor(state.running_var)

    def residual(self, name, spec):
        self.normal(f"{name}.conv1.weight", (spec.out_channels, spec.in_channels, 3, 3))
        self.batchnorm(f"{name}.bn1", spec.out_channels)
        self.normal(f"{name}.conv2.weight", (spec.out_channels, spec.out_channels, 3, 3))
        self.batchnorm(f"{name}.bn2", spec.out_channels)
        if spec.projected:
            self.normal(f"{name}.proj.weight", (spec.out_channels, spec.in_channels, 1, 1))
            self.zeros(f"{name}.proj.bias", (spec.out_channels,))


def residual_block_params(spec, seed, prefix="block"):
    init = _Init(seed)
    init.residual(prefix, spec)
    return init.params


def trainable(params):
    return {k: v for k, v in params.items() if v.requires_grad}


def _bn(x, params, name, training, bn_updates):
    state = BatchNormState(params[f"{name}.running_mean"].data, params[f"{name}.running_var"].data)
    out, new_state = ops.batchnorm2d(x, params[f"{name}.gamma"], params[f"{name}.beta"], state, training)
    if training and bn_updates is not None:
        bn_updates[f"{name}.running_mean"] = new_state.running_mean
        bn_updates[f"{name}.running_var"] = new_state.running_var
    return out


def merge_bn_updates(params, bn_updates):
    merged = dict(params)
    for name, arr in bn_updates.items():
        merged[name] = Tensor(arr)
    return merged


def one_hot(labels, num_classes=10, dtype=np.float32):
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise DomainError(f"class labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


# ------------------------------------------------------------ residual block

def residual_block(x, spec, params, prefix="block", training=True, bn_updates=None):
    """``relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x))``.

    ``conv1`` is 3x3 with the block's stride, ``conv2`` is 3x3 stride 1. The
    skip is the identity when shapes agree and a 1x1 convolution with the
    block's stride otherwise.
    """
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"residual_block: input {x.shape} does not have {spec.in_channels} channels")
    p = prefix
    h = ops.conv2d(x, params[f"{p}.conv1.weight"], stride=spec.stride, padding=1)
    h = ops.relu(_bn(h, params, f"{p}.bn1", training, bn_updates))
    h = ops.conv2d(h, params[f"{p}.conv2.weight"], stride=1, padding=1)
    h = _bn(h, params, f"{p}.bn2", training, bn_updates)
    if spec.projected:
        skip = ops.conv2d(x, params[f"{p}.proj.weight"], params[f"{p}.proj.bias"], stride=spec.stride)
    else:
        skip = x
    return ops.relu(h + skip)


# ---------------------------------------------------------------- generator

_G_RES1 = ResidualBlockSpec(64, 64)
_G_RES2 = ResidualBlockSpec(32, 32)


def build_generator(spec, seed):
    init = _Init(seed)
    c_in = spec.z_dim + spec.num_classes
    if spec.variant == "baseline":
        for layer in spec.layers():
            init.normal(f"{layer.name}.weight", (layer.in_features, layer.out_features))
            init.zeros(f"{layer.name}.bias", (layer.out_features,))
        return init.params
    init.normal("fc.weight", (c_in, 64 * 7 * 7))
    init.zeros("fc.bias", (64 * 7 * 7,))
    init.batchnorm("bn0", 64)
    init.residual("res1", _G_RES1)
    init.normal("up1.weight", (64, 32, 4, 4))
    init.zeros("up1.bias", (32,))
    init.batchnorm("bn1", 32)
    init.residual("res2", _G_RES2)
    init.normal("up2.weight", (32, 1, 4, 4))
    init.zeros("up2.bias", (1,))
    return init.params


def forward_generator(spec, params, z, labels, training=False, bn_updates=None):
    """Class-conditional samples, N x 1 x 28 x 28 in [-1, 1]."""
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float32))
    onehot = Tensor(one_hot(labels, spec.num_classes, z.dtype))
    if z.ndim != 2 or z.shape[1] != spec.z_dim or z.shape[0] != onehot.shape[0]:
        raise ShapeError(f"generator: noise {z.shape} vs {onehot.shape[0]} labels, z_dim {spec.z_dim}")
    h = ops.concat([z, onehot], axis=1)
    n = z.shape[0]
    if spec.variant == "baseline":
        h = ops.relu(ops.affine(h, params["fc1.weight"], params["fc1.bias"]))
        h = ops.relu(ops.affine(h, params["fc2.weight"], params["fc2.bias"]))
        h = ops.tanh(ops.affine(h, params["fc3.weight"], params["fc3.bias"]))
        return h.reshape(n, *IMAGE_SHAPE)
    h = ops.affine(h, params["fc.weight"], params["fc.bias"]).reshape(n, 64, 7, 7)
    h = ops.relu(_bn(h, params, "bn0", training, bn_updates))
    h = residual_block(h, _G_RES1, params, "res1", training, bn_updates)
    h = ops.conv2d_transpose(h, params["up1.weight"], params["up1.bias"], stride=2, padding=1)
    h = ops.relu(_bn(h, params, "bn1", training, bn_updates))
    h = residual_block(h, _G_RES2, params, "res2", training, bn_updates)
    h = ops.conv2d_transpose(h, params["up2.weight"], params["up2.bias"], stride=2, padding=1)
    return ops.tanh(h)


# ------------------------------------------------------------- discriminator

def build_discriminator(spec, seed):
    init = _Init(seed)
    for layer in spec.layers():
        if layer.kind == "affine":
            init.normal(f"{layer.name}.weight", (layer.in_features, layer.out_features))
        else:
            init.normal(f"{layer.name}.weight", (layer.out_features, layer.in_features, layer.kernel, layer.kernel))
        init.zeros(f"{layer.name}.bias", (layer.out_features,))
    return init.params


def apply_spatial_mask(images, labels, mask):
    """Multiply each image by the mask of its class (mask is 10 x 28 x 28)."""
    mask = np.asarray(mask)
    if mask.shape != (10,) + IMAGE_SHAPE[1:]:
        raise ShapeError(f"mask shape {mask.shape} is not (10, 28, 28)")
    per_sample = mask[np.asarray(labels, dtype=np.int64)][:, None, :, :].astype(images.dtype)
    return images * per_sample


def forward_discriminator(spec, params, images, labels, mask=None, dropout_mask=None):
    """One real/fake logit per image, shape (N,).

    ``mask`` (10 x 28 x 28, values in [0, 1]) multiplies the image channel by
    the mask of each sample's class. ``dropout_mask`` maps conv weight names
    to binary arrays that multiply those weights.
    """
    images = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
    n = images.shape[0]
    if images.shape[1:] != IMAGE_SHAPE:
        raise ShapeError(f"discriminator: images {images.shape} are not N x 1 x 28 x 28")
    onehot = one_hot(labels, spec.num_classes, images.dtype)
    if onehot.shape[0] != n:
        raise ShapeError(f"discriminator: {n} images but {onehot.shape[0]} labels")
    if mask is not None:
        images = apply_spatial_mask(images, labels, mask)

    def weight(name):
        w = params[name]
        if dropout_mask is not None and name in dropout_mask:
            w = w * dropout_mask[name]
        return w

    if spec.variant == "baseline":
        h = ops.concat([images.reshape(n, 784), Tensor(onehot)], axis=1)
        h = ops.leaky_relu(ops.affine(h, weight("fc1.weight"), params["fc1.bias"]), 0.2)
        h = ops.leaky_relu(ops.affine(h, weight("fc2.weight"), params["fc2.bias"]), 0.2)
        return ops.affine(h, weight("fc3.weight"), params["fc3.bias"]).reshape(n)

    label_planes = Tensor(np.broadcast_to(onehot[:, :, None, None], (n, spec.num_classes, 28, 28)).copy())
    h = ops.concat([images, label_planes], axis=1)
    for name in ("conv1", "conv2", "conv3"):
        h = ops.leaky_relu(ops.conv2d(h, weight(f"{name}.weight"), params[f"{name}.bias"], stride=2, padding=1), 0.2)
    h = ops.conv2d(h, weight("head.weight"), params["head.bias"])
    return h.mean(axis=(1, 2, 3))


def parameter_manifest(params):
    return {name: tuple(t.shape) for name, t in params.items()}


def make_models(residual_units, weight_mask, dropout_q=0.1, mask_spatial=True, weight_dropout=True, z_dim=100):
    """Specs for one (RU, WM) cell of the ablation grid."""
    g = GeneratorSpec("rwm" if residual_units else "baseline", z_dim)
    if weight_mask:
        d = DiscriminatorSpec("rwm", mask_enabled=mask_spatial,
                              weight_dropout_prob=dropout_q if weight_dropout else 0.0)
    else:
        d = DiscriminatorSpec("baseline", mask_enabled=False, weight_dropout_prob=0.0)
    return g, d
