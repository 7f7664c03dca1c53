"""Adversarial training loop, checkpoint persistence and resume."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import mnist
from ..autodiff import ops
from ..autodiff.optim import AdamState, adam_step
from ..autodiff.tensor import Tape, Tensor
from ..errors import FormatError, NonFiniteError, TrainingAborted
from ..models import (
    build_discriminator,
    build_generator,
    forward_discriminator,
    forward_generator,
    make_models,
    merge_bn_updates,
    trainable,
)
from ..rng import Rng, derive_seed
from ..weight_mask import build_mask_set, identity_masks, sample_weight_dropout
from . import container
from .config import RunConfig

log = logging.getLogger(__name__)

FORMAT_KIND = "rwmcgan-checkpoint"
INIT_NAME = "init.rwmc"
LAST_NAME = "last.rwmc"

_G_INIT, _D_INIT, _RUN_STREAM, _MASK_STREAM = 10, 11, 12, 13


@dataclass
class TrainState:
    config: RunConfig
    g_params: dict
    d_params: dict
    g_opt: AdamState
    d_opt: AdamState
    masks: np.ndarray
    rng: Rng
    step: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0

    @property
    def specs(self):
        c = self.config
        return make_models(c.residual_units, c.weight_mask, c.dropout_q, c.mask_spatial, c.weight_dropout, c.z_dim)


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)  # (step, epoch, d_loss, g_loss, wall_time)
    mask_refreshes: list = field(default_factory=list)  # (step, epoch)

    def to_csv(self):
        # Wall-clock times are left out so the file is reproducible byte for byte.
        lines = ["step,epoch,d_loss,g_loss"]
        lines += [f"{s},{e},{d:.9g},{g:.9g}" for s, e, d, g, _ in self.steps]
        return "\n".join(lines) + "\n"


def initial_state(config):
    g_spec, d_spec = make_models(config.residual_units, config.weight_mask, config.dropout_q,
                                 config.mask_spatial, config.weight_dropout, config.z_dim)
    opt = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    return TrainState(
        config=config,
        g_params=build_generator(g_spec, derive_seed(config.seed, _G_INIT)),
        d_params=build_discriminator(d_spec, derive_seed(config.seed, _D_INIT)),
        g_opt=AdamState(**opt),
        d_opt=AdamState(**opt),
        masks=identity_masks(),
        rng=Rng(derive_seed(config.seed, _RUN_STREAM)),
    )


# -------------------------------------------------------------- checkpoints

def _opt_meta(opt):
    return {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step}


def state_tensors(state):
    tensors = {}
    for prefix, params in (("G", state.g_params), ("D", state.d_params)):
        for name, t in params.items():
            tensors[f"{prefix}/{name}"] = t.data
    for prefix, opt in (("optG", state.g_opt), ("optD", state.d_opt)):
        for name in sorted(opt.m):
            tensors[f"{prefix}/m/{name}"] = opt.m[name]
            tensors[f"{prefix}/v/{name}"] = opt.v[name]
    tensors["masks"] = state.masks
    return tensors


def save_checkpoint(state, path):
    meta = {
        "kind": FORMAT_KIND,
        "config": state.config.to_dict(),
        "rng_state": state.rng.get_state(),
        "rng_seed": state.rng.seed,
        "step": state.step,
        "epoch": state.epoch,
        "batch_in_epoch": state.batch_in_epoch,
        "optG": _opt_meta(state.g_opt),
        "optD": _opt_meta(state.d_opt),
        "trainable": sorted(f"G/{k}" for k, v in state.g_params.items() if v.requires_grad)
        + sorted(f"D/{k}" for k, v in state.d_params.items() if v.requires_grad),
    }
    container.write(path, state_tensors(state), meta)


def load_checkpoint(path):
    tensors, meta = container.read(path)
    if meta.get("kind") != FORMAT_KIND:
        raise FormatError(f"{path}: not a GAN checkpoint (kind={meta.get('kind')!r})")
    config = RunConfig.from_dict(meta["config"])
    grad_names = set(meta["trainable"])
    g_params, d_params = {}, {}
    opt_parts = {"optG": ({}, {}), "optD": ({}, {})}
    masks = None
    for name, arr in tensors.items():
        head, _, rest = name.partition("/")
        if head in ("G", "D"):
            target = g_params if head == "G" else d_params
            target[rest] = Tensor(arr, requires_grad=name in grad_names)
        elif head in opt_parts:
            which, _, pname = rest.partition("/")
            opt_parts[head][0 if which == "m" else 1][pname] = arr
        elif name == "masks":
            masks = arr
        else:
            raise FormatError(f"{path}: unexpected tensor {name!r}")
    rng = Rng(meta["rng_seed"])
    rng.set_state(meta["rng_state"])

    def opt(key):
        m, v = opt_parts[key]
        o = meta[key]
        return AdamState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"], m, v)

    return TrainState(config, g_params, d_params, opt("optG"), opt("optD"),
                      masks if masks is not None else identity_masks(), rng,
                      meta["step"], meta["epoch"], meta["batch_in_epoch"])


def load_training_data(config):
    train = mnist.load_split(config.data_dir, "train")
    return mnist.subset_per_class(train, config.subset_per_class, config.seed)


# ------------------------------------------------------------------- loop

def _check(value, step, what):
    if not np.isfinite(value):
        raise TrainingAborted(step, f"non-finite {what} ({value})")


def train_step(state, data, idx, log_=None):
    """One discriminator update followed by one generator update."""
    c = state.config
    g_spec, d_spec = state.specs
    real = data.images[idx]
    labels = data.labels[idx]
    n = len(idx)
    z = state.rng.normal((n, c.z_dim))
    dropout = None
    if d_spec.variant == "rwm" and d_spec.weight_dropout_prob > 0:
        shapes = {k: state.d_params[k].shape for k in d_spec.conv_weight_names()}
        dropout = sample_weight_dropout(shapes, d_spec.weight_dropout_prob, rng=state.rng).masks
    mask = state.masks if d_spec.mask_enabled else None
    real_target = 1.0 - c.label_smoothing

    bn_updates = {}
    with Tape() as g_tape:
        fake = forward_generator(g_spec, state.g_params, z, labels, training=True, bn_updates=bn_updates)

    with Tape() as d_tape:
        d_real = forward_discriminator(d_spec, state.d_params, real, labels, mask, dropout)
        d_fake = forward_discriminator(d_spec, state.d_params, Tensor(fake.data), labels, mask, dropout)
        d_loss = ops.bce_with_logits(d_real, np.full(n, real_target, np.float32)) + \
            ops.bce_with_logits(d_fake, np.zeros(n, np.float32))
        d_tape.backward(d_loss)
    _check(d_loss.item(), state.step, "discriminator loss")
    d_trainable = trainable(state.d_params)
    state.d_params, state.d_opt = adam_step(
        state.d_params, {k: d_tape.grad(v) for k, v in d_trainable.items()}, state.d_opt)

    with g_tape:
        g_logits = forward_discriminator(d_spec, state.d_params, fake, labels, mask, dropout)
        g_loss = ops.bce_with_logits(g_logits, np.ones(n, np.float32))
        g_tape.backward(g_loss)
    _check(g_loss.item(), state.step, "generator loss")
    g_trainable = trainable(state.g_params)
    new_g, state.g_opt = adam_step(state.g_params, {k: g_tape.grad(v) for k, v in g_trainable.items()}, state.g_opt)
    state.g_params = merge_bn_updates(new_g, bn_updates)
    for name, t in state.g_params.items():
        if not np.all(np.isfinite(t.data)):
            raise TrainingAborted(state.step, f"non-finite generator parameter {name}")
    state.step += 1
    if log_ is not None:
        log_.steps.append((state.step, state.epoch, d_loss.item(), g_loss.item(), time.time()))
    return d_loss.item(), g_loss.item()


def refresh_masks(state, data):
    c = state.config
    g_spec, _ = state.specs
    # The few-shot subset may hold fewer than M members per class; use them all.
    m = min(c.mask_samples, c.subset_per_class)
    mask_set = build_mask_set(g_spec, state.g_params, data, m, c.mask_draws,
                              c.mask_epsilon, derive_seed(c.seed, _MASK_STREAM, state.epoch))
    state.masks = mask_set.as_array()
    return mask_set


def train_gan(config=None, state=None, data=None, out_dir=None, max_steps=None, write_checkpoints=True):
    """Train from ``config`` (or resume ``state``) and return ``(state, log)``.

    Stops after ``config.epochs`` epochs or when the global step reaches
    ``max_steps`` (argument, else ``config.max_steps`` when non-zero).
    ``last.rwmc`` is rewritten at every epoch end and when stopping; the
    untrained state goes to ``init.rwmc``.
    """
    if state is None:
        state = initial_state(config)
    config = state.config
    data = data if data is not None else load_training_data(config)
    out = Path(out_dir if out_dir is not None else config.out_dir)
    limit = max_steps if max_steps is not None else (config.max_steps or None)
    train_log = TrainLog()
    resumed = state.step > 0
    if write_checkpoints:
        out.mkdir(parents=True, exist_ok=True)
        if state.step == 0 and not (out / INIT_NAME).exists():
            save_checkpoint(state, out / INIT_NAME)

    mask_active = config.weight_mask and config.mask_spatial
    try:
        while state.epoch < config.epochs:
            if limit is not None and state.step >= limit:
                break
            batches = mnist.make_batches(data, config.batch_size, config.seed, state.epoch)
            if (state.batch_in_epoch == 0 and mask_active and state.epoch > 0
                    and state.epoch % config.mask_refresh_epochs == 0):
                refresh_masks(state, data)
                train_log.mask_refreshes.append((state.step, state.epoch))
                log.info("masks refreshed at epoch %d (step %d)", state.epoch, state.step)
            while state.batch_in_epoch < len(batches):
                if limit is not None and state.step >= limit:
                    break
                d_loss, g_loss = train_step(state, data, batches[state.batch_in_epoch], train_log)
                state.batch_in_epoch += 1
            else:
                state.epoch += 1
                state.batch_in_epoch = 0
                log.info("epoch %d done: step %d d_loss %.4f g_loss %.4f", state.epoch, state.step, d_loss, g_loss)
                if write_checkpoints:
                    save_checkpoint(state, out / LAST_NAME)
                continue
            break
    except NonFiniteError as exc:
        raise TrainingAborted(state.step, str(exc)) from exc
    if write_checkpoints:
        save_checkpoint(state, out / LAST_NAME)
        log_path = out / "train_log.csv"
        if resumed and log_path.exists():
            rows = train_log.to_csv().split("\n", 1)[1]
            with log_path.open("a", encoding="utf-8") as fh:
                fh.write(rows)
        else:
            log_path.write_text(train_log.to_csv(), encoding="utf-8")
    return state, train_log
