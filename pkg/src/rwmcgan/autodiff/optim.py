"""Adam with bias correction, in functional form."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one Adam update.

    ``params`` maps names to tensors, ``grads`` maps (a subset of) the same
    names to gradient arrays. Returns ``(new_params, new_state)``; the inputs
    are left untouched. Parameters without a gradient are carried over.
    """
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_params = dict(params)
    new_m, new_v = dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        g = np.asarray(g)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {name} {p.shape}")
        dtype = p.dtype
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=dtype)
            v = np.zeros(p.shape, dtype=dtype)
        elif m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"adam_step: moment shape mismatch for {name}")
        g = g.astype(dtype)
        m = (state.beta1 * m + (1 - state.beta1) * g).astype(dtype)
        v = (state.beta2 * v + (1 - state.beta2) * g * g).astype(dtype)
        m_hat = m / dtype.type(c1)
        v_hat = v / dtype.type(c2)
        update = dtype.type(state.lr) * m_hat / (np.sqrt(v_hat) + dtype.type(state.eps))
        new_params[name] = Tensor((p.data - update).astype(dtype), requires_grad=p.requires_grad)
        new_m[name], new_v[name] = m, v
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return new_params, new_state
