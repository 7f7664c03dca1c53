"""Finite-difference gradient checking."""

import numpy as np

from ..errors import NonFiniteError
from .tensor import Tape, Tensor


def grad_check(fn, inputs, h=1e-3, analytic_override=None):
    """Max relative error between tape gradients and central differences.

    ``fn`` maps a list of tensors to a scalar tensor; ``inputs`` is a list of
    arrays (promoted to float64). The error per coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``. ``analytic_override`` may transform
    the analytic gradients before comparison (used to test the checker).
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(tensors)
        tape.backward(out)
    analytic = [tape.grad(t) for t in tensors]
    if analytic_override is not None:
        analytic = [analytic_override(g) for g in analytic]

    def evaluate(values):
        value = float(fn([Tensor(v) for v in values]).data)
        if not np.isfinite(value):
            raise NonFiniteError("grad_check: function evaluated to a non-finite value")
        return value

    worst = 0.0
    for idx, base in enumerate(arrays):
        flat = base.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = evaluate(arrays)
            flat[k] = orig - h
            f_minus = evaluate(arrays)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = float(analytic[idx].reshape(-1)[k])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
