"""Dense tensors and the recording tape that drives reverse-mode gradients."""

from __future__ import annotations

import threading

import numpy as np

from ..errors import NonFiniteError, ShapeError

_local = threading.local()


def _tape_stack():
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional float array (order <= 4) with an optional gradient flag.

    Tensors are treated as immutable: operations always allocate new ones.
    Arrays that are not already floating point are stored as float32.
    """

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise ShapeError(f"tensor order {arr.ndim} exceeds 4 (shape {arr.shape})")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # Arithmetic is forwarded to the functional ops module.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


class Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Records operations executed inside ``with Tape() as tape:``.

    Nodes are appended in execution order, so the list is topologically
    sorted by construction. ``backward`` walks it in reverse and accumulates
    gradients of every reachable leaf with ``requires_grad`` into
    ``gradients`` (keyed by tensor identity); repeated calls keep adding
    until ``zero_grad`` is called.
    """

    def __init__(self):
        self.nodes = []
        self.gradients = {}
        self._leaves = {}

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, op, inputs, output, backward_fn):
        self.nodes.append(Node(op, inputs, output, backward_fn))

    def grad(self, tensor):
        return self.gradients.get(id(tensor))

    def zero_grad(self):
        self.gradients.clear()
        self._leaves.clear()

    def backward(self, root):
        if not isinstance(root, Tensor) or root.data.size != 1 or root.ndim > 1:
            shape = root.shape if isinstance(root, Tensor) else type(root).__name__
            raise ShapeError(f"backward root must be a scalar tensor, got {shape}")
        produced = {id(n.output) for n in self.nodes}
        if id(root) not in produced and not root.requires_grad:
            raise ValueError("backward root was not produced under this tape")

        grads = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        reachable = self._reachable_leaves(root, produced)
        for key, leaf in reachable.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
            if key in self.gradients:
                self.gradients[key] = self.gradients[key] + g
            else:
                self.gradients[key] = g
            self._leaves[key] = leaf
        return self.gradients

    def _reachable_leaves(self, root, produced):
        by_output = {id(n.output): n for n in self.nodes}
        leaves = {}
        seen = set()
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            node = by_output.get(id(t))
            if node is None:
                if t.requires_grad:
                    leaves[id(t)] = t
                continue
            stack.extend(i for i in node.inputs if i.requires_grad)
        return leaves


def backward(tape, root):
    """Populate ``tape.gradients`` with d(root)/d(leaf) and return it."""
    return tape.backward(root)


def make_result(op, data, inputs, backward_fn):
    """Wrap an op result, enforce finiteness and record it on the active tape."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad)
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.record(op, inputs, out, backward_fn)
    return out
