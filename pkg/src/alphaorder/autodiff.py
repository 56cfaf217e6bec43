"""Minimal reverse-mode autodiff on float64 numpy arrays.

Just enough machinery for LSTM cells, the attention pointer, and small MLP
heads: elementwise arithmetic with numpy broadcasting, matrix products,
activations, slicing/stacking, and a numerically stable log-sum-exp. Graphs
are built eagerly by the ops and traversed once by ``backward``; gradients
accumulate on the leaf ``Var``s.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Var, ...] = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may be shared with or be a view of another node's buffer
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g, out):
        a.add_grad(_unbroadcast(g, a.value.shape))
        b.add_grad(_unbroadcast(g, b.value.shape))

    return Var(a.value + b.value, (a, b), bw)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g, out):
        a.add_grad(_unbroadcast(g, a.value.shape))
        b.add_grad(_unbroadcast(-g, b.value.shape))

    return Var(a.value - b.value, (a, b), bw)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g, out):
        a.add_grad(_unbroadcast(g * b.value, a.value.shape))
        b.add_grad(_unbroadcast(g * a.value, b.value.shape))

    return Var(a.value * b.value, (a, b), bw)


def scale(a, k: float) -> Var:
    a = as_var(a)

    def bw(g, out):
        a.add_grad(g * k)

    return Var(a.value * k, (a,), bw)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g, out):
        av, bv = a.value, b.value
        if av.ndim == 2 and bv.ndim == 1:
            a.add_grad(np.outer(g, bv))
            b.add_grad(av.T @ g)
        elif av.ndim == 2 and bv.ndim == 2:
            a.add_grad(g @ bv.T)
            b.add_grad(av.T @ g)
        elif av.ndim == 1 and bv.ndim == 2:
            a.add_grad(g @ bv.T)
            b.add_grad(np.outer(av, g))
        else:  # 1D @ 1D inner product
            a.add_grad(g * bv)
            b.add_grad(g * av)

    return Var(a.value @ b.value, (a, b), bw)


def tanh(a) -> Var:
    a = as_var(a)
    out_val = np.tanh(a.value)

    def bw(g, out):
        a.add_grad(g * (1.0 - out.value**2))

    return Var(out_val, (a,), bw)


def sigmoid(a) -> Var:
    a = as_var(a)
    out_val = 1.0 / (1.0 + np.exp(-np.clip(a.value, -60.0, 60.0)))

    def bw(g, out):
        a.add_grad(g * out.value * (1.0 - out.value))

    return Var(out_val, (a,), bw)


def relu(a) -> Var:
    a = as_var(a)

    def bw(g, out):
        a.add_grad(g * (a.value > 0.0))

    return Var(np.maximum(a.value, 0.0), (a,), bw)


def vslice(a, start: int, stop: int) -> Var:
    a = as_var(a)

    def bw(g, out):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        a.add_grad(full)

    return Var(a.value[start:stop], (a,), bw)


def pick(a, index: int) -> Var:
    """Select one element of a vector as a scalar."""
    a = as_var(a)

    def bw(g, out):
        full = np.zeros_like(a.value)
        full[index] = g
        a.add_grad(full)

    return Var(a.value[index], (a,), bw)


def gather(a, indices) -> Var:
    a = as_var(a)
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g, out):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        a.add_grad(full)

    return Var(a.value[idx], (a,), bw)


def stack_rows(rows) -> Var:
    rows = [as_var(r) for r in rows]

    def bw(g, out):
        for i, r in enumerate(rows):
            r.add_grad(g[i])

    return Var(np.stack([r.value for r in rows]), tuple(rows), bw)


def vsum(a) -> Var:
    a = as_var(a)

    def bw(g, out):
        a.add_grad(np.full_like(a.value, g))

    return Var(a.value.sum(), (a,), bw)


def logsumexp(a) -> Var:
    """log(sum(exp(a))) over a vector, stabilized by max subtraction."""
    a = as_var(a)
    m = float(np.max(a.value))
    shifted = np.exp(a.value - m)
    total = float(shifted.sum())
    softmax = shifted / total

    def bw(g, out):
        a.add_grad(g * softmax)

    return Var(m + np.log(total), (a,), bw)


def backward(root: Var, adjoint=None) -> None:
    """Accumulate d(root)/d(leaf) into every reachable Var's ``grad``."""
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    root.add_grad(
        np.ones_like(root.value) if adjoint is None else np.asarray(adjoint, dtype=np.float64)
    )
    for node in reversed(topo):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad, node)
