"""Reverse-mode differentiable compute over dense 2-D float64 arrays.

The graph is rebuilt on every forward pass: each primitive eagerly computes
its output and records a closure that routes adjoints back to its operands.
``backward`` replays the closures in reverse topological order. Interior
nodes get a fresh adjoint buffer on every call, while leaf (parameter)
gradients accumulate until the caller zeroes them, so independent loss
terms compose by addition.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Tensor2",
    "backward",
    "sigmoid_values",
    "matmul",
    "concat_cols",
    "slice_cols",
    "slice_rows",
    "row_gather",
    "sigmoid",
    "relu",
    "gate_mix",
    "stop_gradient",
    "bce_with_logits",
    "add",
    "add_row",
    "scale",
    "cmul",
    "sum_all",
]


def sigmoid_values(x):
    """Numerically stable logistic function on a raw float array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor2:
    """rows x cols float64 values plus a same-shape gradient buffer.

    Tensors constructed directly are leaves (parameters or constants) and
    own a private copy of their values; tensors produced by the ops below
    are interior graph nodes.
    """

    __slots__ = ("values", "grad", "_parents", "_backward")

    def __init__(self, values, _parents=(), _backward=None):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigError(f"Tensor2 needs a non-empty 2-D shape, got {arr.shape}")
        if not _parents:
            arr = arr.copy()
        self.values = arr
        self.grad = np.zeros(arr.shape, dtype=np.float64)
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_leaf(self):
        return not self._parents

    def zero_grad(self):
        self.grad[...] = 0.0

    def item(self):
        if self.values.shape != (1, 1):
            raise ConfigError(f"item() needs a 1x1 tensor, got {self.values.shape}")
        return float(self.values[0, 0])

    def __repr__(self):
        kind = "leaf" if self.is_leaf else "node"
        return f"Tensor2({self.rows}x{self.cols}, {kind})"


def backward(loss):
    """Propagate d(loss)/d(node) to every reachable tensor.

    Leaf gradients accumulate across calls; interior adjoints are reset at
    the start of each call so repeated backward passes simply add another
    copy of the exact gradient into the leaves.
    """
    if loss.shape != (1, 1):
        raise ConfigError(f"backward needs a scalar (1x1) loss node, got {loss.shape}")
    if loss.is_leaf:
        loss.grad += 1.0
        return

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    for node in topo:
        if node._parents:
            node.grad[...] = 0.0
    loss.grad[...] = 1.0
    for node in reversed(topo):
        fn = node._backward
        if fn is not None:
            fn()


def matmul(a, b):
    """Exact matrix product [m x k] @ [k x n] -> [m x n]."""
    if a.cols != b.rows:
        raise ConfigError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor2(a.values @ b.values, _parents=(a, b))

    def _bw():
        a.grad += out.grad @ b.values.T
        b.grad += a.values.T @ out.grad

    out._backward = _bw
    return out


def concat_cols(parts):
    """Concatenate tensors along columns; all parts must share the row count."""
    parts = list(parts)
    if not parts:
        raise ConfigError("concat_cols needs at least one part")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ConfigError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    spans = []
    lo = 0
    for p in parts:
        spans.append((lo, lo + p.cols))
        lo += p.cols
    out = Tensor2(np.concatenate([p.values for p in parts], axis=1), _parents=tuple(parts))

    def _bw():
        for p, (a, b) in zip(parts, spans):
            p.grad += out.grad[:, a:b]

    out._backward = _bw
    return out


def slice_cols(t, d):
    """First d columns; gradients route back into those columns only."""
    d = int(d)
    if not 1 <= d <= t.cols:
        raise ConfigError(f"slice_cols: d={d} out of range for {t.shape}")
    out = Tensor2(t.values[:, :d].copy(), _parents=(t,))

    def _bw():
        t.grad[:, :d] += out.grad

    out._backward = _bw
    return out


def slice_rows(t, d):
    """First d rows; gradients route back into those rows only."""
    d = int(d)
    if not 1 <= d <= t.rows:
        raise ConfigError(f"slice_rows: d={d} out of range for {t.shape}")
    out = Tensor2(t.values[:d, :].copy(), _parents=(t,))

    def _bw():
        t.grad[:d, :] += out.grad

    out._backward = _bw
    return out


def row_gather(table, idx):
    """Output row j = table row idx[j]; backward scatter-adds (duplicates accumulate)."""
    idx = np.asarray(idx)
    if idx.ndim != 1 or idx.size < 1:
        raise ConfigError(f"row_gather needs a non-empty 1-D index array, got shape {idx.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ConfigError(f"row_gather indices must be integers, got dtype {idx.dtype}")
    if idx.min() < 0 or idx.max() >= table.rows:
        raise DataError(
            f"row_gather index out of range [0, {table.rows}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    idx = idx.astype(np.int64, copy=False)
    out = Tensor2(table.values[idx], _parents=(table,))

    def _bw():
        np.add.at(table.grad, idx, out.grad)

    out._backward = _bw
    return out


def sigmoid(t):
    y = sigmoid_values(t.values)
    out = Tensor2(y, _parents=(t,))

    def _bw():
        t.grad += out.grad * y * (1.0 - y)

    out._backward = _bw
    return out


def relu(t):
    mask = t.values > 0
    out = Tensor2(np.where(mask, t.values, 0.0), _parents=(t,))

    def _bw():
        t.grad += out.grad * mask

    out._backward = _bw
    return out


def gate_mix(orig, shuffled, gates):
    """Per-column mix g*orig + (1-g)*shuffled with a [1 x d] gate row.

    No gradient ever flows into ``shuffled``: it is not a parent of the
    output node, which makes the stop-gradient guarantee structural rather
    than numerical.
    """
    if orig.shape != shuffled.shape:
        raise ConfigError(f"gate_mix shape mismatch: {orig.shape} vs {shuffled.shape}")
    if gates.rows != 1 or gates.cols != orig.cols:
        raise ConfigError(f"gate_mix gates must be 1x{orig.cols}, got {gates.shape}")
    g = gates.values
    out = Tensor2(g * orig.values + (1.0 - g) * shuffled.values, _parents=(orig, gates))

    def _bw():
        orig.grad += out.grad * g
        gates.grad += ((orig.values - shuffled.values) * out.grad).sum(axis=0, keepdims=True)

    out._backward = _bw
    return out


def stop_gradient(t):
    """Forward identity whose backward contribution is exactly zero."""
    return Tensor2(t.values.copy(), _parents=(t,), _backward=None)


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy on logits [B x 1], numerically stable."""
    if logits.cols != 1:
        raise ConfigError(f"bce_with_logits expects [B x 1] logits, got {logits.shape}")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != logits.rows:
        raise ConfigError(f"bce_with_logits: {logits.rows} logits vs {y.shape[0]} labels")
    if y.size == 0:
        raise ConfigError("bce_with_logits: empty batch")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("bce_with_logits: labels must be 0 or 1")
    z = logits.values[:, 0]
    per_sample = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = Tensor2(np.array([[per_sample.mean()]]), _parents=(logits,))

    def _bw():
        s = out.grad[0, 0]
        logits.grad[:, 0] += s * (sigmoid_values(z) - y) / y.size

    out._backward = _bw
    return out


def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ConfigError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor2(a.values + b.values, _parents=(a, b))

    def _bw():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = _bw
    return out


def add_row(t, row):
    """Broadcast-add a [1 x n] row to every row of a [B x n] tensor."""
    if row.rows != 1 or row.cols != t.cols:
        raise ConfigError(f"add_row needs a 1x{t.cols} row, got {row.shape}")
    out = Tensor2(t.values + row.values, _parents=(t, row))

    def _bw():
        t.grad += out.grad
        row.grad += out.grad.sum(axis=0, keepdims=True)

    out._backward = _bw
    return out


def scale(t, c):
    """Multiply by a python float constant."""
    c = float(c)
    out = Tensor2(t.values * c, _parents=(t,))

    def _bw():
        t.grad += out.grad * c

    out._backward = _bw
    return out


def cmul(t, const):
    """Elementwise multiply by a constant array of the same shape (no gradient for it)."""
    const = np.asarray(const, dtype=np.float64)
    if const.shape != t.shape:
        raise ConfigError(f"cmul constant shape {const.shape} != tensor shape {t.shape}")
    out = Tensor2(t.values * const, _parents=(t,))

    def _bw():
        t.grad += out.grad * const

    out._backward = _bw
    return out


def sum_all(t):
    """Sum of all entries as a [1 x 1] node."""
    out = Tensor2(np.array([[t.values.sum()]]), _parents=(t,))

    def _bw():
        t.grad += out.grad[0, 0]

    out._backward = _bw
    return out
