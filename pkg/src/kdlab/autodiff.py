"""Reverse-mode automatic differentiation over dense float64 arrays.

Deliberately small: only the operations a micro-transformer encoder and its
losses need (1D/2D tensors plus stacked 3D matmul for multi-head attention).
Gradients accumulate into leaf tensors until ``zero_grad``; every op is
deterministic given its inputs.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Sequence

import numpy as np

_node_ids = itertools.count()

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """A float64 array node in the autodiff graph.

    Leaf tensors (parameters, inputs) are created directly; op results carry
    a backward closure and references to their parents. ``grad`` is allocated
    lazily on first accumulation and has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))


def _op(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a trailing-axis bias (b of shape a.shape[-1:])."""
    if a.shape == b.shape:
        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a.accumulate(g)
            if b.requires_grad:
                b.accumulate(g)
    elif b.shape == a.shape[-1:]:
        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a.accumulate(g)
            if b.requires_grad:
                b.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
    else:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _op(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _op(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(g * s)

    return _op(a.data * s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 1D@2D, 2D@2D, or stacked 3D@3D (per-head attention)."""
    if a.data.ndim == 1 and b.data.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a.accumulate(b.data @ g)
            if b.requires_grad:
                b.accumulate(np.outer(a.data, g))

        return _op(a.data @ b.data, (a, b), backward)

    if a.data.ndim == b.data.ndim and a.data.ndim in (2, 3):
        if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
            raise ValueError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a.accumulate(g @ b.data.swapaxes(-1, -2))
            if b.requires_grad:
                b.accumulate(a.data.swapaxes(-1, -2) @ g)

        return _op(a.data @ b.data, (a, b), backward)

    raise ValueError(f"matmul: unsupported ranks {a.data.ndim} and {b.data.ndim}")


def transpose_last2(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(g.swapaxes(-1, -2))

    return _op(a.data.swapaxes(-1, -2), (a,), backward)


def split_heads(a: Tensor, n_heads: int) -> Tensor:
    """[seq, d] -> [n_heads, seq, d/n_heads]."""
    s, d = a.shape
    if d % n_heads:
        raise ValueError(f"split_heads: {d} not divisible by {n_heads}")
    dh = d // n_heads

    def backward(g: np.ndarray) -> None:
        a.accumulate(g.transpose(1, 0, 2).reshape(s, d))

    return _op(a.data.reshape(s, n_heads, dh).transpose(1, 0, 2), (a,), backward)


def merge_heads(a: Tensor) -> Tensor:
    """[n_heads, seq, dh] -> [seq, n_heads*dh]; inverse of split_heads."""
    h, s, dh = a.shape

    def backward(g: np.ndarray) -> None:
        a.accumulate(g.reshape(s, h, dh).transpose(1, 0, 2))

    return _op(a.data.transpose(1, 0, 2).reshape(s, h * dh), (a,), backward)


def first_row(a: Tensor) -> Tensor:
    """Row 0 of a 2D tensor (CLS-style pooling)."""

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[0] = g
        a.accumulate(full)

    return _op(a.data[0], (a,), backward)


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a.accumulate(full)

    return _op(a.data[idx], (a,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table; gradients scatter-add into it."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValueError(f"embedding: id out of range for table of {table.shape[0]} rows")

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table.accumulate(full)

    return _op(table.data[idx], (table,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        a.accumulate((g - (g * y).sum(axis=-1, keepdims=True)) * y)

    return _op(y, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then affine.

    A constant row has variance 0 and normalizes to zeros (so the output is
    just beta), which keeps degenerate inputs NaN-free.
    """
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv

    def backward(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.accumulate((g * y).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gz = g * gamma.data
            x.accumulate(inv * (gz - gz.mean(axis=-1, keepdims=True)
                                - y * (gz * y).mean(axis=-1, keepdims=True)))

    return _op(y * gamma.data + beta.data, (x, gamma, beta), backward)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU (smooth, so finite differences stay well behaved)."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)

    def backward(g: np.ndarray) -> None:
        dt = (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        a.accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * dt))

    return _op(0.5 * x * (1.0 + t), (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; p == 0 is the identity and draws nothing from rng."""
    if p <= 0.0:
        return a
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout: rate {p} outside [0, 1)")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * mask)

    return _op(a.data * mask, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(np.full_like(a.data, float(g)))

    return _op(np.asarray(a.data.sum()), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.full_like(a.data, float(g) / n))

    return _op(np.asarray(a.data.mean()), (a,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all elements; shapes must match exactly."""
    if a.shape != b.shape:
        raise ValueError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g: np.ndarray) -> None:
        d = (2.0 * float(g) / n) * diff
        if a.requires_grad:
            a.accumulate(d)
        if b.requires_grad:
            b.accumulate(-d)

    return _op(np.asarray(np.mean(diff * diff)), (a, b), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax probability of the target class.

    logits is [n, C] (a 1D [C] tensor is treated as a single row); targets is
    a sequence of class indices in [0, C).
    """
    raw = logits.data if logits.data.ndim == 2 else logits.data[None, :]
    n, n_classes = raw.shape
    t = np.asarray(targets, dtype=np.intp).reshape(-1)
    if t.shape[0] != n:
        raise ValueError(f"cross_entropy: {n} rows but {t.shape[0]} targets")
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise ValueError(f"cross_entropy: target out of range [0, {n_classes})")
    z = raw - raw.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(logp)

    def backward(g: np.ndarray) -> None:
        d = probs.copy()
        d[np.arange(n), t] -= 1.0
        d *= float(g) / n
        logits.accumulate(d.reshape(logits.shape))

    return _op(np.asarray(-logp[np.arange(n), t].mean()), (logits,), backward)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

    Interior op-node gradients are reset per call so repeated backward calls
    accumulate cleanly into leaves (two calls without zero_grad double them).
    """
    if loss.data.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.accumulate(np.ones((), dtype=np.float64))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central-difference gradients of f at x.

    f must be a pure scalar-valued function of x (it may close over other
    tensors). Relative error per coordinate is
    |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    x.zero_grad()
    loss = f(x)
    if loss.data.shape != ():
        raise ValueError("grad_check: f must be scalar-valued")
    backward(loss)
    g_ad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x).item()
        flat[i] = orig - h
        down = f(x).item()
        flat[i] = orig
        g_fd = (up - down) / (2.0 * h)
        g = g_ad.reshape(-1)[i]
        rel = abs(g - g_fd) / max(1.0, abs(g), abs(g_fd))
        worst = max(worst, rel)
    return worst
