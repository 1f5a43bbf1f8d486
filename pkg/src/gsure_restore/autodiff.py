"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by the generator network and the fidelity losses
are provided. Feature maps are ``(C, H, W)`` arrays (batch size is always 1).
Convolutions use circular padding so the network shares the periodic
boundary convention of :mod:`gsure_restore.linop`.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """A float64 array with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self) -> None:
        """Populate ``.grad`` of every leaf reachable from this scalar.

        Leaf gradients are reset to zero first, so repeated calls on the same
        graph give the same result instead of accumulating.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topo_order(self)
        for node in order:
            if not node._parents:
                node.grad = np.zeros_like(node.data)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def total(a: Tensor) -> Tensor:
    return _node(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sumsq(a: Tensor) -> Tensor:
    """``||a||^2`` as a scalar node."""
    return _node(np.vdot(a.data, a.data), (a,), lambda g: (2.0 * g * a.data,))


def inner(a: Tensor, c: np.ndarray) -> Tensor:
    """``<a, c>`` against a constant array."""
    c = np.asarray(c, dtype=np.float64)
    return _node(np.vdot(a.data, c), (a,), lambda g: (g * c,))


def linear(a: Tensor, forward, adjoint) -> Tensor:
    """Apply a linear map given as a ``forward``/``adjoint`` pair of callables."""
    return _node(forward(a.data), (a,), lambda g: (adjoint(g),))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    pos = x.data > 0
    return _node(np.where(pos, x.data, slope * x.data), (x,), lambda g: (np.where(pos, g, slope * g),))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling of a ``(C, H, W)`` map."""
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return _node(out, (x,), lambda g: (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),))


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate ``(C, H, W)`` maps along channels."""
    parts = [lift(p) for p in parts]
    splits = np.cumsum([p.shape[0] for p in parts])[:-1]
    return _node(
        np.concatenate([p.data for p in parts], axis=0),
        tuple(parts),
        lambda g: tuple(np.split(g, splits, axis=0)),
    )


def _fold_circular(padded: np.ndarray, p: int) -> np.ndarray:
    """Adjoint of wrap-padding by ``p`` on the last two axes."""
    if p == 0:
        return padded
    h = padded.shape[-2] - 2 * p
    w = padded.shape[-1] - 2 * p
    rows = padded[..., p : p + h, :].copy()
    rows[..., h - p : h, :] += padded[..., :p, :]
    rows[..., :p, :] += padded[..., p + h :, :]
    out = rows[..., p : p + w].copy()
    out[..., w - p : w] += rows[..., :p]
    out[..., :p] += rows[..., p + w :]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Cross-correlation with circular padding ``k // 2`` and the given stride.

    ``x`` is ``(Cin, H, W)``, ``weight`` is ``(Cout, Cin, k, k)`` with odd
    ``k``. Output is ``(Cout, H // stride, W // stride)``.
    """
    cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin or k != k2 or k % 2 == 0:
        raise ValueError(f"bad conv shapes: input {x.shape}, weight {weight.shape}")
    if h % stride or w % stride:
        raise ValueError(f"spatial shape {h}x{w} not divisible by stride {stride}")
    p = k // 2
    if p > min(h, w):
        raise ValueError("kernel wider than feature map")
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p)), mode="wrap") if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1:3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(cin * k * k, ho * wo)
    w2 = weight.data.reshape(cout, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, ho, wo)

    def backward(g):
        g2 = g.reshape(cout, -1)
        dw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        db = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(cin, k, k, ho, wo)
            dxp = np.zeros(xp.shape)
            for a in range(k):
                for b in range(k):
                    dxp[:, a : a + stride * ho : stride, b : b + stride * wo : stride] += dcols[:, a, b]
            dx = _fold_circular(dxp, p)
        return (dx, dw, db) if bias is not None else (dx, dw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _node(out, parents, backward)
