"""Minimal reverse-mode autodiff sized for the embedding network and losses.

A Tensor wraps a float64 ndarray and records, per forward op, a closure
that routes the output gradient back to its parents. backward() walks the
graph in reverse topological order; the tape is dropped afterwards so
graphs are per-forward-pass and never reused. Higher-order derivatives
are out of scope.

Array-valued ops carry the batch axis explicitly: conv1d and maxpool1d
accept (C, L) single samples or (B, C, L) batches.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigurationError, TrainingError, UsageError

# exp() overflow guard: float64 overflows just above exp(709). Clamping the
# exponent keeps a badly mis-ordered triplet's loss finite without touching
# any value reachable in normal training.
_EXP_MIN = -700.0


class Tensor:
    """Graph node: a float64 array plus an accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def _add_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        self must be scalar (the loss). The recorded tape is released
        before returning.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._backward is None and not self.requires_grad:
            # A constant: nothing was recorded, gradients are all zero.
            return

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Release the tape; leaf .grad values survive.
        for node in order:
            node._parents = ()
            node._backward = None
            if not node.requires_grad and node is not self:
                node.grad = None

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise ops ----------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ConfigurationError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a._add_grad(g)
        b._add_grad(g)

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ConfigurationError(f"sub shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a._add_grad(g)
        b._add_grad(-g)

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b):
    """Elementwise product; b may be a python scalar or same-shape array."""
    a = _as_tensor(a)
    if np.isscalar(b):
        def backward(g):
            a._add_grad(g * b)

        return _node(a.data * b, (a,), backward)

    b = _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ConfigurationError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a._add_grad(g * b.data)
        b._add_grad(g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._add_grad(g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), backward)


def exp(a):
    a = _as_tensor(a)
    val = np.exp(np.maximum(a.data, _EXP_MIN))

    def backward(g):
        a._add_grad(g * val)

    return _node(val, (a,), backward)


def absval(a):
    """|a|; subgradient 0 at exactly 0."""
    a = _as_tensor(a)
    sign = np.sign(a.data)

    def backward(g):
        a._add_grad(g * sign)

    return _node(np.abs(a.data), (a,), backward)


def square(a):
    a = _as_tensor(a)

    def backward(g):
        a._add_grad(g * 2.0 * a.data)

    return _node(a.data * a.data, (a,), backward)


def sqrt(a):
    a = _as_tensor(a)
    val = np.sqrt(a.data)

    def backward(g):
        # Derivative capped near 0 to keep zero-distance pairs finite.
        a._add_grad(g * 0.5 / np.maximum(val, 1e-12))

    return _node(val, (a,), backward)


# -- reductions and shape ops --------------------------------------------


def sum_along(a, axis=None):
    a = _as_tensor(a)
    val = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            a._add_grad(np.broadcast_to(g, a.data.shape))
        else:
            a._add_grad(np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _node(val, (a,), backward)


def mean(a):
    a = _as_tensor(a)
    n = a.data.size

    def backward(g):
        a._add_grad(np.broadcast_to(g / n, a.data.shape))

    return _node(a.data.mean(), (a,), backward)


def reshape(a, shape):
    a = _as_tensor(a)
    orig = a.data.shape

    def backward(g):
        a._add_grad(g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), backward)


def index_rows(a, idx):
    """Gather rows: out[r] = a[idx[r]]; backward scatter-adds."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        # One-hot matmul scatter: much faster than np.add.at at these sizes.
        scatter = np.zeros((a.data.shape[0], len(idx)))
        scatter[idx, np.arange(len(idx))] = 1.0
        a._add_grad(scatter @ g)

    return _node(a.data[idx], (a,), backward)


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ConfigurationError(
            f"matmul needs (N, D) @ (D, E); got {a.shape} and {b.shape}"
        )

    def backward(g):
        a._add_grad(g @ b.data.T)
        b._add_grad(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def linear(x, w, b=None):
    """x @ w (+ b): input (D,) or (B, D), weights (D, E), bias (E,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    single = x.data.ndim == 1
    xd = x.data[None, :] if single else x.data
    if xd.ndim != 2 or xd.shape[1] != w.data.shape[0]:
        raise ConfigurationError(
            f"linear dimension mismatch: input {x.shape} vs weights {w.shape}"
        )
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (w.data.shape[1],):
            raise ConfigurationError(
                f"linear bias shape {b.shape} != ({w.data.shape[1]},)"
            )
        parents.append(b)

    val = xd @ w.data
    if b is not None:
        val = val + b.data
    if single:
        val = val[0]

    def backward(g):
        gb = g[None, :] if single else g
        x._add_grad((gb @ w.data.T)[0] if single else gb @ w.data.T)
        w._add_grad(xd.T @ gb)
        if b is not None:
            b._add_grad(gb.sum(axis=0))

    return _node(val, tuple(parents), backward)


# -- structured ops -------------------------------------------------------


def conv1d(x, w, b=None, stride=1, pad=0):
    """1D cross-correlation; x is (C_in, L) or (B, C_in, L)."""
    x, w = _as_tensor(x), _as_tensor(w)
    b = _as_tensor(b) if b is not None else None
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    bd = b.data if b is not None else None
    val = kernels.conv1d_forward(xd, w.data, bd, stride=stride, pad=pad)
    parents = [x, w] + ([b] if b is not None else [])

    def backward(g):
        gb3 = g[None] if single else g
        gx, gw, gbias = kernels.conv1d_backward(
            xd, w.data, gb3, stride=stride, pad=pad, with_bias=b is not None
        )
        x._add_grad(gx[0] if single else gx)
        w._add_grad(gw)
        if b is not None:
            b._add_grad(gbias)

    return _node(val[0] if single else val, tuple(parents), backward)


def maxpool1d(x, window):
    """Non-overlapping max pooling; x is (C, L) or (B, C, L)."""
    x = _as_tensor(x)
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    val, idx = kernels.maxpool1d_forward(xd, window)
    L = xd.shape[2]

    def backward(g):
        g3 = g[None] if single else g
        gx = kernels.maxpool1d_backward(g3, idx, L)
        x._add_grad(gx[0] if single else gx)

    return _node(val[0] if single else val, (x,), backward)


# -- optimizer ------------------------------------------------------------


class Adam:
    """Adam with bias correction over a named parameter dict.

    weight_decay adds an L2 pull (decay * param) to each gradient before
    the moment updates.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads=None):
        """One update from grads (name -> array) or the params' .grad."""
        if grads is None:
            grads = {}
            for k, p in self.params.items():
                grads[k] = p.grad if p.grad is not None else np.zeros_like(p.data)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = grads[k]
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter block {k!r}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
