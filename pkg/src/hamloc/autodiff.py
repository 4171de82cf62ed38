"""Small reverse-mode autodiff over dense float64 arrays.

Only the operations needed by the HAM-Net graph are provided. Every op
returns a new :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to one gradient per parent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op
        # leaves that want gradients start at zero so untouched ones stay zero
        self.grad = np.zeros_like(self.data) if self.requires_grad and not _parents else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------- graph


@dataclass
class Node:
    op: str
    inputs: tuple
    output: int


@dataclass
class Graph:
    """Topologically ordered record of the ops reachable from a root."""

    nodes: list = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order = topological_order(root)
        return cls([Node(t.op, tuple(id(p) for p in t._parents), id(t)) for t in order if t._parents])


def topological_order(root: Tensor) -> list:
    """Parents-first ordering of every tensor that requires grad under ``root``."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def tsum(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def tabs(x) -> Tensor:
    x = as_tensor(x)
    # sign(0) = 0 is the subgradient used at the kink
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def clamp_min(x, floor: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data >= floor
    return _make(np.maximum(x.data, floor), (x,), lambda g: (g * keep,), "clamp_min")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ------------------------------------------------------------------- shaping


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def take_last(x, index: int) -> Tensor:
    """Select one entry along the last axis (e.g. the background column)."""
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        full[..., index] = g
        return (full,)

    return _make(x.data[..., index].copy(), (x,), bw, "take_last")


def slice_last(x, stop: int) -> Tensor:
    """Keep the first ``stop`` entries along the last axis."""
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        full[..., :stop] = g
        return (full,)

    return _make(x.data[..., :stop].copy(), (x,), bw, "slice_last")


def detach(x) -> Tensor:
    return as_tensor(x).detach()


# ---------------------------------------------------------------- reductions


def softmax(x) -> Tensor:
    """Softmax along the last axis with max subtraction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def softmax_classes(v) -> Tensor:
    v = as_tensor(v)
    if v.data.ndim != 1 or v.data.size < 1:
        raise ValueError(f"softmax_classes expects a nonempty vector, got shape {v.shape}")
    return softmax(v)


def logsumexp(x) -> Tensor:
    """log(sum(exp(x))) along the last axis."""
    x = as_tensor(x)
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (np.log(s) + m)[..., 0]
    w = e / s
    return _make(out, (x,), lambda g: (g[..., None] * w,), "logsumexp")


def topk_mean_temporal(s, k: int) -> Tensor:
    """Per-class mean of the k largest values over time.

    ``s`` is T x C. Ties go to the lower timestep index; the gradient sends
    1/k to each selected entry.
    """
    s = as_tensor(s)
    if s.data.ndim != 2:
        raise ValueError(f"topk_mean_temporal expects T x C, got shape {s.shape}")
    T = s.shape[0]
    k = int(k)
    if not 1 <= k <= T:
        raise ValueError(f"k must lie in [1, T={T}], got k={k}")
    idx = np.argsort(-s.data, axis=0, kind="stable")[:k]
    cols = np.arange(s.shape[1])
    out = s.data[idx, cols].mean(axis=0)

    def bw(g):
        full = np.zeros_like(s.data)
        np.add.at(full, (idx, np.broadcast_to(cols, idx.shape)), g / k)
        return (full,)

    return _make(out, (s,), bw, "topk_mean")


# ------------------------------------------------------------------- layers


def conv1d_temporal(x, weight, bias) -> Tensor:
    """Same-length 1-D convolution over time with zero padding.

    x: T x Cin, weight: Cout x Cin x K (K odd), bias: Cout.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2:
        raise ValueError(f"conv1d input must be T x Cin, got shape {x.shape}")
    if weight.data.ndim != 3:
        raise ValueError(f"conv1d weight must be Cout x Cin x K, got shape {weight.shape}")
    T, cin = x.shape
    cout, wcin, K = weight.shape
    if wcin != cin:
        raise ValueError(f"conv1d channel mismatch: input Cin={cin}, weight Cin={wcin}")
    if K % 2 == 0:
        raise ValueError(f"conv1d kernel size K must be odd, got K={K}")
    if bias.shape != (cout,):
        raise ValueError(f"conv1d bias must have Cout={cout} entries, got shape {bias.shape}")
    if T < 1:
        raise ValueError("conv1d input needs T >= 1")
    pad = (K - 1) // 2
    xp = np.zeros((T + 2 * pad, cin))
    xp[pad:pad + T] = x.data
    # cols[t, c, k] = xp[t + k, c]
    cols = np.stack([xp[k:k + T] for k in range(K)], axis=2).reshape(T, cin * K)
    w2 = weight.data.reshape(cout, cin * K)
    out = cols @ w2.T + bias.data

    def bw(g):
        gw = (g.T @ cols).reshape(weight.shape)
        gb = g.sum(axis=0)
        gcols = (g @ w2).reshape(T, cin, K)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[k:k + T] += gcols[:, :, k]
        return gxp[pad:pad + T], gw, gb

    return _make(out, (x, weight, bias), bw, "conv1d")


def linear(x, weight, bias) -> Tensor:
    """Per-timestep affine map; x: T x Cin, weight: Cout x Cin, bias: Cout."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ValueError(f"linear expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear inner dimension mismatch: input Cin={x.shape[1]}, weight Cin={weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear bias must have Cout={weight.shape[0]} entries, got shape {bias.shape}")
    out = x.data @ weight.data.T + bias.data
    return _make(out, (x, weight, bias),
                 lambda g: (g @ weight.data, g.T @ x.data, g.sum(axis=0)), "linear")


# ---------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: list
    flagged: list
    nonsmooth: list
    tol: float

    @property
    def ok(self) -> bool:
        return not any(self.flagged)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error) if self.max_rel_error else 0.0


def grad_check(f, params, step: float = 1e-5, tol: float = 1e-4, floor: float = 1e-5,
               kink_tol: float = 1e-2) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` takes no arguments and must read the current values of ``params``.
    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    The floor keeps tiny gradients from being judged on rounding noise: at
    step 1e-5 a loss of size ~10 leaves ~1e-10 of noise in each difference.

    Entries where the forward and backward one-sided differences disagree
    by more than ``kink_tol * max(1, |numeric|)`` sit on a kink or a
    threshold jump; they are counted in ``nonsmooth`` and left out of the
    error.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    base = float(loss.data)

    errors, flagged, nonsmooth = [], [], []
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        worst, kinks = 0.0, 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            fwd, bwd = (fp - base) / step, (base - fm) / step
            if abs(fwd - bwd) > kink_tol * max(1.0, abs(num)):
                kinks += 1
                continue
            denom = max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, abs(gflat[i] - num) / denom)
        errors.append(worst)
        flagged.append(worst > tol)
        nonsmooth.append(kinks)
    for p in params:
        p.zero_grad()
    return GradCheckReport(errors, flagged, nonsmooth, tol)
