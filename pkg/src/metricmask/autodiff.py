"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: every operation returns a `Tensor` that remembers its parents
and a closure that routes the output gradient to them. `backward` walks the
graph once in reverse topological order; `grad_check` compares every
gradient against central finite differences, which is the ground truth for
the whole package.

All data is float64. Single-threaded use of a tape is assumed; forward-only
evaluation under `no_grad()` is pure and freely parallel.
"""
from __future__ import annotations

import contextlib

import numpy as np


class AutodiffError(RuntimeError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate(self, g: np.ndarray):
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` along the axes numpy broadcasting added."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise AutodiffError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(-g)

    return _make(-a.data, (a,), backward, "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _make(out_data, (a, b), backward, "matmul")


# -------------------------------------------------------------- elementwise


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # piecewise form avoids overflow in exp for large |x|
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward, "tanh")


def leaky_relu(a, slope: float = 0.3) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    out_data = np.where(pos, a.data, slope * a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * np.where(pos, 1.0, slope))

    return _make(out_data, (a,), backward, "leaky_relu")


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), backward, "square")


def pow_scalar(a, exponent: float, eps: float = 1e-12) -> Tensor:
    """(x + eps) ** exponent for nonnegative x; eps keeps the slope finite at 0."""
    a = as_tensor(a)
    shifted = a.data + eps
    out_data = shifted**exponent

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * exponent * shifted ** (exponent - 1.0))

    return _make(out_data, (a,), backward, "pow_scalar")


def log1p(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g / (1.0 + a.data))

    return _make(np.log1p(a.data), (a,), backward, "log1p")


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient passes only where x > floor."""
    a = as_tensor(a)
    keep = a.data > floor

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * keep)

    return _make(np.maximum(a.data, floor), (a,), backward, "clamp_min")


# --------------------------------------------------------------- reductions


def reduce_sum(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g, a.shape).astype(np.float64))

    return _make(np.sum(a.data), (a,), backward, "reduce_sum")


def reduce_mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g / n, a.shape).astype(np.float64))

    return _make(np.mean(a.data), (a,), backward, "reduce_mean")


# ------------------------------------------------------------ shape plumbing


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return _make(out_data, tuple(tensors), backward, "concat")


def slice_(a, key) -> Tensor:
    """Basic (view) slicing; gradient scatters back into the source shape."""
    a = as_tensor(a)
    out_data = a.data[key]

    def backward(g):
        if a.requires_grad:
            full = np.zeros(a.shape)
            full[key] = g
            a.accumulate(full)

    return _make(out_data, (a,), backward, "slice")


# ------------------------------------------------------------- convolutional


def conv2d(x, kernel) -> Tensor:
    """Valid 2-D correlation of x[C,H,W] with kernel[O,C,kh,kw] -> [O,H',W']."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4 or x.shape[0] != kernel.shape[1]:
        raise AutodiffError(f"conv2d: incompatible shapes {x.shape} and {kernel.shape}")
    c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    if h < kh or w < kw:
        raise AutodiffError(
            f"conv2d: input {x.shape} smaller than kernel {kernel.shape} (valid padding)"
        )
    cols = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    out_data = np.einsum("ocij,chwij->ohw", kernel.data, cols, optimize=True)
    hp, wp = out_data.shape[1:]

    def backward(g):
        if kernel.requires_grad:
            kernel.accumulate(np.einsum("ohw,chwij->ocij", g, cols, optimize=True))
        if x.requires_grad:
            dx = np.zeros(x.shape)
            for i in range(kh):
                for j in range(kw):
                    dx[:, i : i + hp, j : j + wp] += np.einsum(
                        "ohw,oc->chw", g, kernel.data[:, :, i, j], optimize=True
                    )
            x.accumulate(dx)

    return _make(out_data, (x, kernel), backward, "conv2d")


def global_avg_pool2d(x) -> Tensor:
    """Mean over the two spatial axes of x[C,H,W] -> [C]."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise AutodiffError(f"global_avg_pool2d expects [C,H,W], got {x.shape}")
    _, h, w = x.shape

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.broadcast_to(g[:, None, None] / (h * w), x.shape).astype(np.float64))

    return _make(x.data.mean(axis=(1, 2)), (x,), backward, "global_avg_pool2d")


# ------------------------------------------------------------------ backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order  # children appear after all their parents


def backward(loss: Tensor) -> None:
    """Populate grads of everything `loss` depends on.

    Repeated calls without zeroing accumulate. Raises on a non-scalar or
    non-finite loss and reports the op at which a non-finite gradient first
    appears.
    """
    if loss.shape != ():
        raise AutodiffError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise AutodiffError("non-finite loss value")
    if not loss.requires_grad:
        return
    loss.accumulate(np.ones(()))
    for node in reversed(_topo_order(loss)):
        if node._backward_fn is None or node.grad is None:
            continue
        # summing is a cheap full-array finiteness probe: any NaN/Inf
        # poisons the sum
        if not np.isfinite(np.sum(node.grad)):
            raise AutodiffError(f"non-finite gradient at op '{node._op}'")
        node._backward_fn(node.grad)


def zero_grads(params) -> None:
    for p in params.values() if isinstance(params, dict) else params:
        p.zero_grad()


def grad_check(fn, tensors, step: float = 1e-4) -> float:
    """Max relative error between backward() grads of fn() and central differences.

    `fn` must rebuild its forward pass from `tensors` on every call and
    return a scalar Tensor. Coordinates where both gradients are below 1e-6
    in magnitude are ignored, as are coordinates whose one-sided slopes
    disagree (the perturbation straddles a kink of a piecewise-linear
    activation, where a central difference is meaningless; a wrong gradient
    still shows up on the smooth coordinates).
    """
    tensors = list(tensors)
    for t in tensors:
        t.zero_grad()
    loss = fn()
    backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    with no_grad():
        for t, a in zip(tensors, analytic):
            a_flat = a.reshape(-1)
            for i in range(t.size):
                idx = np.unravel_index(i, t.shape) if t.shape else ()
                orig = t.data[idx]
                t.data[idx] = orig + step
                f_plus = float(fn().data)
                t.data[idx] = orig - step
                f_minus = float(fn().data)
                t.data[idx] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                denom = max(abs(a_flat[i]), abs(numeric))
                if denom < 1e-6:
                    continue
                rel = abs(a_flat[i] - numeric) / denom
                if rel > 1e-5:
                    # Retry with a much smaller step: finite-difference
                    # artifacts (kink straddles, curvature) shrink, while a
                    # genuinely wrong gradient keeps disagreeing.
                    small = step / 16.0
                    t.data[idx] = orig + small
                    f_plus = float(fn().data)
                    t.data[idx] = orig - small
                    f_minus = float(fn().data)
                    t.data[idx] = orig
                    numeric = (f_plus - f_minus) / (2.0 * small)
                    denom = max(abs(a_flat[i]), abs(numeric))
                    if denom < 1e-6:
                        continue
                    rel = min(rel, abs(a_flat[i] - numeric) / denom)
                    if rel > 1e-5:
                        f_zero = float(fn().data)
                        d_plus = (f_plus - f_zero) / small
                        d_minus = (f_zero - f_minus) / small
                        scale = max(abs(d_plus), abs(d_minus), 1e-12)
                        if abs(d_plus - d_minus) / scale > 0.05:
                            continue  # sits on an activation kink
                worst = max(worst, rel)
    return worst
