"""Minimal reverse-mode differentiation over dense real numpy arrays.

Each operation builds a Variable holding its value, its parents, and a
backward closure; ``backward`` walks the recorded graph once in reverse
topological order, accumulating gradients with += across fan-out.
Gradients are never clipped or rescaled here.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError

__all__ = [
    "Variable",
    "param",
    "constant",
    "backward",
    "grad_check",
    "add", "sub", "mul", "div", "neg", "scale",
    "matmul", "sigmoid", "tanh", "relu", "relu_shifted",
    "sin", "cos", "sqrt", "maximum_scalar",
    "concat", "narrow", "reshape", "expand",
    "vsum", "vmean", "gather_last",
    "cplx_mul", "cplx_bound",
    "softmax_cross_entropy",
]


class Variable:
    """A node in the differentiation graph."""

    __slots__ = ("value", "grad", "parents", "bwd", "const")

    def __init__(self, value, parents=(), bwd=None, const=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents: tuple[Variable, ...] = parents
        self.bwd: Callable | None = bwd
        self.const = const

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    # small conveniences; the op functions do the real work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def param(value) -> Variable:
    """A trainable leaf."""
    return Variable(np.array(value, dtype=np.float64))


def constant(value) -> Variable:
    """A leaf excluded from gradient accumulation."""
    return Variable(value, const=True)


def _wrap(x) -> Variable:
    return x if isinstance(x, Variable) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, value, da, db) -> Variable:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        return (
            None if a.const else _unbroadcast(da(g), a.value.shape),
            None if b.const else _unbroadcast(db(g), b.value.shape),
        )

    return Variable(value, (a, b), bwd)


def add(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    return _binary(a, b, a.value + b.value, lambda g: g, lambda g: g)


def sub(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    return _binary(a, b, a.value - b.value, lambda g: g, lambda g: -g)


def mul(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    return _binary(a, b, a.value * b.value, lambda g: g * b.value, lambda g: g * a.value)


def div(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    out = a.value / b.value
    return _binary(a, b, out, lambda g: g / b.value, lambda g: -g * out / b.value)


def neg(a) -> Variable:
    a = _wrap(a)
    return Variable(-a.value, (a,), lambda g: (-g,))


def scale(a, c: float) -> Variable:
    a = _wrap(a)
    return Variable(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Variable:
    a, b = _wrap(a), _wrap(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ContractError("matmul expects 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise ContractError(f"matmul shapes {a.value.shape} x {b.value.shape}")

    def bwd(g):
        return (
            None if a.const else g @ b.value.T,
            None if b.const else a.value.T @ g,
        )

    return Variable(a.value @ b.value, (a, b), bwd)


def sigmoid(a) -> Variable:
    a = _wrap(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return Variable(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Variable:
    a = _wrap(a)
    out = np.tanh(a.value)
    return Variable(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Variable:
    a = _wrap(a)
    mask = a.value > 0  # subgradient 0 at the kink
    return Variable(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def relu_shifted(a, b) -> Variable:
    """max(0, a + b) with a learnable shift."""
    return relu(add(a, b))


def sin(a) -> Variable:
    a = _wrap(a)
    return Variable(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a) -> Variable:
    a = _wrap(a)
    return Variable(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def sqrt(a) -> Variable:
    a = _wrap(a)
    out = np.sqrt(a.value)
    return Variable(out, (a,), lambda g: (g * 0.5 / out,))


def maximum_scalar(a, c: float) -> Variable:
    """Element-wise max(c, a); subgradient 0 where a == c."""
    a = _wrap(a)
    mask = a.value > c
    return Variable(np.where(mask, a.value, c), (a,), lambda g: (g * mask,))


def concat(parts: Sequence[Variable], axis: int = -1) -> Variable:
    parts = [_wrap(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            None if p.const else np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i, p in enumerate(parts)
        )

    return Variable(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), bwd)


def narrow(a, start: int, stop: int, axis: int = -1) -> Variable:
    """Contiguous slice along one axis; backward zero-pads."""
    a = _wrap(a)
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        return (full,)

    return Variable(a.value[idx], (a,), bwd)


def reshape(a, shape) -> Variable:
    a = _wrap(a)
    old = a.value.shape
    return Variable(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def expand(a, shape) -> Variable:
    """Broadcast to ``shape``; backward sums over the broadcast axes."""
    a = _wrap(a)
    old = a.value.shape
    return Variable(
        np.broadcast_to(a.value, shape), (a,), lambda g: (_unbroadcast(g, old),)
    )


def vsum(a, axis=None, keepdims: bool = False) -> Variable:
    a = _wrap(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Variable(out, (a,), bwd)


def vmean(a, axis=None, keepdims: bool = False) -> Variable:
    a = _wrap(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return scale(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def gather_last(a, idx: np.ndarray, inv_idx: np.ndarray | None = None) -> Variable:
    """Gather along the last axis: out[..., j] = a[..., idx[..., j]].

    ``idx`` must broadcast against ``a``'s shape. When ``idx`` is a
    permutation, pass its inverse for an exact (and fast) backward; the
    general backward is a scatter-add.
    """
    a = _wrap(a)
    shape = np.broadcast_shapes(a.value.shape, idx.shape)
    av = np.broadcast_to(a.value, shape)
    iv = np.broadcast_to(idx, shape)
    out = np.take_along_axis(av, iv, axis=-1)

    def bwd(g):
        if inv_idx is not None:
            ga = np.take_along_axis(g, np.broadcast_to(inv_idx, shape), axis=-1)
        else:
            ga = np.zeros(shape)
            flat = ga.reshape(-1, shape[-1])
            gflat = g.reshape(-1, shape[-1])
            iflat = iv.reshape(-1, shape[-1])
            for r in range(flat.shape[0]):
                np.add.at(flat[r], iflat[r], gflat[r])
        return (_unbroadcast(ga, a.value.shape),)

    return Variable(out, (a,), bwd)


def cplx_mul(a, b) -> Variable:
    """Element-wise complex multiply in the split-halves layout.

    Fused forward/backward for the hot path of the associative cells:
    the gradient is the upstream value times the conjugate of the other
    operand.
    """
    a, b = _wrap(a), _wrap(b)
    n = a.value.shape[-1] // 2
    if b.value.shape[-1] != 2 * n:
        raise ContractError("cplx_mul length mismatch")
    ar, ai = a.value[..., :n], a.value[..., n:]
    br, bi = b.value[..., :n], b.value[..., n:]
    out = np.concatenate([ar * br - ai * bi, ar * bi + ai * br], axis=-1)

    def bwd(g):
        gr, gi = g[..., :n], g[..., n:]
        ga = gb = None
        if not a.const:
            ga = _unbroadcast(
                np.concatenate([gr * br + gi * bi, gi * br - gr * bi], axis=-1),
                a.value.shape)
        if not b.const:
            gb = _unbroadcast(
                np.concatenate([gr * ar + gi * ai, gi * ar - gr * ai], axis=-1),
                b.value.shape)
        return (ga, gb)

    return Variable(out, (a, b), bwd)


def cplx_bound(h) -> Variable:
    """Divide each complex pair by max(1, modulus), fused.

    Pass-through (identity gradient) on and inside the unit circle;
    outside, the normalisation y = z/|z| Jacobian applies.
    """
    h = _wrap(h)
    n = h.value.shape[-1] // 2
    re, im = h.value[..., :n], h.value[..., n:]
    m = np.sqrt(re * re + im * im)
    d = np.maximum(1.0, m)
    out = np.concatenate([re / d, im / d], axis=-1)
    over = m > 1.0

    def bwd(g):
        gr, gi = g[..., :n], g[..., n:]
        inv = 1.0 / d
        dot = np.where(over, (gr * re + gi * im) / (d * d * d), 0.0)
        return (np.concatenate([gr * inv - re * dot, gi * inv - im * dot],
                               axis=-1),)

    return Variable(out, (h,), bwd)


def softmax_cross_entropy(logits, target_ids: np.ndarray) -> Variable:
    """Per-example -log softmax probability of the target class.

    logits: (B, K); target_ids: int array (B,). Returns a (B,) Variable.
    """
    logits = _wrap(logits)
    z = logits.value
    if z.ndim != 2:
        raise ContractError("logits must be (batch, classes)")
    t = np.asarray(target_ids, dtype=np.intp)
    if t.shape != (z.shape[0],):
        raise ContractError(f"target shape {t.shape} != ({z.shape[0]},)")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1, keepdims=True)
    probs = ez / denom
    losses = np.log(denom[:, 0]) + zmax[:, 0] - z[np.arange(z.shape[0]), t]

    def bwd(g):
        gl = probs * g[:, None]
        gl[np.arange(z.shape[0]), t] -= g
        return (gl,)

    return Variable(losses, (logits,), bwd)


def _toposort(root: Variable) -> list[Variable]:
    order: list[Variable] = []
    seen: set[int] = set()
    stack: list[tuple[Variable, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Variable) -> None:
    """Populate ``grad`` on every non-constant ancestor of a scalar root."""
    if root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
    order = _toposort(root)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.bwd is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.bwd(node.grad)):
            if g is None or parent.const:
                continue
            # first write may alias g; accumulation is never in place
            parent.grad = g if parent.grad is None else parent.grad + g


def grad_check(
    f: Callable[[], Variable],
    params: Sequence[Variable],
    eps: float = 1e-5,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar function of ``params`` (rebuilding
    its graph on every call). For large parameters a random coordinate
    subset can be checked instead of every entry.
    """
    for p in params:
        p.zero_grad()
    out = f()
    backward(out)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.ravel()
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().value)
            flat[i] = orig - eps
            lo = float(f().value)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a_i = a.ravel()[i]
            err = abs(a_i - numeric) / max(1e-6, abs(a_i) + abs(numeric))
            worst = max(worst, err)
    return worst
