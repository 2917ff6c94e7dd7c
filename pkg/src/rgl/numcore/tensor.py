"""Dense float64 tensors with reverse-mode automatic differentiation.

Broadcasting is limited to adding a bias over the last axis and to
:func:`scale_rows` (one scalar per row); everything else requires equal
shapes.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from .. import _kernels

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "NotScalar",
    "no_grad",
    "grad_enabled",
    "parameter",
    "add",
    "sub",
    "mul",
    "scale_rows",
    "matmul",
    "sigmoid",
    "tanh",
    "gelu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "embedding_lookup",
    "scaled_dot_attention",
    "reshape",
    "transpose",
    "tsum",
    "mean",
    "cross_entropy",
    "kl_from_logits",
    "backward",
]

_GRAD = True


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD
    prev, _GRAD = _GRAD, False
    try:
        yield
    finally:
        _GRAD = prev


def grad_enabled() -> bool:
    return _GRAD


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def parameter(shape, rng: np.random.Generator, fan_in: int | None = None, name: str | None = None) -> Tensor:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialised trainable tensor."""
    fan_in = fan_in if fan_in is not None else shape[0]
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# elementwise


def _bias_compatible(a: Tensor, b: Tensor) -> bool:
    return b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]


def _sum_to_last(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = _t(a)
        return _result(a.data + b, (a,), lambda g: (g,))
    a, b = _t(a), _t(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if _bias_compatible(a, b):
        return _result(a.data + b.data, (a, b), lambda g: (g, _sum_to_last(g)))
    if _bias_compatible(b, a):
        return add(b, a)
    raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add(a, -b)
    return add(a, mul(_t(b), -1.0))


def mul(a, b) -> Tensor:
    a = _t(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        s = float(b)
        return _result(a.data * s, (a,), lambda g: (g * s,))
    b = _t(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale_rows(x, s) -> Tensor:
    """Multiply every row of ``x`` (..., K, d) by the scalar ``s`` (..., K, 1)."""
    x, s = _t(x), _t(s)
    if s.shape != x.shape[:-1] + (1,):
        raise ShapeMismatch(f"scale_rows: {x.shape} vs {s.shape}")
    xd, sd = x.data, s.data
    return _result(xd * sd, (x, s), lambda g: (g * sd, (g * xd).sum(axis=-1, keepdims=True)))


def sigmoid(x) -> Tensor:
    x = _t(x)
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    y[~pos] = ez / (1.0 + ez)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    x = _t(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def gelu(x) -> Tensor:
    """tanh approximation of GELU."""
    x = _t(x)
    flat = np.ascontiguousarray(x.data).reshape(-1)
    y, th = _kernels.gelu_flat(flat)

    def fn(g):
        return (_kernels.gelu_flat_backward(np.ascontiguousarray(g).reshape(-1), flat, th).reshape(x.shape),)

    return _result(y.reshape(x.shape), (x,), fn)


# ---------------------------------------------------------------------------
# row-wise


def _rows(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.reshape(-1, a.shape[-1]))


def softmax(x) -> Tensor:
    x = _t(x)
    y = _kernels.softmax_rows(_rows(x.data)).reshape(x.shape)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), fn)


def _log_softmax_np(a: np.ndarray) -> np.ndarray:
    z = a - a.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_softmax(x) -> Tensor:
    x = _t(x)
    y = _log_softmax_np(x.data)

    def fn(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), fn)


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-9) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    x = _t(x)
    d = x.shape[-1]
    xhat, rstd = _kernels.layer_norm_rows(_rows(x.data), eps)
    xhat = xhat.reshape(x.shape)
    parents = [x]
    if gamma is not None:
        gamma, beta = _t(gamma), _t(beta)
        if gamma.shape != (d,) or beta.shape != (d,):
            raise ShapeMismatch(f"layer_norm affine params must have shape ({d},)")
        parents += [gamma, beta]
        y = xhat * gamma.data + beta.data
    else:
        y = xhat

    def fn(g):
        dxhat = g * gamma.data if gamma is not None else g
        dx = _kernels.layer_norm_rows_backward(_rows(dxhat), _rows(xhat), rstd).reshape(x.shape)
        if gamma is None:
            return (dx,)
        return (dx, _sum_to_last(g * xhat), _sum_to_last(g))

    return _result(y, parents, fn)


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b) -> Tensor:
    """``a`` (..., n, k) times ``b`` (k, m) or (..., k, m) with equal leading dims."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeMismatch(f"matmul batch dims: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def fn(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            gb = _rows(ad).T @ _rows(g)
        else:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return (ga, gb)

    return _result(out, (a, b), fn)


def reshape(x, shape) -> Tensor:
    x = _t(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _result(y, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _t(x)
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def embedding_lookup(table, ids) -> Tensor:
    table = _t(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("token id outside the embedding table")

    def fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), fn)


def scaled_dot_attention(q, k, v, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d) + mask) v over the last two axes.

    ``mask`` is a constant additive array broadcastable to (..., n, m).
    """
    q, k, v = _t(q), _t(k), _t(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise ShapeMismatch(f"attention: q{q.shape} k{k.shape} v{v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * scale
    if mask is not None:
        scores = scores + mask
    p = _kernels.softmax_rows(_rows(scores)).reshape(scores.shape)
    out = np.matmul(p, v.data)

    def fn(g):
        dv = np.matmul(np.swapaxes(p, -1, -2), g)
        dp = np.matmul(g, np.swapaxes(v.data, -1, -2))
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
        dq = np.matmul(ds, k.data)
        dk = np.matmul(np.swapaxes(ds, -1, -2), q.data)
        return (dq, dk, dv)

    return _result(out, (q, k, v), fn)


def tsum(x) -> Tensor:
    x = _t(x)
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x) -> Tensor:
    x = _t(x)
    n = x.size
    return mul(tsum(x), 1.0 / n)


# ---------------------------------------------------------------------------
# fused losses


def _mask_of(shape, mask):
    if mask is None:
        return np.ones(shape, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != shape:
        raise ShapeMismatch(f"mask {mask.shape} vs positions {shape}")
    return mask


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over unmasked positions."""
    logits = _t(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    m = _mask_of(targets.shape, mask)
    n = max(m.sum(), 1.0)
    logp = _log_softmax_np(logits.data)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * m).sum() / n

    def fn(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
        return (grad * (m[..., None] * (float(g) / n)),)

    return _result(np.asarray(loss), (logits,), fn)


def kl_from_logits(teacher_logits, student_logits, mask=None, detach_teacher: bool = True) -> Tensor:
    """Mean over positions of sum_v p_v log(p_v / q_v), p = softmax(teacher)."""
    t, s = _t(teacher_logits), _t(student_logits)
    if t.shape != s.shape:
        raise ShapeMismatch(f"kl: {t.shape} vs {s.shape}")
    m = _mask_of(t.shape[:-1], mask)
    n = max(m.sum(), 1.0)
    logp = _log_softmax_np(t.data)
    logq = _log_softmax_np(s.data)
    p, q = np.exp(logp), np.exp(logq)
    diff = logp - logq
    per_pos = (p * diff).sum(axis=-1)
    loss = (per_pos * m).sum() / n
    w = m[..., None] / n

    if detach_teacher:
        return _result(np.asarray(loss), (s,), lambda g: ((q - p) * w * float(g),))

    def fn(g):
        g = float(g)
        return (p * (diff - per_pos[..., None]) * w * g, (q - p) * w * g)

    return _result(np.asarray(loss), (t, s), fn)


# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
