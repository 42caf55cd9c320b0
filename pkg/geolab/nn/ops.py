"""
GeoLab - Differentiable Operations
Forward primitives with registered backward functions
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np

from geolab.nn.tensor import Tensor, as_tensor
from geolab.utils.errors import DimensionError

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9
GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad back down to `shape` after numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast('add', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, parents=(a, b), backward_fn=backward, dtype=a.dtype)


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast('sub', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, parents=(a, b), backward_fn=backward, dtype=a.dtype)


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast('mul', a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, parents=(a, b), backward_fn=backward, dtype=a.dtype)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return Tensor(out, parents=(a,), backward_fn=backward, dtype=a.dtype)


def log(a: Tensor) -> Tensor:
    def backward(g):
        return (g / a.data,)

    return Tensor(np.log(a.data), parents=(a,), backward_fn=backward, dtype=a.dtype)


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, parents=(a,), backward_fn=backward, dtype=a.dtype)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gelu(a: Tensor) -> Tensor:
    """tanh approximation"""
    x = a.data
    inner = GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

    return Tensor(out, parents=(a,), backward_fn=backward, dtype=a.dtype)


# ---------------------------------------------------------------- shape

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError('reshape', a.shape, shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return Tensor(out, parents=(a,), backward_fn=backward, dtype=a.dtype)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor(np.transpose(a.data, axes), parents=(a,), backward_fn=backward, dtype=a.dtype)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along one axis; repeated indices accumulate their gradients"""
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise DimensionError('take', a.shape, indices.shape)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, tuple(range(axis, axis + indices.ndim)),
                                              tuple(range(indices.ndim))))
        return (full,)

    return Tensor(np.take(a.data, indices, axis=axis), parents=(a,), backward_fn=backward, dtype=a.dtype)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                t.shape[k] != tensors[0].shape[k] for k in range(t.ndim) if k != axis):
            raise DimensionError('concat', tensors[0].shape, t.shape)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor(out, parents=tensors, backward_fn=backward, dtype=tensors[0].dtype)


# ---------------------------------------------------------------- reductions

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(np.sum(a.data, axis=axis, keepdims=keepdims), parents=(a,),
                  backward_fn=backward, dtype=a.dtype)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[k] for k in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor(np.mean(a.data, axis=axis, keepdims=keepdims), parents=(a,),
                  backward_fn=backward, dtype=a.dtype)


def variance(a: Tensor, axis: int = -1) -> Tensor:
    """Population variance"""
    centered = a.data - a.data.mean(axis=axis, keepdims=True)
    count = a.shape[axis]

    def backward(g):
        return (np.expand_dims(g, axis) * 2.0 * centered / count,)

    return Tensor((centered ** 2).mean(axis=axis), parents=(a,), backward_fn=backward, dtype=a.dtype)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor(out, parents=(a,), backward_fn=backward, dtype=a.dtype)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, parents=(a,), backward_fn=backward, dtype=a.dtype)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError('matmul', a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError('matmul', a.shape, b.shape)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out, parents=(a, b), backward_fn=backward, dtype=a.dtype)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError('embedding_lookup', table.shape, ids.shape)
    return take(table, ids, axis=0)


def affine(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ W + b over the last axis of x"""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError('affine', x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError('affine', weight.shape, bias.shape)
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = flat.T @ g2
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor(out.reshape(*lead, weight.shape[1]), parents=parents, backward_fn=backward, dtype=x.dtype)


def bilinear_form(x: Tensor, weight: Tensor, y: Tensor) -> Tensor:
    """S[i, j] = x_i^T W y_j for row sets x [n, d1], y [m, d2]"""
    if x.ndim != 2 or y.ndim != 2 or weight.shape != (x.shape[1], y.shape[1]):
        raise DimensionError('bilinear_form', x.shape, weight.shape if x.ndim == 2 else y.shape)
    xw = x.data @ weight.data
    out = xw @ y.data.T

    def backward(g):
        gx = g @ y.data @ weight.data.T
        gw = x.data.T @ g @ y.data
        gy = g.T @ xw
        return gx, gw, gy

    return Tensor(out, parents=(x, weight, y), backward_fn=backward, dtype=x.dtype)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError('layer_norm', x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    xhat = (x.data - mu) * inv_std
    width = x.shape[-1]

    def backward(g):
        dxhat = g * gamma.data
        gx = inv_std / width * (width * dxhat - dxhat.sum(axis=-1, keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor(xhat * gamma.data + beta.data, parents=(x, gamma, beta), backward_fn=backward, dtype=x.dtype)


def multi_head_attention(query: Tensor, memory: Tensor, wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
                         wv: Tensor, bv: Tensor, wo: Tensor, bo: Tensor, num_heads: int,
                         key_mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled dot-product attention of query rows [Tq, d] over memory rows [Tk, d]

    key_mask: boolean [Tk], True for keys that may be attended; masked keys get -1e9 added.
    Composed from the primitives above, so its backward is theirs.
    """
    d = query.shape[-1]
    if memory.shape[-1] != d or d % num_heads:
        raise DimensionError('multi_head_attention', query.shape, memory.shape)
    tq, tk, dh = query.shape[0], memory.shape[0], d // num_heads

    def split(t, rows):
        return transpose(reshape(t, (rows, num_heads, dh)), (1, 0, 2))

    q = split(affine(query, wq, bq), tq)
    k = split(affine(memory, wk, bk), tk)
    v = split(affine(memory, wv, bv), tk)
    scores = mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (tk,):
            raise DimensionError('multi_head_attention', (tk,), key_mask.shape)
        additive = np.where(key_mask, 0.0, MASK_VALUE).astype(query.dtype)
        scores = add(scores, Tensor(additive[None, None, :], dtype=query.dtype))
    context = matmul(softmax(scores, axis=-1), v)
    merged = reshape(transpose(context, (1, 0, 2)), (tq, d))
    return affine(merged, wo, bo)


# ---------------------------------------------------------------- losses

def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)"""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError('cross_entropy', logits.shape, targets.shape)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise DimensionError('cross_entropy', logits.shape, (int(targets.max()),))
    rows = np.arange(targets.size)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    count = max(targets.size, 1)

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g / count),)

    loss = -log_probs[rows, targets].sum() / count
    return Tensor(loss, parents=(logits,), backward_fn=backward, dtype=logits.dtype)


def binary_cross_entropy_with_logits(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean BCE of sigmoid(logits) against 0/1 targets; `weights` selects (0/1) or weighs entries"""
    targets = np.asarray(targets, dtype=logits.dtype)
    if targets.shape != logits.shape:
        raise DimensionError('binary_cross_entropy_with_logits', logits.shape, targets.shape)
    weights = np.ones_like(targets) if weights is None else np.asarray(weights, dtype=logits.dtype)
    z = logits.data
    count = max(float(weights.sum()), 1.0)
    per_entry = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        return (g * weights * (_stable_sigmoid(z) - targets) / count,)

    loss = (per_entry * weights).sum() / count
    return Tensor(loss, parents=(logits,), backward_fn=backward, dtype=logits.dtype)
