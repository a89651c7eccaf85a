"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects.  Segment
operations work on edge lists sorted by segment id, which is how the graph
layers lay out each neighbourhood.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .tensor import ShapeError, Tensor, make_output


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    return make_output(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    return make_output(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    _broadcast_shape("elementwise_mul", a, b)
    return make_output(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


elementwise_mul = mul


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_output(x.data * c, (x,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    return make_output(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat_last_axis(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat_last_axis: nothing to concatenate")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last_axis: shapes {tensors[0].shape} and {t.shape} are incompatible"
            )
    bounds = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=-1))

    return make_output(np.concatenate([t.data for t in tensors], axis=-1), tensors, backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope)
    return make_output(x.data * scale, (x,), lambda g: (g * scale,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_output(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_output(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log: input must be strictly positive")
    return make_output(np.log(x.data), (x,), lambda g: (g / x.data,))


def sum_all(x: Tensor) -> Tensor:
    return make_output(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return make_output(
        np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),)
    )


def _scatter_rows(g: np.ndarray, index: np.ndarray, num_rows: int) -> np.ndarray:
    """Sum rows of ``g`` into ``num_rows`` buckets given by ``index``."""
    if g.ndim == 1 or g.shape[1:] == (1,):
        return np.bincount(index, weights=g.reshape(-1), minlength=num_rows).reshape((num_rows,) + g.shape[1:])
    scatter = sp.csr_matrix((np.ones(index.shape[0]), (index, np.arange(index.shape[0]))),
                            shape=(num_rows, index.shape[0]))
    return np.asarray(scatter @ g.reshape(index.shape[0], -1)).reshape((num_rows,) + g.shape[1:])


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows ``x[index]``; repeated indices accumulate in the gradient."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for shape {x.shape}")
    return make_output(x.data[index], (x,), lambda g: (_scatter_rows(g, index, x.shape[0]),))


@dataclass(frozen=True)
class Segments:
    """Validated layout of a sorted segment-id vector."""

    ids: np.ndarray
    num_segments: int
    starts: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    @classmethod
    def from_ids(cls, ids, num_segments: int | None = None) -> "Segments":
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ShapeError(f"segment ids must be 1-D, got shape {ids.shape}")
        if num_segments is None:
            num_segments = int(ids[-1]) + 1 if ids.size else 0
        if ids.size and np.any(np.diff(ids) < 0):
            raise ValueError("segment ids must be sorted non-decreasing")
        if ids.size and (ids[0] < 0 or ids[-1] >= num_segments):
            raise ValueError("segment ids out of range")
        counts = np.bincount(ids, minlength=num_segments)
        if np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"segment {empty} is empty")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        return cls(ids, int(num_segments), starts, counts)

    @property
    def length(self) -> int:
        return int(self.ids.shape[0])

    @cached_property
    def indptr(self) -> np.ndarray:
        return np.append(self.starts, self.length)

    @cached_property
    def sum_matrix(self) -> sp.csr_matrix:
        """(num_segments, length) 0/1 matrix whose product sums each segment."""
        return sp.csr_matrix((np.ones(self.length), np.arange(self.length), self.indptr),
                             shape=(self.num_segments, self.length))


def _segments(segment_ids, num_segments, length: int) -> Segments:
    seg = segment_ids if isinstance(segment_ids, Segments) else Segments.from_ids(segment_ids, num_segments)
    if seg.ids.shape[0] != length:
        raise ShapeError(
            f"segment ids of length {seg.ids.shape[0]} do not match first axis of length {length}"
        )
    return seg


def _segment_reduce(seg: Segments, x: np.ndarray) -> np.ndarray:
    if x.ndim == 1:
        return np.add.reduceat(x, seg.starts)
    return np.asarray(seg.sum_matrix @ x.reshape(x.shape[0], -1)).reshape((seg.num_segments,) + x.shape[1:])


def segment_sum(x: Tensor, segment_ids, num_segments: int | None = None) -> Tensor:
    seg = _segments(segment_ids, num_segments, x.shape[0])
    return make_output(_segment_reduce(seg, x.data), (x,), lambda g: (g[seg.ids],))


def weighted_gather_sum(weights: Tensor | None, x: Tensor, segment_ids, index) -> Tensor:
    """``out[s] = sum_{e in segment s} weights[e] * x[index[e]]``.

    Same value and gradients as
    ``segment_sum(mul(gather_rows(x, index), weights), segment_ids)`` but
    evaluated as one sparse-dense product, without materialising the
    per-edge rows.  ``weights`` of shape (E,) or (E, 1); ``None`` means 1.
    """
    index = np.asarray(index, dtype=np.int64)
    seg = _segments(segment_ids, None, index.shape[0])
    if x.ndim != 2:
        raise ShapeError(f"weighted_gather_sum: expected 2-D features, got shape {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"weighted_gather_sum: index out of range for shape {x.shape}")
    if weights is not None and weights.data.size != index.shape[0]:
        raise ShapeError(
            f"weighted_gather_sum: weights of shape {weights.shape} do not match {index.shape[0]} entries"
        )
    w = np.ones(index.shape[0]) if weights is None else weights.data.reshape(-1)
    A = sp.csr_matrix((w, index, seg.indptr), shape=(seg.num_segments, x.shape[0]))
    out = np.asarray(A @ x.data)

    def backward(g):
        gx = np.asarray(A.T @ g)
        if weights is None or not weights.requires_grad:
            return (None, gx) if weights is not None else (gx,)
        gw = np.einsum("ij,ij->i", np.repeat(g, seg.counts, axis=0), np.take(x.data, index, axis=0)).reshape(weights.shape)
        return gw, gx

    inputs = (x,) if weights is None else (weights, x)
    return make_output(out, inputs, backward)


def segment_softmax(x: Tensor, segment_ids, num_segments: int | None = None) -> Tensor:
    """Softmax over the first axis, normalised independently inside each segment."""
    seg = _segments(segment_ids, num_segments, x.shape[0])
    shifted = x.data - np.maximum.reduceat(x.data, seg.starts, axis=0)[seg.ids]
    ex = np.exp(shifted)
    y = ex / np.add.reduceat(ex, seg.starts, axis=0)[seg.ids]

    def backward(g):
        dot = np.add.reduceat(g * y, seg.starts, axis=0)[seg.ids]
        return (y * (g - dot),)

    return make_output(y, (x,), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-feature normalisation over the first (node) axis.

    In training mode the batch statistics are used and the running buffers
    are updated in place; in evaluation mode the running buffers are used.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: shapes {x.shape} and {gamma.shape} are incompatible")
    if not training:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv
        out = xhat * gamma.data + beta.data
        return make_output(
            out, (x, gamma, beta),
            lambda g: (g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)),
        )

    n = x.shape[0]
    mean = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = xhat * gamma.data + beta.data

    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    unbiased = var * n / (n - 1) if n > 1 else var
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=0) - xhat * (gx_hat * xhat).mean(axis=0))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_output(out, (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_output(x.data * mask, (x,), lambda g: (g * mask,))


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: shapes {logits.shape} and {labels.shape} are incompatible")
    n = logits.shape[0]
    logp = log_softmax_rows(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return make_output(np.asarray(loss), (logits,), backward)
