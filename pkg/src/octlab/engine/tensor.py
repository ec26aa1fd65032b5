"""Reverse-mode automatic differentiation over dense N-D float arrays.

Exactly the operators the slot model needs, numpy-backed. Two numeric
disciplines are enforced throughout:

- ops inherit the dtype of their inputs (float32 training, float64 checking),
  and every internal constant is cast to that dtype so a graph never silently
  promotes;
- reductions over a "competing" axis (slot softmax denominators, mask-weighted
  composites) sort before summing, which makes them bitwise invariant to
  permutations along that axis, and matmul-like ops go through unoptimized
  einsum, which is bitwise row-stable where BLAS kernels are not.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A node in the computation graph wrapping an ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # graphs are tiny enough that operator sugar stays minimal
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __neg__(self):
        return neg(self)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _make(result: np.ndarray, parents: tuple[Tensor, ...]):
    """Build an output node; graphs are only recorded where gradients can flow."""
    requires = any(p.requires_grad for p in parents)
    out = Tensor(result, requires_grad=requires)
    if requires:
        out._parents = parents
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    np.add(t.grad, g, out=t.grad, casting="unsafe")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse-mode accumulation into every reachable requires_grad leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# elementwise and broadcast arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data + b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            _accumulate(b, _unbroadcast(out.grad, b.data.shape))
        out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data - b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            _accumulate(b, _unbroadcast(-out.grad, b.data.shape))
        out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data * b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
            _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = _bw
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data / b.data, (a, b))
    if out.requires_grad:
        def _bw():
            _accumulate(a, _unbroadcast(out.grad / b.data, a.data.shape))
            _accumulate(b, _unbroadcast(-out.grad * out.data / b.data, b.data.shape))
        out._backward = _bw
    return out


def neg(a: Tensor) -> Tensor:
    out = _make(-a.data, (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, -out.grad)
        out._backward = _bw
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    out = _make(a.data ** np.asarray(exponent, dtype=a.data.dtype), (a,))
    if out.requires_grad:
        def _bw():
            e = np.asarray(exponent, dtype=a.data.dtype)
            _accumulate(a, out.grad * e * a.data ** (e - 1))
        out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad * (a.data > 0))
        out._backward = _bw
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(y.astype(a.data.dtype, copy=False), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad * out.data * (1 - out.data))
        out._backward = _bw
    return out


def tanh(a: Tensor) -> Tensor:
    out = _make(np.tanh(a.data), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad * (1 - out.data * out.data))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        out._backward = _bw
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    scale = np.asarray(1.0 / count, dtype=a.data.dtype)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims) * scale, (a,))
    if out.requires_grad:
        def _bw():
            g = out.grad * scale
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        out._backward = _bw
    return out


def order_invariant_sum(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Sum along one axis, bitwise invariant to permutations of that axis.

    Entries are sorted before reduction; equal values are interchangeable, so
    any permutation of the axis produces the identical float result. The
    gradient of a sum does not depend on ordering, so backward is standard.
    """
    out = _make(np.sort(a.data, axis=axis).sum(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        out._backward = _bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = _make(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad.reshape(a.data.shape))
        out._backward = _bw
    return out


def transpose(a: Tensor, axes) -> Tensor:
    out = _make(np.transpose(a.data, axes), (a,))
    if out.requires_grad:
        inverse = np.argsort(axes)
        def _bw():
            _accumulate(a, np.transpose(out.grad, inverse))
        out._backward = _bw
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = _make(a.data[index], (a,))
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(a.data)
            g[index] = out.grad
            _accumulate(a, g)
        out._backward = _bw
    return out


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        def _bw():
            pieces = np.moveaxis(out.grad, axis, 0)
            for t, piece in zip(tensors, pieces):
                _accumulate(t, piece)
        out._backward = _bw
    return out


def spatial_broadcast(a: Tensor, height: int, width: int) -> Tensor:
    """Tile (B, D) vectors over a (height, width) grid -> (B, height, width, D)."""
    b, d = a.data.shape
    out = _make(np.broadcast_to(a.data[:, None, None, :], (b, height, width, d)).copy(), (a,))
    if out.requires_grad:
        def _bw():
            _accumulate(a, out.grad.sum(axis=(1, 2)))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# matmul family (einsum: bitwise row-stable, unlike BLAS kernels)
# ---------------------------------------------------------------------------

_EINSUM_SPECS = {
    # (a_ndim, b_ndim, transpose_b) -> (forward, grad_a, grad_b)
    (2, 2, False): ("nk,ke->ne", "ne,ke->nk", "nk,ne->ke"),
    (3, 2, False): ("bnk,ke->bne", "bne,ke->bnk", "bnk,bne->ke"),
    (3, 3, False): ("bnk,bke->bne", "bne,bke->bnk", "bnk,bne->bke"),
    (2, 2, True): ("nk,ek->ne", "ne,ek->nk", "ne,nk->ek"),
    (3, 3, True): ("bnk,bek->bne", "bne,bek->bnk", "bne,bnk->bek"),
}


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Contract the last axis of `a` with `b` (optionally with `b` transposed)."""
    key = (a.data.ndim, b.data.ndim, transpose_b)
    if key not in _EINSUM_SPECS:
        raise ValueError(f"unsupported matmul ranks {key}")
    fwd, grad_a_spec, grad_b_spec = _EINSUM_SPECS[key]
    out = _make(np.einsum(fwd, a.data, b.data), (a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accumulate(a, np.einsum(grad_a_spec, out.grad, b.data))
            if b.requires_grad:
                _accumulate(b, np.einsum(grad_b_spec, out.grad, a.data))
        out._backward = _bw
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias) over the trailing feature axis."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# normalization, attention softmax, recurrent cell
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int) -> Tensor:
    """Shift-stable softmax whose denominator is permutation-invariant bitwise."""
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.sort(e, axis=axis).sum(axis=axis, keepdims=True)
    out = _make(e / denom, (a,))
    if out.requires_grad:
        def _bw():
            y, g = out.data, out.grad
            inner = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(a, y * (g - inner))
        out._backward = _bw
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along `axis`, then scale and shift."""
    mu = mean(x, axis=axis, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=axis, keepdims=True)
    inv = power(add(var, Tensor(np.asarray(eps, dtype=x.data.dtype))), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


def gru_cell(
    h: Tensor,
    u: Tensor,
    *,
    wr: Tensor, ur: Tensor, br: Tensor,
    wz: Tensor, uz: Tensor, bz: Tensor,
    wn: Tensor, un: Tensor, bn: Tensor,
) -> Tensor:
    """Gated recurrent unit: update gate 1 hands the state to the candidate."""
    r = sigmoid(add(add(matmul(u, wr), matmul(h, ur)), br))
    z = sigmoid(add(add(matmul(u, wz), matmul(h, uz)), bz))
    n = tanh(add(add(matmul(u, wn), matmul(mul(r, h), un)), bn))
    one = Tensor(np.asarray(1.0, dtype=h.data.dtype))
    return add(mul(sub(one, z), h), mul(z, n))


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every element."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch {pred.data.shape} vs {target.data.shape}")
    diff = sub(pred, target)
    return mean(mul(diff, diff))
