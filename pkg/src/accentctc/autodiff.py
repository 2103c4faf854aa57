"""Reverse-mode automatic differentiation over dense numpy arrays.

The operator set is exactly what the speech models need: elementwise
arithmetic with gradient un-broadcasting, matmul, valid 1-d convolution,
row softmax / log-softmax, logaddexp with -inf-safe gradients, reductions,
slicing/concatenation, and a temporal mean/std pooling whose sqrt gradient
is defined as 0 at 0.

Forward compute runs in float32 by default; building a graph from float64
leaves propagates float64 throughout, which is how the finite-difference
oracle (`grad_check`) operates.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError

_FLOAT_DTYPES = (np.float32, np.float64)


def _coerce(data):
    # float32 is the working precision; only explicit float64 arrays and
    # numpy scalars keep their dtype (so float64 graphs, used by the
    # finite-difference oracle, stay float64 end to end)
    if isinstance(data, (np.ndarray, np.generic)):
        arr = np.asarray(data)
        return arr if arr.dtype in _FLOAT_DTYPES else arr.astype(np.float32)
    return np.asarray(data, dtype=np.float32)


class Tensor:
    """Dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _coerce(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def constant(data):
        return Tensor(data)

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def assert_finite(self, what: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in {what}")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff machinery ---------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar, accumulating into `.grad` of every
        tracked tensor reachable from it. Accumulation is additive, so zero
        stale gradients first."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo = _toposort(self)
        if self.grad is None:
            self.grad = np.ones_like(self.data)
        else:
            self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accum(t: Tensor, grad: np.ndarray):
    if not t.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad), t.data.shape)
    if t.grad is None:
        t.grad = grad.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + grad


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        _accum(x, g * out_data)

    return _make(out_data, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        _accum(x, g / x.data)

    return _make(np.log(x.data), (x,), backward)


def sqrt(x) -> Tensor:
    """Square root whose gradient is defined as 0 where the output is 0."""
    x = as_tensor(x)
    out_data = np.sqrt(x.data)

    def backward(g):
        safe = np.where(out_data == 0.0, 1.0, out_data)
        _accum(x, np.where(out_data == 0.0, 0.0, g * 0.5 / safe))

    return _make(out_data, (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def backward(g):
        _accum(x, g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x) -> Tensor:
    """Gaussian error linear unit (tanh form); smooth, so finite differences
    validate it everywhere."""
    x = as_tensor(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out_data = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        local = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
        _accum(x, g * local)

    return _make(out_data, (x,), backward)


def logaddexp(a, b) -> Tensor:
    """Elementwise log(exp(a) + exp(b)); -inf inputs propagate cleanly and
    gradients through fully -inf entries are 0 instead of NaN."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = np.logaddexp(a.data, b.data)

    def backward(g):
        dead = np.isneginf(out_data)
        with np.errstate(invalid="ignore"):
            wa = np.where(dead, 0.0, np.exp(a.data - np.where(dead, 0.0, out_data)))
            wb = np.where(dead, 0.0, np.exp(b.data - np.where(dead, 0.0, out_data)))
        _accum(a, g * wa)
        _accum(b, g * wb)

    return _make(out_data, (a, b), backward)


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul supports up to 2-d operands, got {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            _accum(a, g * bd)
            _accum(b, g * ad)
        elif ad.ndim == 2 and bd.ndim == 2:
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)
        elif ad.ndim == 1:  # (k,) @ (k,n) -> (n,)
            _accum(a, bd @ g)
            _accum(b, np.outer(ad, g))
        else:  # (m,k) @ (k,) -> (m,)
            _accum(a, np.outer(g, bd))
            _accum(b, ad.T @ g)

    return _make(out_data, (a, b), backward)


def transpose(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        _accum(x, g.T)

    return _make(x.data.T, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    in_shape = x.data.shape

    def backward(g):
        _accum(x, g.reshape(in_shape))

    return _make(x.data.reshape(shape), (x,), backward)


# -- reductions -------------------------------------------------------------


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    in_shape = x.data.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, in_shape))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    in_shape = x.data.shape
    count = x.data.size if axis is None else in_shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, in_shape) / count)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


def mean_std(x) -> tuple[Tensor, Tensor]:
    """Column mean and population standard deviation of a [T x C] tensor.

    std uses 1/T normalization so it stays defined at T=1 (std = 0), and its
    gradient where std = 0 is 0 by the guarded-sqrt convention.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"mean_std expects a 2-d tensor, got shape {x.shape}")
    if x.shape[0] < 1:
        raise ShapeError("mean_std needs at least one row")
    m = tmean(x, axis=0)
    centered = sub(x, m)
    var = tmean(mul(centered, centered), axis=0)
    return m, sqrt(var)


# -- softmax family ----------------------------------------------------------


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, out_data * (g - dot))

    return _make(out_data, (x,), backward)


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        _accum(x, g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (x,), backward)


# -- structural ops ----------------------------------------------------------


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            _accum(t, g[tuple(idx)])
            offset += size

    return _make(out_data, tuple(tensors), backward)


def narrow(x, axis, start, length) -> Tensor:
    """Contiguous slice of `length` entries along `axis`."""
    x = as_tensor(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        _accum(x, full)

    return _make(x.data[idx].copy(), (x,), backward)


def gather_cols(x, indices) -> Tensor:
    """out[t, i] = x[t, indices[i]]; duplicate indices accumulate on backward."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (slice(None), indices), g)
        _accum(x, full)

    return _make(x.data[:, indices], (x,), backward)


# -- convolution --------------------------------------------------------------


def conv_output_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def conv1d(x, weight, stride: int) -> Tensor:
    """Valid (no padding) 1-d convolution.

    x: [C_in x L], weight: [C_out x C_in x K] -> [C_out x L'] with
    L' = floor((L - K) / stride) + 1.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if stride < 1:
        raise ConfigError(f"conv1d stride must be >= 1, got {stride}")
    if x.ndim != 2 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects [C_in x L] and [C_out x C_in x K], got {x.shape}, {weight.shape}")
    c_in, length = x.shape
    c_out, w_in, kernel = weight.shape
    if w_in != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {c_in}, weight {w_in}")
    if length < kernel:
        raise ShapeError(f"conv1d input length {length} shorter than kernel {kernel}")
    out_len = conv_output_length(length, kernel, stride)
    windows = np.lib.stride_tricks.sliding_window_view(x.data, kernel, axis=1)[:, ::stride, :]

    def backward(g):
        if weight.requires_grad:
            _accum(weight, np.einsum("ol,ilk->oik", g, windows, optimize=True))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for k in range(kernel):
                # positions j = l*stride + k receive w[:, :, k]^T @ g
                gx[:, k : k + stride * (out_len - 1) + 1 : stride] += weight.data[:, :, k].T @ g
            _accum(x, gx)

    out_data = np.einsum("oik,ilk->ol", weight.data, windows, optimize=True)
    return _make(out_data, (x, weight), backward)


# -- gradient utilities --------------------------------------------------------


def backward(loss: Tensor, params=None):
    """Backpropagate `loss` and guarantee every tensor in `params` ends up
    with a gradient; parameters the loss never touched get zeros."""
    loss.backward()
    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


def grad_check(f, point, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps one Tensor to a scalar Tensor. Everything runs in float64; the
    relative error per coordinate is |a - n| / max(1, |a|, |n|).
    """
    if eps <= 0:
        raise ConfigError("grad_check eps must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    out = f(x)
    if out.data.size != 1:
        raise UsageError("grad_check needs a scalar-valued function")
    if not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite function value in grad_check")
    out.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(base.copy())).item()
        flat[i] = orig - eps
        lo = f(Tensor(base.copy())).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError("non-finite function value in grad_check probe")
        nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
