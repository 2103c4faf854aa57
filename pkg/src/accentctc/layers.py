"""Neural layers assembled from the autodiff ops.

Transformer blocks use pre-norm wiring (layer norm before each sublayer),
so a block with zero sublayer weights is an exact identity.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


def dropout(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(np.float32) / keep
    return ad.mul(x, Tensor(mask))


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed absolute positional encoding table [length x dim]."""
    pos = np.arange(length, dtype=np.float32)[:, None]
    idx = np.arange(dim, dtype=np.float32)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(idx / 2.0)) / dim)
    table = np.where(idx.astype(np.int64) % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float32)


class Linear:
    """y = x @ W + b with W stored [d_in x d_out]."""

    def __init__(self, d_in: int, d_out: int, rng, bias: bool = True, zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=np.float32)
        else:
            scale = 1.0 / np.sqrt(d_in)
            w = rng.uniform(-scale, scale, size=(d_in, d_out)).astype(np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out

    def params(self, prefix: str):
        yield prefix + ".weight", self.weight
        if self.bias is not None:
            yield prefix + ".bias", self.bias


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        m = ad.tmean(x, axis=-1, keepdims=True)
        centered = ad.sub(x, m)
        var = ad.tmean(ad.mul(centered, centered), axis=-1, keepdims=True)
        normed = ad.div(centered, ad.sqrt(ad.add(var, self.eps)))
        return ad.add(ad.mul(normed, self.gain), self.bias)

    def params(self, prefix: str):
        yield prefix + ".gain", self.gain
        yield prefix + ".bias", self.bias


class MultiHeadAttention:
    def __init__(self, d_model: int, n_heads: int, rng):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[0]
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        heads = []
        inv_scale = 1.0 / float(np.sqrt(self.d_head))
        for h in range(self.n_heads):
            lo = h * self.d_head
            qh = ad.narrow(q, 1, lo, self.d_head)
            kh = ad.narrow(k, 1, lo, self.d_head)
            vh = ad.narrow(v, 1, lo, self.d_head)
            scores = ad.mul(ad.matmul(qh, ad.transpose(kh)), inv_scale)
            weights = ad.softmax(scores, axis=-1)
            heads.append(ad.matmul(weights, vh))
        merged = heads[0] if self.n_heads == 1 else ad.concat(heads, axis=1)
        assert merged.shape == (t, self.n_heads * self.d_head)
        return self.wo(merged)

    def params(self, prefix: str):
        yield from self.wq.params(prefix + ".wq")
        yield from self.wk.params(prefix + ".wk")
        yield from self.wv.params(prefix + ".wv")
        yield from self.wo.params(prefix + ".wo")


class TransformerBlock:
    """Pre-norm block: x + Drop(Attn(LN(x))), then a + Drop(FFN(LN(a)))."""

    def __init__(self, d_model: int, n_heads: int, d_ffn: int, dropout_rate: float, rng):
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)
        self.ffn1 = Linear(d_model, d_ffn, rng)
        self.ffn2 = Linear(d_ffn, d_model, rng)
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        a = ad.add(x, dropout(self.attn(self.ln1(x)), self.dropout_rate, training, rng))
        f = self.ffn2(ad.gelu(self.ffn1(self.ln2(a))))
        return ad.add(a, dropout(f, self.dropout_rate, training, rng))

    def params(self, prefix: str):
        yield from self.ln1.params(prefix + ".ln1")
        yield from self.attn.params(prefix + ".attn")
        yield from self.ln2.params(prefix + ".ln2")
        yield from self.ffn1.params(prefix + ".ffn1")
        yield from self.ffn2.params(prefix + ".ffn2")


class ConvFeatureEncoder:
    """Stack of valid 1-d convolutions (GELU between layers) mapping a raw
    [L] signal to [T x channels] frame features."""

    def __init__(self, conv_layers, rng):
        self.specs = [(int(c), int(k), int(s)) for c, k, s in conv_layers]
        self.weights = []
        c_in = 1
        for channels, kernel, stride in self.specs:
            scale = 1.0 / np.sqrt(c_in * kernel)
            w = rng.uniform(-scale, scale, size=(channels, c_in, kernel)).astype(np.float32)
            self.weights.append(Tensor(w, requires_grad=True))
            c_in = channels

    @property
    def out_channels(self) -> int:
        return self.specs[-1][0]

    def min_input_length(self) -> int:
        """Receptive field of the whole stack: the shortest signal that
        yields at least one frame."""
        need = 1
        for _, kernel, stride in reversed(self.specs):
            need = (need - 1) * stride + kernel
        return need

    def output_length(self, length: int) -> int:
        for _, kernel, stride in self.specs:
            if length < kernel:
                raise ShapeError(
                    f"signal too short for conv stack: minimum length {self.min_input_length()}"
                )
            length = ad.conv_output_length(length, kernel, stride)
        return length

    def __call__(self, signal: Tensor) -> Tensor:
        if signal.ndim != 1:
            raise ShapeError(f"encoder expects a 1-d signal, got shape {signal.shape}")
        self.output_length(signal.shape[0])  # raises early with the minimum-length message
        x = ad.reshape(signal, (1, signal.shape[0]))
        for i, (w, (_, _, stride)) in enumerate(zip(self.weights, self.specs)):
            x = ad.conv1d(x, w, stride)
            if i < len(self.specs) - 1:
                x = ad.gelu(x)
        return ad.transpose(x)  # [T x channels]

    def params(self, prefix: str):
        for i, w in enumerate(self.weights):
            yield f"{prefix}.conv{i}.weight", w
