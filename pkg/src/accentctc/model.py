"""The two speech architectures: frame-level accent identification and
accent-conditioned CTC recognition.

Accent identification predicts a per-frame accent logit row, pools it over
time into (mean, std), and trains on cross entropy over the mean plus a
standard-deviation constraint that pushes frame predictions to agree.

The recognizer can receive an additive accent bias at the encoder output
and/or the context output. The bias comes either from the true accent
label (one-hot through a bias-free projection) or, dynamically, from a
frozen accent model's frame-gated softmax prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, UsageError
from .layers import ConvFeatureEncoder, Linear, LayerNorm, TransformerBlock, dropout, sinusoidal_positions

ACCENT_MODES = ("none", "true_label", "dynamic")
COMBINE_MODES = ("add", "concat")
POOLING_MODES = ("frame_mean", "stats_pool")
INJECTION_SITES = ("encoder_output", "context_output")


@dataclass
class ModelConfig:
    """Architecture and head configuration.

    Defaults are the toy scale used throughout the tests; `full_size()`
    gives the production-scale stack (seven conv layers, 12 transformer
    layers at 768 dims, 28 output symbols, 8 accent classes).
    """

    conv_layers: tuple = ((64, 4, 2), (64, 4, 2))
    d_encoder: int = 64
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ffn: int = 256
    vocab_size: int = 28
    n_accents: int = 4
    gate_threshold: float = 0.4
    dropout: float = 0.1
    layerdrop: float = 0.1
    accent_mode: str = "none"
    injection_sites: tuple = ("encoder_output", "context_output")
    combine_mode: str = "add"
    accent_head_pooling: str = "frame_mean"
    sdc_weight: float = 1.0
    per_accent_output_heads: bool = False

    def __post_init__(self):
        self.conv_layers = tuple(tuple(map(int, layer)) for layer in self.conv_layers)
        self.injection_sites = tuple(self.injection_sites)
        if self.n_accents < 2:
            raise ConfigError(f"need at least 2 accent classes, got {self.n_accents}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must cover blank plus one symbol, got {self.vocab_size}")
        if not 0.0 <= self.gate_threshold <= 1.0:
            raise ConfigError(f"gate_threshold must lie in [0, 1], got {self.gate_threshold}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.d_encoder != self.conv_layers[-1][0]:
            raise ConfigError(
                f"d_encoder {self.d_encoder} must equal last conv channels {self.conv_layers[-1][0]}"
            )
        if self.accent_mode not in ACCENT_MODES:
            raise ConfigError(f"unknown accent_mode {self.accent_mode!r}")
        if self.combine_mode not in COMBINE_MODES:
            raise ConfigError(f"unknown combine_mode {self.combine_mode!r}")
        if self.accent_head_pooling not in POOLING_MODES:
            raise ConfigError(f"unknown accent_head_pooling {self.accent_head_pooling!r}")
        for site in self.injection_sites:
            if site not in INJECTION_SITES:
                raise ConfigError(f"unknown injection site {site!r}")

    @staticmethod
    def full_size() -> "ModelConfig":
        return ModelConfig(
            conv_layers=((512, 10, 5), (512, 3, 2), (512, 3, 2), (512, 3, 2),
                         (512, 3, 2), (512, 2, 2), (512, 2, 2)),
            d_encoder=512,
            d_model=768,
            n_layers=12,
            n_heads=8,
            d_ffn=3072,
            vocab_size=28,
            n_accents=8,
        )

    def with_options(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


@dataclass
class AccentLabel:
    """Ground-truth accent category as index plus one-hot vector."""

    index: int
    n_accents: int

    def __post_init__(self):
        if not 0 <= self.index < self.n_accents:
            raise ConfigError(f"accent index {self.index} outside [0, {self.n_accents})")

    @property
    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.n_accents, dtype=np.float32)
        v[self.index] = 1.0
        return v


@dataclass
class AccentPrediction:
    """Frame logits plus their temporal mean/std, and optional frame gates."""

    a: Tensor            # [T x C]
    a_mean: Tensor       # [C]
    a_std: Tensor        # [C]
    gates: Tensor | None = None  # [T]
    pooling: str = "frame_mean"

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.a_mean.data))


# -- losses and gates ---------------------------------------------------------


def sdc_loss(pred: AccentPrediction) -> Tensor:
    """Mean over classes of the temporal standard deviation of frame logits;
    zero exactly when every frame predicts the same logit row."""
    if pred.pooling != "frame_mean":
        raise UsageError("sdc_loss needs frame-level logits; stats_pool predictions have none")
    return ad.tmean(pred.a_std)


def accent_ce_loss(a_mean: Tensor, label: AccentLabel) -> Tensor:
    logp = ad.log_softmax(a_mean, axis=-1)
    return ad.mul(ad.narrow(logp, 0, label.index, 1), -1.0)


def accent_final_loss(pred: AccentPrediction, label: AccentLabel, sdc_weight: float = 1.0) -> Tensor:
    ce = accent_ce_loss(pred.a_mean, label)
    if sdc_weight == 0.0:
        return ce
    return ad.add(ce, ad.mul(sdc_loss(pred), sdc_weight))


def frame_gates(a: Tensor, a_mean: Tensor, threshold: float) -> Tensor:
    """Per-frame gate: sigmoid of the dot product between a frame's raw
    logits and the utterance-mean logits, zeroed at or below `threshold`.
    Every emitted value is 0 or lies in (threshold, 1)."""
    dots = ad.tsum(ad.mul(a, a_mean), axis=1)
    w = ad.sigmoid(dots)
    keep = (w.data > threshold).astype(w.data.dtype)
    return ad.mul(w, Tensor(keep))


def inject_true(x: Tensor, label: AccentLabel, proj: Linear,
                combine: str = "add", post_proj: Linear | None = None) -> Tensor:
    """Add the projected one-hot accent vector to every frame (or concatenate
    and project back when combine='concat')."""
    if proj.weight.shape[0] != label.n_accents:
        raise ConfigError(
            f"projection expects {proj.weight.shape[0]} accent classes, label has {label.n_accents}"
        )
    bias = proj(Tensor(label.one_hot))
    if combine == "add":
        return ad.add(x, bias)
    return _concat_combine(x, bias, post_proj)


def inject_dynamic(x: Tensor, gates: Tensor, a_mean: Tensor, proj: Linear,
                   combine: str = "add", post_proj: Linear | None = None) -> Tensor:
    """Per-frame accent bias: frame i receives proj(w_i * softmax(a_mean)).

    proj is bias-free, so a zero gate leaves that frame untouched.
    """
    if x.shape[0] != gates.shape[0]:
        raise ConfigError(f"gate count {gates.shape[0]} does not match frame count {x.shape[0]}")
    if proj.weight.shape[0] != a_mean.shape[0]:
        raise ConfigError(
            f"projection expects {proj.weight.shape[0]} accent classes, prediction has {a_mean.shape[0]}"
        )
    sm = ad.softmax(a_mean, axis=-1)
    weighted = ad.mul(ad.reshape(gates, (gates.shape[0], 1)), ad.reshape(sm, (1, sm.shape[0])))
    bias_rows = ad.matmul(weighted, proj.weight)  # bias-free by construction
    if combine == "add":
        return ad.add(x, bias_rows)
    return _concat_combine(x, bias_rows, post_proj)


def _concat_combine(x: Tensor, bias, post_proj: Linear | None) -> Tensor:
    if post_proj is None:
        raise ConfigError("combine_mode=concat requires a post-concat projection")
    if bias.ndim == 1:
        rows = ad.add(Tensor(np.zeros((x.shape[0], bias.shape[0]), dtype=np.float32)), bias)
    else:
        rows = bias
    return post_proj(ad.concat([x, rows], axis=1))


def identity_concat_init(d: int, extra: int) -> np.ndarray:
    """[I; 0]-structured weight for a (d+extra) -> d post-concat projection,
    making concat injection start as an exact pass-through."""
    w = np.zeros((d + extra, d), dtype=np.float32)
    w[:d, :d] = np.eye(d, dtype=np.float32)
    return w


# -- shared trunk -------------------------------------------------------------


class ContextNetwork:
    """Input norm (stabilizes the frozen conv features' scale), input
    projection, fixed sinusoidal positions, pre-norm transformer stack,
    final layer norm."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.ln_in = LayerNorm(cfg.d_encoder)
        self.in_proj = Linear(cfg.d_encoder, cfg.d_model, rng)
        self.blocks = [
            TransformerBlock(cfg.d_model, cfg.n_heads, cfg.d_ffn, cfg.dropout, rng)
            for _ in range(cfg.n_layers)
        ]
        self.ln_final = LayerNorm(cfg.d_model)

    def __call__(self, c: Tensor, training: bool = False, rng=None) -> Tensor:
        x = self.in_proj(self.ln_in(c))
        x = ad.add(x, Tensor(sinusoidal_positions(x.shape[0], self.cfg.d_model)))
        for block in self.blocks:
            if training and self.cfg.layerdrop > 0.0 and rng.random() < self.cfg.layerdrop:
                continue
            x = block(x, training=training, rng=rng)
        return self.ln_final(x)

    def params(self, prefix: str):
        yield from self.ln_in.params(prefix + ".ln_in")
        yield from self.in_proj.params(prefix + ".in_proj")
        for i, block in enumerate(self.blocks):
            yield from block.params(f"{prefix}.block{i}")
        yield from self.ln_final.params(prefix + ".ln_final")


class _SpeechTrunk:
    """Conv feature encoder plus transformer context network."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.encoder = ConvFeatureEncoder(cfg.conv_layers, rng)
        self.context = ContextNetwork(cfg, rng)

    def encode(self, signal) -> Tensor:
        return self.encoder(ad.as_tensor(signal))

    def contextualize(self, c: Tensor, training: bool = False, rng=None) -> Tensor:
        return self.context(c, training=training, rng=rng)

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        out.update(dict(self.encoder.params("encoder")))
        out.update(dict(self.context.params("context")))
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        params = self.named_params()
        missing = set(params) - set(state)
        if missing:
            raise ConfigError(f"checkpoint missing tensors: {sorted(missing)[:4]}...")
        for name, tensor in params.items():
            arr = state[name]
            if arr.shape != tensor.data.shape:
                raise ShapeError(f"checkpoint tensor {name} has shape {arr.shape}, expected {tensor.data.shape}")
            tensor.data = arr.astype(np.float32).copy()


class AccentClassifier(_SpeechTrunk):
    """Frame-level accent identification with mean/std pooling of the
    per-frame logits (or a single stats-pooled logit row as the sentence
    level baseline)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        super().__init__(cfg, rng)
        if cfg.accent_head_pooling == "frame_mean":
            self.head = Linear(cfg.d_model, cfg.n_accents, rng)
        else:
            self.head = Linear(2 * cfg.d_model, cfg.n_accents, rng)

    def accent_forward(self, h: Tensor) -> AccentPrediction:
        if self.cfg.accent_head_pooling == "frame_mean":
            a = self.head(h)
            a_mean, a_std = ad.mean_std(a)
            return AccentPrediction(a=a, a_mean=a_mean, a_std=a_std, pooling="frame_mean")
        h_mean, h_std = ad.mean_std(h)
        logits = self.head(ad.concat([h_mean, h_std], axis=0))
        frames = h.shape[0]
        a = ad.add(Tensor(np.zeros((frames, self.cfg.n_accents), dtype=np.float32)), logits)
        zeros = Tensor(np.zeros(self.cfg.n_accents, dtype=np.float32))
        return AccentPrediction(a=a, a_mean=logits, a_std=zeros, pooling="stats_pool")

    def forward(self, signal, training: bool = False, rng=None) -> AccentPrediction:
        c = self.encode(signal)
        c = dropout(c, self.cfg.dropout, training, rng)
        h = self.contextualize(c, training=training, rng=rng)
        return self.accent_forward(h)

    def predict(self, signal) -> AccentPrediction:
        """Inference pass that also fills the frame gates."""
        pred = self.forward(signal, training=False)
        if pred.pooling == "frame_mean":
            pred.gates = frame_gates(pred.a, pred.a_mean, self.cfg.gate_threshold)
        return pred

    def named_params(self) -> dict[str, Tensor]:
        out = super().named_params()
        out.update(dict(self.head.params("head")))
        return out


class SpeechRecognizer(_SpeechTrunk):
    """CTC recognizer with optional accent bias injection.

    Injection projections start at zero, so a freshly built accent-aware
    model computes exactly the same outputs as the accent-agnostic one.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        super().__init__(cfg, rng)
        self.inject_enc = Linear(cfg.n_accents, cfg.d_encoder, rng, bias=False, zero_init=True)
        self.inject_ctx = Linear(cfg.n_accents, cfg.d_model, rng, bias=False, zero_init=True)
        self.post_enc = None
        self.post_ctx = None
        if cfg.combine_mode == "concat":
            self.post_enc = Linear(2 * cfg.d_encoder, cfg.d_encoder, rng, bias=False)
            self.post_enc.weight.data = identity_concat_init(cfg.d_encoder, cfg.d_encoder)
            self.post_ctx = Linear(2 * cfg.d_model, cfg.d_model, rng, bias=False)
            self.post_ctx.weight.data = identity_concat_init(cfg.d_model, cfg.d_model)
        if cfg.per_accent_output_heads:
            self.out_heads = [Linear(cfg.d_model, cfg.vocab_size, rng) for _ in range(cfg.n_accents)]
        else:
            self.out_heads = [Linear(cfg.d_model, cfg.vocab_size, rng)]

    # -- accent plumbing ------------------------------------------------------

    def _check_accent_input(self, accent):
        mode = self.cfg.accent_mode
        if mode == "none":
            return
        if mode == "true_label":
            if not isinstance(accent, AccentLabel):
                raise UsageError("accent_mode=true_label needs an AccentLabel input")
        elif mode == "dynamic":
            if not isinstance(accent, AccentPrediction):
                raise UsageError("accent_mode=dynamic needs an AccentPrediction input")
            if accent.gates is None:
                raise UsageError("dynamic accent input is missing frame gates")

    def _inject(self, x: Tensor, accent, site: str) -> Tensor:
        if self.cfg.accent_mode == "none" or site not in self.cfg.injection_sites:
            return x
        proj = self.inject_enc if site == "encoder_output" else self.inject_ctx
        post = self.post_enc if site == "encoder_output" else self.post_ctx
        if self.cfg.accent_mode == "true_label":
            return inject_true(x, accent, proj, self.cfg.combine_mode, post)
        if accent.a.shape[0] != x.shape[0]:
            raise ConfigError(
                f"accent prediction has {accent.a.shape[0]} frames, recognizer produced {x.shape[0]}"
            )
        return inject_dynamic(x, accent.gates, accent.a_mean, proj, self.cfg.combine_mode, post)

    def _output_head(self, accent) -> Linear:
        if not self.cfg.per_accent_output_heads:
            return self.out_heads[0]
        if isinstance(accent, AccentLabel):
            return self.out_heads[accent.index]
        if isinstance(accent, AccentPrediction):
            return self.out_heads[accent.predicted_class]
        raise UsageError("per-accent output heads need an accent input")

    def forward(self, signal, accent=None, training: bool = False, rng=None) -> Tensor:
        """Log-probability rows [T x vocab_size]; rows exponentiate to 1."""
        self._check_accent_input(accent)
        c = self.encode(signal)
        c = dropout(c, self.cfg.dropout, training, rng)
        c = self._inject(c, accent, "encoder_output")
        h = self.contextualize(c, training=training, rng=rng)
        h = self._inject(h, accent, "context_output")
        logits = self._output_head(accent)(h)
        return ad.log_softmax(logits, axis=-1)

    def named_params(self) -> dict[str, Tensor]:
        out = super().named_params()
        out.update(dict(self.inject_enc.params("inject_enc")))
        out.update(dict(self.inject_ctx.params("inject_ctx")))
        if self.post_enc is not None:
            out.update(dict(self.post_enc.params("post_enc")))
            out.update(dict(self.post_ctx.params("post_ctx")))
        if self.cfg.per_accent_output_heads:
            for i, head in enumerate(self.out_heads):
                out.update(dict(head.params(f"out_head{i}")))
        else:
            out.update(dict(self.out_heads[0].params("out_head")))
        return out
