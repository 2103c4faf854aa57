"""Optimization loops and checkpoint I/O.

Both recipes share the same skeleton: Adam with linear warmup to a
constant peak, global-norm gradient clipping, per-utterance loss graphs
averaged over the batch, and a frozen conv feature encoder. Accent
identification additionally trains head-only for its first
`head_only_updates` steps before the transformer unfreezes. In dynamic
accent mode the recognizer consumes predictions from a separately trained
accent model that stays frozen (its outputs are cached per utterance).
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import format_config, model_config_to_dict, model_config_from_dict, parse_config_text
from .ctc import Vocabulary, ctc_loss, greedy_decode
from .errors import ConfigError, DataError, NumericError, UsageError
from .model import (
    AccentClassifier,
    AccentLabel,
    ModelConfig,
    SpeechRecognizer,
    accent_final_loss,
)

CHECKPOINT_MAGIC = b"NNCKPT1"
GRAD_CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    task: str = "accent_id"            # accent_id | asr
    learning_rate: float = 2e-5
    warmup_steps: int = 1600
    max_updates: int = 3000
    head_only_updates: int = 2000      # accent_id only
    batch_size: int = 8
    seed: int = 0
    freeze_encoder: bool = True
    sdc_weight: float = 1.0
    accent_mode: str = "none"

    def __post_init__(self):
        if self.task not in ("accent_id", "asr"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if min(self.warmup_steps, self.max_updates, self.head_only_updates, self.batch_size) < 0:
            raise ConfigError("step counts must be non-negative")
        if self.head_only_updates > self.max_updates:
            raise ConfigError(
                f"head_only_updates {self.head_only_updates} exceeds max_updates {self.max_updates}"
            )

    def to_dict(self, prefix: str = "train.") -> dict[str, str]:
        return {
            prefix + "task": self.task,
            prefix + "learning_rate": repr(self.learning_rate),
            prefix + "warmup_steps": str(self.warmup_steps),
            prefix + "max_updates": str(self.max_updates),
            prefix + "head_only_updates": str(self.head_only_updates),
            prefix + "batch_size": str(self.batch_size),
            prefix + "seed": str(self.seed),
            prefix + "freeze_encoder": str(self.freeze_encoder).lower(),
            prefix + "sdc_weight": repr(self.sdc_weight),
            prefix + "accent_mode": self.accent_mode,
        }


def lr_schedule(step: int, warmup_steps: int, peak_lr: float) -> float:
    """Linear ramp 0 -> peak over the warmup, then constant at peak."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return peak_lr
    return peak_lr * step / warmup_steps


class Adam:
    """Standard Adam with bias correction; moments and step counters are
    kept per parameter name, so staged unfreezing starts each parameter's
    schedule at its own first update."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, named_params: dict, lr: float):
        for name, p in named_params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ConfigError(f"gradient shape {g.shape} mismatches parameter {name} {p.data.shape}")
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
                self.t[name] = 0
            v = self.v[name]
            t = self.t[name] + 1
            self.t[name] = t
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(params, max_norm: float = GRAD_CLIP_NORM) -> float:
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# -- checkpoint file format ------------------------------------------------------


def save_checkpoint(path, config_text: str, tensors: dict[str, np.ndarray]):
    """Binary layout: magic, u32-length-prefixed UTF-8 config text, u32
    tensor count, then per tensor u16 name length + name, u8 rank, u32 dims,
    little-endian float32 payload. Tensors are written in sorted-name order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        blob = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        config_text = fh.read(cfg_len).decode("utf-8")
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            tensors[name] = arr.astype(np.float32)
        return config_text, tensors


def save_model_checkpoint(path, task: str, model, train_cfg: TrainConfig | None = None,
                          aid_model: AccentClassifier | None = None):
    cfg_map = {"task": task}
    cfg_map.update(model_config_to_dict(model.cfg))
    if train_cfg is not None:
        cfg_map.update(train_cfg.to_dict())
    tensors = {name: p.data for name, p in model.named_params().items()}
    if aid_model is not None:
        cfg_map.update(model_config_to_dict(aid_model.cfg, prefix="aid."))
        for name, p in aid_model.named_params().items():
            tensors["aid/" + name] = p.data
    save_checkpoint(path, format_config(cfg_map), tensors)


def load_model_checkpoint(path):
    """Rebuild the saved model (and its embedded frozen accent model, when
    the recognizer runs in dynamic mode)."""
    config_text, tensors = load_checkpoint(path)
    cfg_map = parse_config_text(config_text, source=str(path))
    task = cfg_map.get("task")
    if task not in ("accent_id", "asr"):
        raise DataError(f"{path}: checkpoint has unknown task {task!r}")
    model_cfg = model_config_from_dict(cfg_map)
    main = {n: t for n, t in tensors.items() if not n.startswith("aid/")}
    if task == "accent_id":
        model = AccentClassifier(model_cfg, seed=0)
    else:
        model = SpeechRecognizer(model_cfg, seed=0)
    model.load_state(main)
    aid_model = None
    if any(n.startswith("aid/") for n in tensors):
        aid_cfg = model_config_from_dict(cfg_map, prefix="aid.")
        aid_model = AccentClassifier(aid_cfg, seed=0)
        aid_model.load_state({n[len("aid/"):]: t for n, t in tensors.items() if n.startswith("aid/")})
        freeze(aid_model)
    return task, model, aid_model, cfg_map


def freeze(model):
    for p in model.named_params().values():
        p.requires_grad = False


# -- shared loop scaffolding ------------------------------------------------------


def _batches(n: int, batch_size: int, rng) -> list[list[int]]:
    order = rng.permutation(n)
    return [order[i : i + batch_size].tolist() for i in range(0, n, batch_size)]


def _mean_loss(losses):
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(total, l)
    return ad.mul(total, 1.0 / len(losses))


class _Trainer:
    def __init__(self, cfg: TrainConfig, model, dataset):
        if not dataset:
            raise DataError("empty training dataset")
        self.cfg = cfg
        self.model = model
        self.dataset = dataset
        self.rng = np.random.default_rng(cfg.seed + 1)
        self.opt = Adam()
        self.params = model.named_params()
        self.log_rows: list[tuple] = []

    def run(self, batch_loss_fn, trainable_fn):
        step = 0
        while step < self.cfg.max_updates:
            for batch_idx in _batches(len(self.dataset), self.cfg.batch_size, self.rng):
                step += 1
                t0 = time.perf_counter()
                trainable = trainable_fn(step)
                for name, p in self.params.items():
                    p.requires_grad = name in trainable
                    p.grad = None
                batch = [self.dataset[i] for i in batch_idx]
                loss = batch_loss_fn(batch)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise NumericError(f"non-finite training loss at step {step}")
                live = [self.params[n] for n in trainable]
                ad.backward(loss, live)
                clip_grad_norm(live)
                lr = lr_schedule(step, self.cfg.warmup_steps, self.cfg.learning_rate)
                self.opt.step({n: self.params[n] for n in trainable}, lr)
                wall_ms = (time.perf_counter() - t0) * 1000.0
                self.log_rows.append((step, loss_val, lr, wall_ms))
                if step >= self.cfg.max_updates:
                    break
        for p in self.params.values():
            p.requires_grad = True
            p.grad = None
        return self.log_rows


def write_train_log(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,lr,wall_ms\n")
        for step, loss, lr, wall in rows:
            fh.write(f"{step},{loss:.6f},{lr:.8g},{wall:.3f}\n")


# -- task-specific recipes ---------------------------------------------------------


def train_accent_id(cfg: TrainConfig, dataset, model_cfg: ModelConfig):
    """Head-only for the first `head_only_updates` steps, then the
    transformer joins; the conv encoder never updates. Returns
    (model, log_rows)."""
    for u in dataset:
        if u.accent is None:
            raise DataError(f"utterance {u.id} has no accent label; identification training needs one")
    model = AccentClassifier(model_cfg, seed=cfg.seed)
    trainer = _Trainer(cfg, model, dataset)
    names = set(trainer.params)
    head = {n for n in names if n.startswith("head")}
    non_conv = {n for n in names if not n.startswith("encoder.")}

    def trainable(step):
        return head if step <= cfg.head_only_updates else non_conv

    def batch_loss(batch):
        losses = []
        for u in batch:
            pred = model.forward(u.signal, training=True, rng=trainer.rng)
            label = AccentLabel(u.accent, model_cfg.n_accents)
            losses.append(accent_final_loss(pred, label, cfg.sdc_weight))
        return _mean_loss(losses)

    rows = trainer.run(batch_loss, trainable)
    return model, rows


def build_dynamic_feature_cache(aid_model: AccentClassifier):
    """Frozen accent model predictions, computed once per utterance id."""
    cache = {}

    def get(utt):
        pred = cache.get(utt.id)
        if pred is None:
            pred = aid_model.predict(utt.signal)
            cache[utt.id] = pred
        return pred

    return get


def train_asr(cfg: TrainConfig, dataset, model_cfg: ModelConfig, vocab: Vocabulary,
              aid_model: AccentClassifier | None = None):
    """CTC training; the conv encoder stays frozen by default and accent
    injection projections start at zero. Returns (model, log_rows)."""
    model_cfg = model_cfg.with_options(accent_mode=cfg.accent_mode)
    if cfg.accent_mode == "true_label":
        for u in dataset:
            if u.accent is None:
                raise DataError(f"utterance {u.id} has no accent label; true-label mode needs one")
    if cfg.accent_mode == "dynamic":
        if aid_model is None:
            raise UsageError("dynamic accent mode needs a trained accent model checkpoint")
        freeze(aid_model)
        dyn = build_dynamic_feature_cache(aid_model)
    model = SpeechRecognizer(model_cfg, seed=cfg.seed)
    trainer = _Trainer(cfg, model, dataset)
    names = set(trainer.params)
    if cfg.freeze_encoder:
        trainable_set = {n for n in names if not n.startswith("encoder.")}
    else:
        trainable_set = names

    def trainable(step):
        return trainable_set

    def accent_input(utt):
        if cfg.accent_mode == "none":
            return None
        if cfg.accent_mode == "true_label":
            return AccentLabel(utt.accent, model_cfg.n_accents)
        return dyn(utt)

    def batch_loss(batch):
        losses = []
        for u in batch:
            lp = model.forward(u.signal, accent=accent_input(u), training=True, rng=trainer.rng)
            losses.append(ctc_loss(lp, vocab.encode(u.transcript)))
        return _mean_loss(losses)

    rows = trainer.run(batch_loss, trainable)
    return model, rows


# -- inference over datasets --------------------------------------------------------


def classify_corpus(model: AccentClassifier, dataset) -> list[int]:
    return [model.predict(u.signal).predicted_class for u in dataset]


def transcribe_corpus(model: SpeechRecognizer, dataset, vocab: Vocabulary,
                      aid_model: AccentClassifier | None = None, decoder=None) -> list[str]:
    """Greedy decoding by default; pass `decoder(log_probs)` for beam/LM
    decoding. Accent inputs follow the model's accent_mode."""
    mode = model.cfg.accent_mode
    if mode == "dynamic":
        if aid_model is None:
            raise UsageError("dynamic-mode transcription needs the accent model")
        dyn = build_dynamic_feature_cache(aid_model)
    out = []
    for u in dataset:
        if mode == "none":
            accent = None
        elif mode == "true_label":
            if u.accent is None:
                raise DataError(f"utterance {u.id} has no accent label for true-label decoding")
            accent = AccentLabel(u.accent, model.cfg.n_accents)
        else:
            accent = dyn(u)
        lp = model.forward(u.signal, accent=accent, training=False)
        out.append(decoder(lp) if decoder is not None else greedy_decode(lp, vocab))
    return out
