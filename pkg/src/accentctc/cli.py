"""Command-line entry point.

Subcommands: gen-data, train-aid, train-asr, train-lm, decode, eval-wer,
eval-aid. Every value can come from a `key = value` config file
(`--config`), with explicit flags winning; the fully resolved mapping is
echoed to `config.resolved` in the output directory, and re-running from
that file (single-threaded, same seed) reproduces outputs bit for bit.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import config as cfgmod
from . import data as datamod
from . import evaluate as evalmod
from . import ngram
from .ctc import Vocabulary, beam_decode, greedy_decode
from .errors import ConfigError, DataError, NumericError, ShapeError, UsageError
from .model import ModelConfig
from .training import (
    TrainConfig,
    load_model_checkpoint,
    save_model_checkpoint,
    train_accent_id,
    train_asr,
    transcribe_corpus,
    classify_corpus,
    write_train_log,
)

ENV_SEED = "ACCENTCTC_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--workdir", default=".", help="base directory for relative paths")
    p.add_argument("--threads", type=int, default=1,
                   help="data-loading threads; 1 guarantees reproducibility")
    p.add_argument("--seed", type=int, default=None,
                   help=f"RNG seed (falls back to ${ENV_SEED}, then 0)")


def build_parser() -> _Parser:
    parser = _Parser(prog="accentctc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic accented corpus")
    _add_common(p)
    p.add_argument("--out", help="corpus output directory")
    p.add_argument("--accents", type=int, default=None)
    p.add_argument("--utts", type=int, default=None)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--noise-std", type=float, default=None)
    p.add_argument("--samples-per-symbol", type=int, default=None)
    p.add_argument("--alphabet", default=None)
    p.add_argument("--train-fraction", type=float, default=None)

    for name in ("train-aid", "train-asr"):
        p = sub.add_parser(name, help=f"train the {'accent identifier' if name == 'train-aid' else 'recognizer'}")
        _add_common(p)
        p.add_argument("--data", help="manifest path")
        p.add_argument("--out", help="run output directory")
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--warmup", type=int, default=None)
        p.add_argument("--max-updates", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        if name == "train-aid":
            p.add_argument("--head-only-updates", type=int, default=None)
            p.add_argument("--sdc-weight", type=float, default=None)
            p.add_argument("--pooling", choices=("frame_mean", "stats_pool"), default=None)
        else:
            p.add_argument("--accent-mode", choices=("none", "true_label", "dynamic"), default=None)
            p.add_argument("--aid-ckpt", default=None, help="accent model checkpoint for dynamic mode")
            p.add_argument("--injection-sites", default=None,
                           help="comma-separated subset of encoder_output,context_output")
            p.add_argument("--combine-mode", choices=("add", "concat"), default=None)
            p.add_argument("--per-accent-heads", action=argparse.BooleanOptionalAction, default=None)
            p.add_argument("--freeze-encoder", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("train-lm", help="train the word n-gram language model")
    _add_common(p)
    p.add_argument("--data", help="manifest path (train split transcripts)")
    p.add_argument("--out", help="output directory (writes lm.txt)")
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--smoothing", choices=("katz", "add_k"), default=None)
    p.add_argument("--add-k", type=float, default=None)
    p.add_argument("--discount", type=float, default=None)

    p = sub.add_parser("decode", help="decode a manifest split with a trained recognizer")
    _add_common(p)
    p.add_argument("--ckpt", help="recognizer checkpoint")
    p.add_argument("--data", help="manifest path")
    p.add_argument("--split", choices=("train", "test"), default=None)
    p.add_argument("--out", help="output directory (writes hyps.tsv)")
    p.add_argument("--beam", type=int, default=500)
    p.add_argument("--wip", type=float, default=-0.52)
    p.add_argument("--lm", default=None, help="LM file for shallow fusion")
    p.add_argument("--lm-weight", type=float, default=1.74)
    p.add_argument("--greedy", action="store_true", help="greedy decoding instead of beam search")
    p.add_argument("--limit", type=int, default=None, help="decode only the first N utterances")

    p = sub.add_parser("eval-wer", help="score hypotheses against reference transcripts")
    _add_common(p)
    p.add_argument("--refs", help="manifest with references")
    p.add_argument("--hyps", help="hyps.tsv from decode")
    p.add_argument("--out", default=None, help="optional report directory")

    p = sub.add_parser("eval-aid", help="accent identification accuracy on a split")
    _add_common(p)
    p.add_argument("--ckpt", help="accent model checkpoint")
    p.add_argument("--data", help="manifest path")
    p.add_argument("--split", choices=("train", "test"), default=None)
    p.add_argument("--out", default=None, help="optional report directory")

    return parser


# -- option resolution ----------------------------------------------------------


def _resolve(args, flag_to_key: dict) -> dict[str, str]:
    """File config overlaid with any flags the user actually passed."""
    resolved: dict[str, str] = {}
    if args.config:
        resolved.update(cfgmod.load_config_file(_path(args, args.config)))
    for flag, key in flag_to_key.items():
        value = getattr(args, flag)
        if value is not None:
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            resolved[key] = str(value)
    if "seed" not in resolved:
        resolved["seed"] = os.environ.get(ENV_SEED, "0")
    resolved["threads"] = str(args.threads)
    return resolved


def _path(args, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(args.workdir, p)


def _require(resolved: dict, key: str) -> str:
    if key not in resolved or not resolved[key]:
        raise UsageError(f"missing required option {key!r} (flag or config file)")
    return resolved[key]


def _emit_resolved(out_dir: str, resolved: dict):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.format_config(resolved))


def _load_split(args, resolved, key="data", split=None):
    manifest = _path(args, _require(resolved, key))
    utts = datamod.load_manifest(manifest)
    if split:
        utts = [u for u in utts if u.split == split]
    return utts


# -- subcommand handlers ----------------------------------------------------------


def _cmd_gen_data(args):
    resolved = _resolve(args, {
        "out": "out", "seed": "seed", "accents": "gen.n_accents", "utts": "gen.n_utterances",
        "separation": "gen.separation", "noise_std": "gen.noise_std",
        "samples_per_symbol": "gen.samples_per_symbol", "alphabet": "gen.alphabet",
        "train_fraction": "gen.train_fraction",
    })
    defaults = datamod.SynthSpec()
    spec = datamod.SynthSpec(
        n_utterances=cfgmod.get_typed(resolved, "gen.n_utterances", int, defaults.n_utterances),
        n_accents=cfgmod.get_typed(resolved, "gen.n_accents", int, defaults.n_accents),
        alphabet=resolved.get("gen.alphabet", defaults.alphabet),
        samples_per_symbol=cfgmod.get_typed(resolved, "gen.samples_per_symbol", int, defaults.samples_per_symbol),
        separation=cfgmod.get_typed(resolved, "gen.separation", float, defaults.separation),
        noise_std=cfgmod.get_typed(resolved, "gen.noise_std", float, defaults.noise_std),
        seed=cfgmod.get_typed(resolved, "seed", int, 0),
        train_fraction=cfgmod.get_typed(resolved, "gen.train_fraction", float, defaults.train_fraction),
    )
    out_dir = _path(args, _require(resolved, "out"))
    utts = datamod.generate_corpus(spec, out_dir)
    _emit_resolved(out_dir, resolved)
    n_train = sum(1 for u in utts if u.split == "train")
    print(f"wrote {len(utts)} utterances ({n_train} train / {len(utts) - n_train} test) to {out_dir}")
    return 0


def _train_config(resolved, task: str) -> TrainConfig:
    base = TrainConfig(task=task) if task == "accent_id" else TrainConfig(
        task=task, warmup_steps=8000, max_updates=40000, head_only_updates=0)
    return TrainConfig(
        task=task,
        learning_rate=cfgmod.get_typed(resolved, "train.learning_rate", float, base.learning_rate),
        warmup_steps=cfgmod.get_typed(resolved, "train.warmup_steps", int, base.warmup_steps),
        max_updates=cfgmod.get_typed(resolved, "train.max_updates", int, base.max_updates),
        head_only_updates=cfgmod.get_typed(resolved, "train.head_only_updates", int,
                                           min(base.head_only_updates,
                                               cfgmod.get_typed(resolved, "train.max_updates", int, base.max_updates))),
        batch_size=cfgmod.get_typed(resolved, "train.batch_size", int, base.batch_size),
        seed=cfgmod.get_typed(resolved, "seed", int, 0),
        freeze_encoder=cfgmod.get_typed(resolved, "train.freeze_encoder", bool, True),
        sdc_weight=cfgmod.get_typed(resolved, "train.sdc_weight", float, 1.0),
        accent_mode=resolved.get("train.accent_mode", "none"),
    )


def _cmd_train_aid(args):
    resolved = _resolve(args, {
        "data": "data", "out": "out", "seed": "seed", "lr": "train.learning_rate",
        "warmup": "train.warmup_steps", "max_updates": "train.max_updates",
        "head_only_updates": "train.head_only_updates", "batch_size": "train.batch_size",
        "sdc_weight": "train.sdc_weight", "pooling": "model.accent_head_pooling",
    })
    out_dir = _path(args, _require(resolved, "out"))
    dataset = _load_split(args, resolved, split="train")
    train_cfg = _train_config(resolved, "accent_id")
    model_cfg = cfgmod.model_config_from_dict(resolved)
    model, rows = train_accent_id(train_cfg, dataset, model_cfg)
    os.makedirs(out_dir, exist_ok=True)
    save_model_checkpoint(os.path.join(out_dir, "model.ckpt"), "accent_id", model, train_cfg)
    write_train_log(os.path.join(out_dir, "train_log.csv"), rows)
    _emit_resolved(out_dir, resolved)
    print(f"trained accent identifier for {rows[-1][0]} steps; final loss {rows[-1][1]:.4f}")
    return 0


def _cmd_train_asr(args):
    resolved = _resolve(args, {
        "data": "data", "out": "out", "seed": "seed", "lr": "train.learning_rate",
        "warmup": "train.warmup_steps", "max_updates": "train.max_updates",
        "batch_size": "train.batch_size", "accent_mode": "train.accent_mode",
        "aid_ckpt": "aid_ckpt", "injection_sites": "model.injection_sites",
        "combine_mode": "model.combine_mode", "per_accent_heads": "model.per_accent_output_heads",
        "freeze_encoder": "train.freeze_encoder",
    })
    out_dir = _path(args, _require(resolved, "out"))
    dataset = _load_split(args, resolved, split="train")
    train_cfg = _train_config(resolved, "asr")
    model_cfg = cfgmod.model_config_from_dict(resolved).with_options(accent_mode=train_cfg.accent_mode)
    aid_model = None
    if train_cfg.accent_mode == "dynamic":
        if "aid_ckpt" not in resolved or not resolved["aid_ckpt"]:
            raise UsageError("--accent-mode dynamic needs --aid-ckpt pointing at a trained accent model")
        _, aid_model, _, _ = _load_ckpt(args, resolved["aid_ckpt"], expect="accent_id")
    vocab = _sized_vocab(model_cfg.vocab_size)
    model, rows = train_asr(train_cfg, dataset, model_cfg, vocab, aid_model=aid_model)
    os.makedirs(out_dir, exist_ok=True)
    save_model_checkpoint(os.path.join(out_dir, "model.ckpt"), "asr", model, train_cfg, aid_model=aid_model)
    write_train_log(os.path.join(out_dir, "train_log.csv"), rows)
    _emit_resolved(out_dir, resolved)
    print(f"trained recognizer for {rows[-1][0]} steps; final loss {rows[-1][1]:.4f}")
    return 0


def _sized_vocab(size: int) -> Vocabulary:
    letters = "abcdefghijklmnopqrstuvwxyz"
    if size < 3:
        raise ConfigError(f"vocab_size {size} too small for letters plus the word boundary")
    body = list(letters[: size - 2])
    return Vocabulary(["<b>"] + body + [" "])


def _load_ckpt(args, path, expect=None):
    task, model, aid, cfg_map = load_model_checkpoint(_path(args, path))
    if expect and task != expect:
        raise UsageError(f"checkpoint {path} holds a {task} model, expected {expect}")
    return task, model, aid, cfg_map


def _cmd_train_lm(args):
    resolved = _resolve(args, {
        "data": "data", "out": "out", "order": "lm.order", "smoothing": "lm.smoothing",
        "add_k": "lm.add_k", "discount": "lm.discount", "seed": "seed",
    })
    out_dir = _path(args, _require(resolved, "out"))
    dataset = _load_split(args, resolved, split="train")
    corpus = [u.transcript.lower().split() for u in dataset]
    lm = ngram.train_lm(
        corpus,
        order=cfgmod.get_typed(resolved, "lm.order", int, 4),
        smoothing=resolved.get("lm.smoothing", "katz"),
        add_k=cfgmod.get_typed(resolved, "lm.add_k", float, 1.0),
        discount=cfgmod.get_typed(resolved, "lm.discount", float, 0.5),
    )
    os.makedirs(out_dir, exist_ok=True)
    ngram.save_lm(lm, os.path.join(out_dir, "lm.txt"))
    _emit_resolved(out_dir, resolved)
    print(f"trained {lm.order}-gram LM over {len(lm.vocab)} words; "
          f"train perplexity {ngram.perplexity(lm, corpus):.2f}")
    return 0


def _cmd_decode(args):
    resolved = _resolve(args, {
        "ckpt": "ckpt", "data": "data", "split": "decode.split", "out": "out",
        "beam": "decode.beam", "wip": "decode.wip", "lm": "decode.lm",
        "lm_weight": "decode.lm_weight", "limit": "decode.limit", "seed": "seed",
    })
    resolved.setdefault("decode.greedy", str(args.greedy).lower())
    out_dir = _path(args, _require(resolved, "out"))
    task, model, aid_model, _ = _load_ckpt(args, _require(resolved, "ckpt"), expect="asr")
    split = resolved.get("decode.split", "test")
    utts = _load_split(args, resolved, split=split)
    limit = cfgmod.get_typed(resolved, "decode.limit", int, 0)
    if limit:
        utts = utts[:limit]
    vocab = _sized_vocab(model.cfg.vocab_size)
    lm = None
    if resolved.get("decode.lm"):
        lm = ngram.load_lm(_path(args, resolved["decode.lm"]))
    greedy = cfgmod.get_typed(resolved, "decode.greedy", bool, False)
    if greedy:
        decoder = None
    else:
        beam = cfgmod.get_typed(resolved, "decode.beam", int, 500)
        wip = cfgmod.get_typed(resolved, "decode.wip", float, -0.52)
        lm_weight = cfgmod.get_typed(resolved, "decode.lm_weight", float, 1.74)

        def decoder(lp):
            return beam_decode(lp, vocab, beam, lm=lm, lm_weight=lm_weight if lm else 0.0, wip=wip)

    hyps = transcribe_corpus(model, utts, vocab, aid_model=aid_model, decoder=decoder)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "hyps.tsv"), "w", encoding="utf-8") as fh:
        for u, hyp in zip(utts, hyps):
            fh.write(f"{u.id}\t{hyp}\n")
    _emit_resolved(out_dir, resolved)
    print(f"decoded {len(utts)} utterances from split {split!r} into {out_dir}/hyps.tsv")
    return 0


def _cmd_eval_wer(args):
    resolved = _resolve(args, {"refs": "refs", "hyps": "hyps", "out": "out", "seed": "seed"})
    utts = {u.id: u for u in datamod.load_manifest(_path(args, _require(resolved, "refs")), load_signals=False)}
    hyp_path = _path(args, _require(resolved, "hyps"))
    pairs = []
    with open(hyp_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{hyp_path}:{lineno}: expected `id<TAB>text`")
            uid, hyp = parts
            if uid not in utts:
                raise DataError(f"{hyp_path}:{lineno}: unknown utterance id {uid!r}")
            pairs.append((utts[uid], hyp))
    if not pairs:
        raise DataError(f"{hyp_path}: no hypotheses to score")
    overall = evalmod.wer_corpus([u.transcript for u, _ in pairs], [h for _, h in pairs])
    per_accent = {}
    accents = sorted({u.accent for u, _ in pairs if u.accent is not None})
    for a in accents:
        sub = [(u, h) for u, h in pairs if u.accent == a]
        per_accent[a] = evalmod.wer_corpus([u.transcript for u, _ in sub], [h for _, h in sub])
    text, csv = evalmod.format_wer_report(per_accent, overall)
    print(text)
    if resolved.get("out"):
        out_dir = _path(args, resolved["out"])
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "wer_report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        with open(os.path.join(out_dir, "wer_report.csv"), "w", encoding="utf-8") as fh:
            fh.write(csv + "\n")
        _emit_resolved(out_dir, resolved)
    return 0


def _cmd_eval_aid(args):
    resolved = _resolve(args, {"ckpt": "ckpt", "data": "data", "split": "eval.split",
                               "out": "out", "seed": "seed"})
    task, model, _, _ = _load_ckpt(args, _require(resolved, "ckpt"), expect="accent_id")
    split = resolved.get("eval.split", "test")
    utts = _load_split(args, resolved, split=split)
    labelled = [u for u in utts if u.accent is not None]
    if not labelled:
        raise DataError(f"no labelled utterances in split {split!r}")
    preds = classify_corpus(model, labelled)
    report = evalmod.accent_eval(preds, [u.accent for u in labelled], model.cfg.n_accents)
    text, csv = evalmod.format_accent_report(report)
    print(text)
    if resolved.get("out"):
        out_dir = _path(args, resolved["out"])
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "aid_report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        with open(os.path.join(out_dir, "aid_report.csv"), "w", encoding="utf-8") as fh:
            fh.write(csv + "\n")
        _emit_resolved(out_dir, resolved)
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train-aid": _cmd_train_aid,
    "train-asr": _cmd_train_asr,
    "train-lm": _cmd_train_lm,
    "decode": _cmd_decode,
    "eval-wer": _cmd_eval_wer,
    "eval-aid": _cmd_eval_aid,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError(f"--threads must be >= 1, got {args.threads}")
        return _HANDLERS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
