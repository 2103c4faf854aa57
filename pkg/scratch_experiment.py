"""Standalone dry run of the acceptance-suite experiments (criteria 7-10)."""
import sys
import tempfile
import time

import numpy as np

from accentctc.data import SynthSpec, generate_corpus, split_dataset
from accentctc.model import ModelConfig
from accentctc.ctc import Vocabulary, beam_decode
from accentctc.ngram import train_lm
from accentctc.training import (TrainConfig, train_accent_id, train_asr,
                                classify_corpus, transcribe_corpus)
from accentctc.evaluate import wer_corpus, accent_eval
from accentctc.model import sdc_loss

t_start = time.time()
spec = SynthSpec(n_utterances=2500, n_accents=4, separation=1.0, noise_std=0.01,
                 seed=1234, train_fraction=0.8)
with tempfile.TemporaryDirectory() as d:
    utts = generate_corpus(spec, d)
train, test = split_dataset(utts, "train"), split_dataset(utts, "test")
print(f"corpus: {len(train)}/{len(test)} ({time.time()-t_start:.0f}s)", flush=True)
vocab = Vocabulary.default()
cfg = ModelConfig()
SEEDS = (0, 1, 2)

aid_models, aid_acc, aid_sdc = {}, {}, {}
for sdc_weight, tag in ((1.0, "with_sdc"), (0.0, "no_sdc")):
    for seed in SEEDS:
        tc = TrainConfig(task="accent_id", learning_rate=3e-3, warmup_steps=50,
                         max_updates=400, head_only_updates=150, batch_size=8,
                         seed=seed, sdc_weight=sdc_weight)
        t0 = time.time()
        model, rows = train_accent_id(tc, train, cfg)
        preds = classify_corpus(model, test)
        acc = accent_eval(preds, [u.accent for u in test], 4).overall
        stds = [sdc_loss(model.predict(u.signal)).item() for u in test]
        aid_models[(tag, seed)] = model
        aid_acc[(tag, seed)] = acc
        aid_sdc[(tag, seed)] = float(np.mean(stds))
        print(f"AID {tag} seed {seed}: acc {acc:.1f}%  mean-std {np.mean(stds):.4f} "
              f"({time.time()-t0:.0f}s)", flush=True)

asr_wer = {}
for mode in ("none", "true_label", "dynamic"):
    for seed in SEEDS:
        tc = TrainConfig(task="asr", accent_mode=mode, learning_rate=3e-3,
                         warmup_steps=100, max_updates=1100, head_only_updates=0,
                         batch_size=8, seed=seed)
        aid = aid_models[("with_sdc", seed)] if mode == "dynamic" else None
        t0 = time.time()
        model, rows = train_asr(tc, train, cfg, vocab, aid_model=aid)
        hyps = transcribe_corpus(model, test, vocab, aid_model=aid)
        wer = wer_corpus([u.transcript for u in test], hyps).wer
        asr_wer[(mode, seed)] = wer
        if mode == "none" and seed == 0:
            model_for_lm = model
        print(f"ASR {mode} seed {seed}: WER {wer:.2f}% ({time.time()-t0:.0f}s)", flush=True)

m = {mode: np.mean([asr_wer[(mode, s)] for s in SEEDS]) for mode in ("none", "true_label", "dynamic")}
print("\nmean WER:", {k: round(v, 2) for k, v in m.items()})
print("per-seed strict AR1<AR0:", all(asr_wer[("true_label", s)] < asr_wer[("none", s)] for s in SEEDS))
red = [100*(asr_wer[("none", s)]-asr_wer[("true_label", s)])/asr_wer[("none", s)] for s in SEEDS]
print("per-seed reductions:", [round(r,1) for r in red], "mean:", round(np.mean(red),1))
print("AR5 <= AR0:", m["dynamic"] <= m["none"], "| AR5 <= 1.03*AR1:", m["dynamic"] <= 1.03*m["true_label"])
acc2 = np.mean([aid_acc[("with_sdc", s)] for s in SEEDS]); acc3 = np.mean([aid_acc[("no_sdc", s)] for s in SEEDS])
std2 = np.mean([aid_sdc[("with_sdc", s)] for s in SEEDS]); std3 = np.mean([aid_sdc[("no_sdc", s)] for s in SEEDS])
print(f"AI2 acc {acc2:.1f} std {std2:.4f} | AI3 acc {acc3:.1f} std {std3:.4f}")

# LM fusion (criterion 10)
lm = train_lm([u.transcript.lower().split() for u in train], order=4)
sub = test[:150]
t0 = time.time()
def wer_with(decoder):
    hyps = transcribe_corpus(model_for_lm, sub, vocab, decoder=decoder)
    return wer_corpus([u.transcript for u in sub], hyps).wer
no_lm = wer_with(lambda lp: beam_decode(lp, vocab, 8, wip=-0.52))
print(f"beam no-LM: {no_lm:.2f}% ({time.time()-t0:.0f}s for 150 utts)", flush=True)
for w in (0.3, 0.5, 1.0, 1.74):
    t0=time.time()
    wl = wer_with(lambda lp: beam_decode(lp, vocab, 8, lm=lm, lm_weight=w, wip=-0.52))
    print(f"beam LM w={w}: {wl:.2f}% ({time.time()-t0:.0f}s)", flush=True)

# wip monotonicity
sub2 = test[:40]
for wip in (0.0, -0.52, -2.0):
    hyps = transcribe_corpus(model_for_lm, sub2, vocab,
                             decoder=lambda lp: beam_decode(lp, vocab, 8, lm=lm, lm_weight=1.0, wip=wip))
    print(f"wip {wip}: total words {sum(len(h.split()) for h in hyps)}")
print(f"TOTAL {time.time()-t_start:.0f}s")
