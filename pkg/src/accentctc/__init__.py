"""Accent identification and accent-conditioned CTC speech recognition,
self-contained on a synthetic corpus: a small reverse-mode autodiff engine,
conv + transformer acoustic models, CTC with prefix beam search and n-gram
shallow fusion, and reproducible training/evaluation tooling."""

from .autodiff import Tensor, grad_check
from .ctc import Vocabulary, beam_decode, collapse, ctc_brute_force, ctc_loss, greedy_decode
from .data import SynthSpec, Utterance, generate_corpus, load_manifest
from .evaluate import accent_eval, edit_distance, wer_corpus
from .model import (
    AccentClassifier,
    AccentLabel,
    AccentPrediction,
    ModelConfig,
    SpeechRecognizer,
    accent_ce_loss,
    accent_final_loss,
    frame_gates,
    inject_dynamic,
    inject_true,
    sdc_loss,
)
from .ngram import NGramLM, load_lm, perplexity, save_lm, score, train_lm
from .training import Adam, TrainConfig, lr_schedule, train_accent_id, train_asr

__version__ = "0.1.0"
