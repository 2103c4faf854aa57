"""Scoring: word error rate via edit distance, accent identification
accuracy with confusion matrices, and table/CSV report rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return 100.0 * self.errors / self.ref_words


@dataclass
class AccentReport:
    per_class: list[float]      # accuracy percent per class
    overall: float              # support-weighted percent
    confusion: np.ndarray       # [C x C], rows = true class


def edit_distance(ref, hyp) -> tuple[int, int, int]:
    """Minimal (substitutions, deletions, insertions) aligning hyp to ref.

    Unit costs; on cost ties the backtrace prefers substitution, then
    deletion, then insertion, so counts are deterministic.
    """
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise DataError("edit_distance needs a non-empty reference")
    n, m = len(ref), len(hyp)
    # dp[i][j] = (cost, S, D, I) for ref[:i] vs hyp[:j]
    dp = [[None] * (m + 1) for _ in range(n + 1)]
    dp[0][0] = (0, 0, 0, 0)
    for i in range(1, n + 1):
        c = dp[i - 1][0]
        dp[i][0] = (c[0] + 1, c[1], c[2] + 1, c[3])
    for j in range(1, m + 1):
        c = dp[0][j - 1]
        dp[0][j] = (c[0] + 1, c[1], c[2], c[3] + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = dp[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1]:
                cand = [(diag[0], diag[1], diag[2], diag[3])]
            else:
                cand = [(diag[0] + 1, diag[1] + 1, diag[2], diag[3])]
            up = dp[i - 1][j]
            cand.append((up[0] + 1, up[1], up[2] + 1, up[3]))
            left = dp[i][j - 1]
            cand.append((left[0] + 1, left[1], left[2], left[3] + 1))
            dp[i][j] = min(cand, key=lambda c: c[0])  # listed in preference order
    _, s, d, ins = dp[n][m]
    return s, d, ins


def wer_utterance(ref: str, hyp: str) -> WerBreakdown:
    ref_words, hyp_words = ref.split(), hyp.split()
    s, d, i = edit_distance(ref_words, hyp_words)
    return WerBreakdown(s, d, i, len(ref_words))


def wer_corpus(refs, hyps) -> WerBreakdown:
    """Pool error counts over the corpus, then divide by total reference
    words (not the mean of per-utterance rates)."""
    if len(refs) != len(hyps):
        raise DataError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    total = WerBreakdown(0, 0, 0, 0)
    for ref, hyp in zip(refs, hyps):
        ref_words = ref.lower().split()
        hyp_words = hyp.lower().split()
        if not ref_words:
            raise DataError("empty reference in corpus scoring")
        s, d, i = edit_distance(ref_words, hyp_words)
        total.substitutions += s
        total.deletions += d
        total.insertions += i
        total.ref_words += len(ref_words)
    return total


def relative_reduction(baseline: float, system: float) -> float:
    """Percent relative improvement of `system` over `baseline`."""
    return 100.0 * (baseline - system) / baseline


def accent_eval(predictions, labels, n_classes: int) -> AccentReport:
    if len(predictions) != len(labels):
        raise DataError(f"got {len(predictions)} predictions but {len(labels)} labels")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for pred, label in zip(predictions, labels):
        confusion[label, pred] += 1
    per_class = []
    for c in range(n_classes):
        support = confusion[c].sum()
        per_class.append(100.0 * confusion[c, c] / support if support else 0.0)
    overall = 100.0 * np.trace(confusion) / max(confusion.sum(), 1)
    return AccentReport(per_class=per_class, overall=float(overall), confusion=confusion)


# -- report rendering ----------------------------------------------------------


def _table(headers, rows) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(headers)]
    def fmt(row):
        return "  ".join(str(v).rjust(w) for v, w in zip(row, widths))
    return "\n".join([fmt(headers), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows])


def format_wer_report(per_accent: dict, overall: WerBreakdown) -> tuple[str, str]:
    """Aligned text table plus CSV with one column per accent and an All
    column, mirroring the per-accent scoring layout."""
    keys = sorted(per_accent)
    headers = ["metric"] + [str(k) for k in keys] + ["All"]
    wer_row = ["WER%"] + [f"{per_accent[k].wer:.2f}" for k in keys] + [f"{overall.wer:.2f}"]
    err_row = ["S/D/I"] + [
        f"{per_accent[k].substitutions}/{per_accent[k].deletions}/{per_accent[k].insertions}"
        for k in keys
    ] + [f"{overall.substitutions}/{overall.deletions}/{overall.insertions}"]
    n_row = ["ref words"] + [str(per_accent[k].ref_words) for k in keys] + [str(overall.ref_words)]
    text = _table(headers, [wer_row, err_row, n_row])
    csv = "\n".join(",".join(str(c) for c in row) for row in [headers, wer_row, err_row, n_row])
    return text, csv


def format_accent_report(report: AccentReport) -> tuple[str, str]:
    headers = ["metric"] + [str(c) for c in range(len(report.per_class))] + ["All"]
    acc_row = ["acc%"] + [f"{a:.1f}" for a in report.per_class] + [f"{report.overall:.1f}"]
    rows = [acc_row]
    for c in range(len(report.per_class)):
        rows.append([f"true {c}"] + [str(v) for v in report.confusion[c]] + [str(report.confusion[c].sum())])
    text = _table(headers, rows)
    csv = "\n".join(",".join(str(c) for c in row) for row in [headers] + rows)
    return text, csv
