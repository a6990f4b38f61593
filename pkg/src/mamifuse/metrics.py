"""F1 metrics for both sub-tasks and the results table.

Zero-division convention: an F1 whose precision + recall is 0 is reported as 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mamifuse import kernels
from mamifuse.data import LABELS

ZERO_DIVISION_NOTE = "F1 is defined as 0 when precision + recall = 0."


def _as_matrix(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("metric inputs must be binary")
    return arr.astype(np.uint8)


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if tp == 0 else 2.0 * tp / denom


def f1_binary(pred, gold, positive_class: int = 1) -> float:
    p = _as_matrix(pred)
    g = _as_matrix(gold)
    if p.shape != g.shape or p.shape[1] != 1:
        raise ValueError(f"length mismatch: pred {p.shape[0]} vs gold {g.shape[0]}")
    if positive_class == 0:
        p, g = 1 - p, 1 - g
    tp, fp, fn, _ = kernels.confusion_counts(p, g)[0]
    return _f1_from_counts(int(tp), int(fp), int(fn))


def macro_f1_binary_task(pred, gold) -> float:
    """Sub-task A score: mean of the F1 of class 1 and class 0."""
    return (f1_binary(pred, gold, 1) + f1_binary(pred, gold, 0)) / 2.0


@dataclass
class MultilabelF1:
    macro: float
    weighted: float
    per_label: dict[str, float]
    support: dict[str, int]

    def score(self, mode: str) -> float:
        if mode not in ("macro", "weighted"):
            raise ValueError(f"unknown F1 mode {mode!r}")
        return self.macro if mode == "macro" else self.weighted


def multilabel_f1(pred, gold, labels: Sequence[str] = LABELS) -> MultilabelF1:
    p = _as_matrix(pred)
    g = _as_matrix(gold)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gold {g.shape}")
    if p.shape[1] != len(labels):
        raise ValueError(f"expected {len(labels)} label columns, got {p.shape[1]}")
    counts = kernels.confusion_counts(p, g)
    per = [_f1_from_counts(int(tp), int(fp), int(fn)) for tp, fp, fn, _ in counts]
    support = [int(tp + fn) for tp, _, fn, _ in counts]
    total = sum(support)
    macro = sum(per) / len(per)
    weighted = sum(f * s for f, s in zip(per, support)) / total if total else 0.0
    return MultilabelF1(macro, weighted, dict(zip(labels, per)), dict(zip(labels, support)))


def task_macro_f1(pred, gold) -> float:
    """Validation score for a training stage: Sub-task A metric for one column, macro over labels otherwise."""
    p = _as_matrix(pred)
    if p.shape[1] == 1:
        return macro_f1_binary_task(p[:, 0], np.asarray(gold).reshape(-1))
    return multilabel_f1(p, gold, labels=[str(i) for i in range(p.shape[1])]).macro


@dataclass
class ResultsTable:
    rows: list[tuple[str, float | None, float | None]]
    text: str
    tsv: str


def _fmt(score: float | None) -> str:
    return "-" if score is None else f"{score:.3f}"


def results_table(entries: Sequence[tuple[str, float | None, float | None]], footnote: str | None = None) -> ResultsTable:
    header = ("Method", "Sub-task A", "Sub-task B")
    rows = [(name, a, b) for name, a, b in entries]
    cells = [header] + [(name, _fmt(a), _fmt(b)) for name, a, b in rows]
    w0 = max(len(c[0]) for c in cells)
    w1 = max(len(c[1]) for c in cells)
    w2 = max(len(c[2]) for c in cells)
    lines = []
    for i, (name, a, b) in enumerate(cells):
        lines.append(f"{name:<{w0}}  {a:>{w1}}  {b:>{w2}}")
        if i == 0:
            lines.append("-" * (w0 + w1 + w2 + 4))
    if footnote:
        lines.append("")
        lines.append(footnote)
    tsv = "\n".join("\t".join(c) for c in cells) + "\n"
    return ResultsTable(rows, "\n".join(lines) + "\n", tsv)
