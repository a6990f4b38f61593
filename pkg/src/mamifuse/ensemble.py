"""Prediction files, weighted ensembling and label-hierarchy correction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from mamifuse import kernels
from mamifuse.data import LABELS
from mamifuse.errors import AlignmentError, DataError

DEFAULT_ALPHA = 0.1
DEFAULT_THRESHOLD = 0.5


@dataclass
class PredictionMatrix:
    """Probabilities row-aligned with sample ids."""

    ids: list[str]
    columns: tuple[str, ...]
    values: np.ndarray  # (N, C) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.ids), len(self.columns))
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate ids in prediction matrix")

    def __len__(self):
        return len(self.ids)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def sorted(self) -> "PredictionMatrix":
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        return PredictionMatrix([self.ids[i] for i in order], self.columns, self.values[order])

    def select(self, columns: Sequence[str]) -> "PredictionMatrix":
        idx = [self.columns.index(c) for c in columns]
        return PredictionMatrix(list(self.ids), tuple(columns), self.values[:, idx])

    def to_tsv(self, decimals: int = 6) -> str:
        lines = ["\t".join(("sample_id",) + tuple(self.columns))]
        for sid, row in zip(self.ids, self.values):
            lines.append("\t".join([sid] + [f"{v:.{decimals}f}" for v in row]))
        return "\n".join(lines) + "\n"

    def save(self, path, decimals: int = 6) -> None:
        Path(path).write_text(self.to_tsv(decimals), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PredictionMatrix":
        path = Path(path)
        if not path.exists():
            raise DataError(f"prediction file not found: {path}")
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise DataError(f"{path}: empty prediction file")
        header = lines[0].split("\t")
        if header[0] != "sample_id" or len(header) < 2:
            raise DataError(f"{path}: header must start with 'sample_id' and name at least one column")
        ids, rows = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(parts)} fields, expected {len(header)}")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise DataError(f"{path}: row {lineno}: non-numeric value") from None
            ids.append(parts[0])
        values = np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)
        return cls(ids, tuple(header[1:]), values)


def align(a: PredictionMatrix, b: PredictionMatrix) -> tuple[PredictionMatrix, PredictionMatrix]:
    """Sort both by id; raise AlignmentError naming the first id not shared."""
    a_s, b_s = a.sorted(), b.sorted()
    if a_s.ids != b_s.ids:
        only = sorted(set(a.ids).symmetric_difference(b.ids))
        first = only[0] if only else next(x for x, y in zip(a_s.ids, b_s.ids) if x != y)
        raise AlignmentError(f"prediction ids do not match; first offending id: {first!r}")
    return a_s, b_s


def ensemble(y1: PredictionMatrix, y2: PredictionMatrix, alpha: float = DEFAULT_ALPHA) -> PredictionMatrix:
    """alpha * y1 + (1 - alpha) * y2, cellwise; output sorted by id.

    ``y1`` is the single-flow prediction and ``y2`` the double-tower one.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if y1.columns != y2.columns:
        raise AlignmentError(f"column mismatch: {y1.columns} vs {y2.columns}")
    a, b = align(y1, y2)
    if alpha == 1.0:
        values = a.values.copy()
    elif alpha == 0.0:
        values = b.values.copy()
    else:
        values = alpha * a.values + (1.0 - alpha) * b.values
    return PredictionMatrix(a.ids, a.columns, np.clip(values, 0.0, 1.0))


def hierarchy_postprocess(subtask_b: PredictionMatrix, misogyny: PredictionMatrix,
                          threshold: float = DEFAULT_THRESHOLD, replace_misogynous: bool = True) -> PredictionMatrix:
    """Zero the four subcategory columns wherever the misogyny probability is below ``threshold``.

    With ``replace_misogynous`` the misogynous column is overwritten by the
    single-task misogyny prediction. Output rows are sorted by id.
    Only then is the binarized output guaranteed to satisfy the hierarchy
    rule; otherwise a kept misogynous value may sit below ``threshold``.
    """
    if tuple(subtask_b.columns) != LABELS:
        raise DataError(f"sub-task B matrix must have columns {LABELS}, got {subtask_b.columns}")
    if misogyny.values.shape[1] != 1:
        raise DataError("misogyny prediction must have exactly one column")
    b, m = align(subtask_b, misogyny)
    values = kernels.hierarchy_correct(b.values, m.values[:, 0], float(threshold), bool(replace_misogynous))
    return PredictionMatrix(b.ids, b.columns, values)


def binarize(probs, threshold: float = DEFAULT_THRESHOLD):
    """1 where value >= threshold. Accepts arrays or a PredictionMatrix."""
    if isinstance(probs, PredictionMatrix):
        return PredictionMatrix(list(probs.ids), probs.columns, binarize(probs.values, threshold))
    return (np.asarray(probs, dtype=np.float64) >= threshold).astype(np.int64)


def write_submission(pred: PredictionMatrix, path, threshold: float = DEFAULT_THRESHOLD) -> None:
    """``sample_id<TAB>0/1...`` with no header, as the task organisers expect."""
    bins = binarize(pred.values, threshold)
    with open(path, "w", encoding="utf-8") as fh:
        for sid, row in zip(pred.ids, bins):
            fh.write("\t".join([sid] + [str(int(v)) for v in row]) + "\n")


def load_submission(path, columns: Sequence[str]) -> PredictionMatrix:
    ids, rows = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != len(columns) + 1:
            raise DataError(f"{path}: line {lineno} has {len(parts)} fields")
        ids.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return PredictionMatrix(ids, tuple(columns), np.array(rows).reshape(len(ids), len(columns)))
