"""Multi-label stratified k-fold assignment (iterative stratification)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mamifuse import kernels
from mamifuse.data import LABELS, Dataset
from mamifuse.errors import DataError


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict[str, int]
    seed: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        bad = [sid for sid, f in self.assignment.items() if not 0 <= f < self.k]
        if bad:
            raise ValueError(f"fold index out of range for {bad[0]!r}")

    def fold_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignment.values():
            counts[f] += 1
        return counts

    def to_tsv(self) -> str:
        lines = ["sample_id\tfold"]
        lines += [f"{sid}\t{f}" for sid, f in self.assignment.items()]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_tsv().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def load(cls, path, seed: int = -1) -> "FoldPlan":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].split("\t") != ["sample_id", "fold"]:
            raise DataError(f"{path}: expected header 'sample_id<TAB>fold'")
        assignment = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            sid, _, fold = line.partition("\t")
            try:
                assignment[sid] = int(fold)
            except ValueError:
                raise DataError(f"{path}: row {lineno}: bad fold {fold!r}") from None
        k = max(assignment.values()) + 1 if assignment else 2
        return cls(max(k, 2), assignment, seed)


def stratified_kfold(dataset: Dataset, k: int, seed: int = 0) -> FoldPlan:
    """Assign every sample of a labeled dataset to one of ``k`` folds.

    Labels are processed rarest first; each positive goes to the fold with the
    largest remaining demand for that label, ties broken by remaining fold
    capacity and then by a seeded uniform draw. Samples with no positive label
    fill the folds with the most spare capacity.

    A swap pass then exchanges rows between folds while that lowers the summed
    squared per-label rate deviation; fold sizes are unchanged by it.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(dataset):
        raise ValueError(f"k={k} exceeds dataset size {len(dataset)}")
    if not dataset.labeled:
        raise ValueError("stratified_kfold needs a fully labeled dataset")
    labels = dataset.label_matrix()
    tiebreak = np.random.default_rng(seed).random((len(dataset), k))
    folds = kernels.iterative_stratify(labels, k, tiebreak)
    folds = kernels.swap_refine(labels, folds, k, max(len(dataset), 1))
    return FoldPlan(k, {sid: int(f) for sid, f in zip(dataset.ids, folds)}, seed)


@dataclass
class BalanceReport:
    rates: np.ndarray  # (k, L)
    global_rates: np.ndarray  # (L,)
    sizes: list[int]

    @property
    def max_deviation(self) -> float:
        if self.rates.size == 0:
            return 0.0
        return float(np.max(np.abs(self.rates - self.global_rates)))

    def format(self) -> str:
        head = "fold\tsize\t" + "\t".join(LABELS)
        lines = [head]
        for f, (size, row) in enumerate(zip(self.sizes, self.rates)):
            lines.append(f"{f}\t{size}\t" + "\t".join(f"{r:.4f}" for r in row))
        lines.append(f"all\t{sum(self.sizes)}\t" + "\t".join(f"{r:.4f}" for r in self.global_rates))
        lines.append(f"max_abs_deviation\t{self.max_deviation:.4f}")
        return "\n".join(lines) + "\n"


def fold_balance_report(plan: FoldPlan, dataset: Dataset) -> BalanceReport:
    if set(plan.assignment) != set(dataset.ids):
        missing = sorted(set(dataset.ids) - set(plan.assignment))
        extra = sorted(set(plan.assignment) - set(dataset.ids))
        raise ValueError(f"plan/dataset mismatch: missing={missing[:3]} extra={extra[:3]}")
    labels = dataset.label_matrix().astype(np.float64)
    folds = np.array([plan.assignment[sid] for sid in dataset.ids])
    rates = np.zeros((plan.k, labels.shape[1]))
    sizes = []
    for f in range(plan.k):
        mask = folds == f
        sizes.append(int(mask.sum()))
        if mask.any():
            rates[f] = labels[mask].mean(axis=0)
    return BalanceReport(rates, labels.mean(axis=0), sizes)
