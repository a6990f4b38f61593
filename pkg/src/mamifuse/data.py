"""Corpus loading, validation and merging.

Main corpus TSV::

    file_name  text  misogynous  shaming  stereotype  objectification  violence

External (negative-only) TSV::

    file_name  text  offense_level
"""

from __future__ import annotations

import csv
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mamifuse.errors import DataError, DuplicateIdError, ParseError, SchemaError

log = logging.getLogger(__name__)

LABELS = ("misogynous", "shaming", "stereotype", "objectification", "violence")
SUBCATEGORIES = LABELS[1:]

MAIN_COLUMNS = ("file_name", "text")
EXTERNAL_COLUMNS = ("file_name", "text", "offense_level")

DEFAULT_NEGATIVE_LEVELS = (
    "not_offensive",
    "not offensive",
    "slight",
    "slight_offensive",
    "slightly_offensive",
    "slight offensive",
)
# offense levels that are recognised but excluded from the negatives
KNOWN_DROPPED_LEVELS = (
    "very_offensive",
    "very offensive",
    "hateful_offensive",
    "hateful offensive",
    "hateful",
    "offensive",
)


@dataclass(frozen=True)
class LabelVector:
    misogynous: int = 0
    shaming: int = 0
    stereotype: int = 0
    objectification: int = 0
    violence: int = 0

    def __post_init__(self):
        for name in LABELS:
            value = getattr(self, name)
            if value not in (0, 1) or isinstance(value, float):
                raise ValueError(f"label {name!r} must be 0 or 1, got {value!r}")

    @classmethod
    def from_sequence(cls, values: Sequence[int]) -> "LabelVector":
        if len(values) != len(LABELS):
            raise ValueError(f"expected {len(LABELS)} labels, got {len(values)}")
        return cls(*(int(v) for v in values))

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in LABELS)

    def is_valid(self) -> bool:
        return validate_hierarchy(self)


NEGATIVE = LabelVector()


@dataclass(frozen=True)
class MemeSample:
    id: str
    text: str
    image_ref: str
    labels: LabelVector | None = None
    source: str = "main"

    def __post_init__(self):
        if self.source not in ("main", "external"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.source == "external" and self.labels != NEGATIVE:
            raise ValueError(f"external sample {self.id!r} must carry all-zero labels")


@dataclass(frozen=True)
class Dataset:
    samples: tuple[MemeSample, ...]
    split_tag: str = "train"
    rejects: tuple[str, ...] = field(default=(), compare=False)
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.split_tag not in ("train", "external_train", "test"):
            raise ValueError(f"unknown split tag {self.split_tag!r}")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DuplicateIdError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def labeled(self) -> bool:
        return all(s.labels is not None for s in self.samples)

    def label_matrix(self) -> np.ndarray:
        """(N, 5) uint8 label matrix; raises if any sample is unlabeled."""
        if not self.labeled:
            missing = next(s.id for s in self.samples if s.labels is None)
            raise DataError(f"sample {missing!r} has no labels")
        if not self.samples:
            return np.zeros((0, len(LABELS)), dtype=np.uint8)
        return np.array([s.labels.as_tuple() for s in self.samples], dtype=np.uint8)

    def subset(self, indices: Iterable[int], split_tag: str | None = None) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), split_tag or self.split_tag)


def validate_hierarchy(labels: LabelVector) -> bool:
    """True iff any positive subcategory implies a positive misogynous label."""
    if any(getattr(labels, name) for name in SUBCATEGORIES):
        return labels.misogynous == 1
    return True


def label_prevalence(dataset: Dataset) -> dict[str, float]:
    mat = dataset.label_matrix()
    if len(mat) == 0:
        return {name: 0.0 for name in LABELS}
    rates = mat.mean(axis=0)
    return {name: float(r) for name, r in zip(LABELS, rates)}


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def _read_tsv(path: Path, required: Sequence[str]) -> tuple[list[str], list[list[str]], dict[str, int]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        rows = list(reader)
    index = {}
    for pos, name in enumerate(header):
        key = name.strip().lower()
        if key not in index:
            index[key] = pos
    for col in required:
        if col not in index:
            raise SchemaError(f"{path}: missing column {col!r}")
    extra = [h for h in header if h.strip().lower() not in required]
    if extra:
        log.warning("%s: ignoring extra columns %s", path, extra)
    return header, rows, index


def _unescape(field_value: str) -> str:
    out = []
    it = iter(field_value)
    for ch in it:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(it, "")
        out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(nxt, "\\" + nxt))
    return "".join(out)


def _escape(field_value: str) -> str:
    return (
        field_value.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _resolve_image(ref: str, base: Path) -> str:
    p = Path(ref)
    if not p.is_absolute():
        candidate = base / "images" / ref
        p = candidate if candidate.exists() else base / ref
    return str(p)


def load_main_corpus(path, labeled: bool = True, image_root=None) -> Dataset:
    """Load the main corpus TSV.

    Label cells must be exactly ``0`` or ``1``; every labeled row must obey the
    label hierarchy. Images are not opened here.
    """
    path = Path(path)
    required = MAIN_COLUMNS + (LABELS if labeled else ())
    _, rows, index = _read_tsv(path, required)
    base = Path(image_root) if image_root is not None else path.parent
    samples = []
    seen: dict[str, int] = {}
    violations = []
    for lineno, row in enumerate(rows, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) <= max(index[c] for c in required):
            raise ParseError(f"{path}: row {lineno} has {len(row)} fields")
        name = row[index["file_name"]]
        if name in seen:
            raise DuplicateIdError(f"{path}: duplicate file_name {name!r} at rows {seen[name]} and {lineno}")
        seen[name] = lineno
        labels = None
        if labeled:
            values = []
            for col in LABELS:
                cell = row[index[col]].strip()
                if cell not in ("0", "1"):
                    raise ParseError(f"{path}: row {lineno}: non-binary {col} value {cell!r}")
                values.append(int(cell))
            labels = LabelVector.from_sequence(values)
            if not validate_hierarchy(labels):
                violations.append(lineno)
        samples.append(
            MemeSample(
                id=name,
                text=_nfc(_unescape(row[index["text"]])),
                image_ref=_resolve_image(name, base),
                labels=labels,
                source="main",
            )
        )
    if violations:
        raise ParseError(f"{path}: label hierarchy violated at rows {violations}")
    return Dataset(tuple(samples), "train" if labeled else "test")


def load_external_negatives(
    path,
    negative_levels: Sequence[str] = DEFAULT_NEGATIVE_LEVELS,
    image_root=None,
    rejects_path=None,
) -> Dataset:
    """Keep only low-offense rows of an external corpus, as all-negative samples.

    Rows with a recognised but excluded level are dropped silently (counted);
    rows with an unknown level are recorded in the rejects report.
    """
    path = Path(path)
    _, rows, index = _read_tsv(path, EXTERNAL_COLUMNS)
    keep = {lvl.strip().lower() for lvl in negative_levels}
    known_drop = {lvl for lvl in KNOWN_DROPPED_LEVELS if lvl not in keep}
    base = Path(image_root) if image_root is not None else path.parent
    samples = []
    rejects = []
    dropped = 0
    for lineno, row in enumerate(rows, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) <= max(index.values()):
            rejects.append(f"row {lineno}: malformed row with {len(row)} fields")
            continue
        level = row[index["offense_level"]].strip().lower()
        if level in keep:
            name = row[index["file_name"]]
            samples.append(
                MemeSample(
                    id=name,
                    text=_nfc(_unescape(row[index["text"]])),
                    image_ref=_resolve_image(name, base),
                    labels=NEGATIVE,
                    source="external",
                )
            )
        elif level in known_drop:
            dropped += 1
        else:
            rejects.append(f"row {lineno}: unknown offense_level {level!r}")
    if rejects_path is not None:
        Path(rejects_path).write_text("".join(r + "\n" for r in rejects), encoding="utf-8")
    if not samples:
        log.warning("%s: no rows kept (%d dropped, %d rejected)", path, dropped, len(rejects))
    log.info("%s: kept %d, dropped %d, rejected %d", path, len(samples), dropped, len(rejects))
    return Dataset(tuple(samples), "external_train", rejects=tuple(rejects), dropped=dropped)


def prefixed_id(sample: MemeSample) -> str:
    return f"{sample.source}:{sample.id}"


def merge_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Concatenate ``a`` then ``b``; ids are compared after prefixing with source."""
    seen = {}
    for s in a.samples + b.samples:
        key = prefixed_id(s)
        if key in seen:
            raise DuplicateIdError(f"id collision after prefixing: {key!r}")
        seen[key] = True
    merged = a.samples + b.samples
    ids = [s.id for s in merged]
    if len(set(ids)) != len(ids):
        # same raw id in different sources: keep them apart by prefixing
        merged = tuple(
            MemeSample(prefixed_id(s), s.text, s.image_ref, s.labels, s.source) for s in merged
        )
    return Dataset(tuple(merged), a.split_tag)


def save_main_corpus(dataset: Dataset, path, labeled: bool | None = None) -> None:
    """Write a dataset in the main-corpus TSV layout (image refs by file name)."""
    if labeled is None:
        labeled = dataset.labeled
    header = list(MAIN_COLUMNS) + (list(LABELS) if labeled else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for s in dataset.samples:
            fields = [s.id, _escape(s.text)]
            if labeled:
                fields += [str(v) for v in s.labels.as_tuple()]
            fh.write("\t".join(fields) + "\n")


def save_external(rows: Iterable[tuple[str, str, str]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(EXTERNAL_COLUMNS) + "\n")
        for name, text, level in rows:
            fh.write(f"{name}\t{_escape(text)}\t{level}\n")
