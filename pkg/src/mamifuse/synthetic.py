"""Procedural meme corpora for tests and desk-scale runs.

Label prevalences follow the published training-set statistics; text and
images carry label cues with configurable strength so that small models can
learn something.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from mamifuse.data import LABELS, NEGATIVE, Dataset, LabelVector, MemeSample, save_external, save_main_corpus

# positives per 10 000 training memes
REFERENCE_COUNTS = {
    "misogynous": 5000,
    "shaming": 1274,
    "stereotype": 2810,
    "objectification": 2202,
    "violence": 953,
}
REFERENCE_PREVALENCE = tuple(REFERENCE_COUNTS[name] / 10000 for name in LABELS)

NEUTRAL_WORDS = (
    "when you the monday coffee work friend cat dog weekend morning phone "
    "school teacher game pizza meeting boss bus rain summer movie music"
).split()
CUE_WORDS = {
    "misogynous": ["woman", "girls", "she"],
    "shaming": ["fat", "ugly"],
    "stereotype": ["kitchen", "sandwich"],
    "objectification": ["body", "hot"],
    "violence": ["slap", "hit"],
}
CUE_COLORS = {
    "misogynous": (220, 40, 40),
    "shaming": (40, 200, 40),
    "stereotype": (40, 40, 220),
    "objectification": (220, 200, 40),
    "violence": (200, 40, 200),
}
OFFENSE_LEVELS = ("not_offensive", "slight", "very_offensive", "hateful_offensive")


def calibrated_labels(n: int, rng: np.random.Generator, prevalence=REFERENCE_PREVALENCE) -> np.ndarray:
    """(n, 5) label matrix with exact rounded positive counts and the hierarchy rule."""
    labels = np.zeros((n, len(LABELS)), dtype=np.uint8)
    n_mis = int(round(prevalence[0] * n))
    mis_idx = rng.permutation(n)[:n_mis]
    labels[mis_idx, 0] = 1
    for j in range(1, len(LABELS)):
        count = min(int(round(prevalence[j] * n)), n_mis)
        labels[rng.permutation(mis_idx)[:count], j] = 1
    return labels


def _text_for(labels, idx: int, rng: np.random.Generator, cue_rate: float) -> str:
    words = list(rng.choice(NEUTRAL_WORDS, size=int(rng.integers(3, 7))))
    for name, flag in zip(LABELS, labels):
        if flag and rng.random() < cue_rate:
            words.append(str(rng.choice(CUE_WORDS[name])))
    rng.shuffle(words)
    words.append(f"m{idx}")
    return " ".join(words)


def _image_for(labels, rng: np.random.Generator, size: int, cue_rate: float) -> np.ndarray:
    base = rng.integers(60, 196, size=3)
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = base
    img = np.clip(img.astype(np.int16) + rng.integers(-20, 21, size=img.shape), 0, 255).astype(np.uint8)
    cell = size // 4
    for j, (name, flag) in enumerate(zip(LABELS, labels)):
        if flag and rng.random() < cue_rate:
            r, c = divmod(j, 3)
            y, x = r * 2 * cell + cell // 2, c * cell + cell // 2
            img[y : y + cell, x : x + cell] = CUE_COLORS[name]
    return img


def synthesize_corpus(
    out_dir,
    n_train: int = 200,
    n_test: int = 50,
    n_external: int = 100,
    seed: int = 0,
    image_size: int = 64,
    cue_rate: float = 0.8,
) -> dict[str, Path]:
    """Write train.tsv, test.tsv, test_labels.tsv, external.tsv and images/."""
    out = Path(out_dir)
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    def build(prefix: str, n: int, split_tag: str) -> Dataset:
        labels = calibrated_labels(n, rng)
        samples = []
        for i in range(n):
            name = f"{prefix}_{i:05d}.png"
            Image.fromarray(_image_for(labels[i], rng, image_size, cue_rate)).save(images / name)
            samples.append(
                MemeSample(
                    id=name,
                    text=_text_for(labels[i], i, rng, cue_rate),
                    image_ref=str(images / name),
                    labels=LabelVector.from_sequence(labels[i]),
                )
            )
        return Dataset(tuple(samples), split_tag)

    train = build("train", n_train, "train")
    test = build("test", n_test, "test")
    save_main_corpus(train, out / "train.tsv")
    save_main_corpus(test, out / "test.tsv", labeled=False)
    save_main_corpus(test, out / "test_labels.tsv", labeled=True)

    ext_rows = []
    for i in range(n_external):
        name = f"ext_{i:05d}.png"
        Image.fromarray(_image_for(NEGATIVE.as_tuple(), rng, image_size, cue_rate)).save(images / name)
        level = OFFENSE_LEVELS[int(rng.integers(len(OFFENSE_LEVELS)))]
        ext_rows.append((name, _text_for(NEGATIVE.as_tuple(), i, rng, cue_rate), level))
    save_external(ext_rows, out / "external.tsv")
    return {
        "train": out / "train.tsv",
        "test": out / "test.tsv",
        "test_labels": out / "test_labels.tsv",
        "external": out / "external.tsv",
        "images": images,
    }


def labels_only_dataset(n: int, seed: int = 0, prevalence=REFERENCE_PREVALENCE) -> Dataset:
    """In-memory labeled dataset without images (for splitting and metric checks)."""
    labels = calibrated_labels(n, np.random.default_rng(seed), prevalence)
    samples = tuple(
        MemeSample(f"s{i:06d}", "", f"s{i:06d}.png", LabelVector.from_sequence(row))
        for i, row in enumerate(labels)
    )
    return Dataset(samples, "train")
