import re
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mamifuse.data import LABELS, Dataset, LabelVector, MemeSample

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MAIN_HEADER = "file_name\ttext\t" + "\t".join(LABELS) + "\n"

_CRITERION = re.compile(r"test_acceptance\.py::test_c(\d+)_(\w+)")
_outcomes: dict[str, tuple[str, str]] = {}


def write_main(path: Path, rows) -> Path:
    """rows: (file_name, text, labels-tuple-or-None)."""
    with open(path, "w", encoding="utf-8") as fh:
        labeled = any(r[2] is not None for r in rows) or not rows
        fh.write(MAIN_HEADER if labeled else "file_name\ttext\n")
        for name, text, labels in rows:
            cells = [name, text] + ([str(v) for v in labels] if labels is not None else [])
            fh.write("\t".join(cells) + "\n")
    return path


def make_dataset(label_rows, prefix="s", split_tag="train") -> Dataset:
    samples = [
        MemeSample(f"{prefix}{i:04d}", f"text {i}", f"{prefix}{i:04d}.png", LabelVector.from_sequence(row))
        for i, row in enumerate(np.asarray(label_rows, dtype=int).tolist())
    ]
    return Dataset(tuple(samples), split_tag)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    from mamifuse.synthetic import synthesize_corpus

    out = tmp_path_factory.mktemp("corpus")
    synthesize_corpus(out, n_train=32, n_test=10, n_external=8, seed=1, image_size=32)
    return out


@pytest.fixture(scope="session")
def small_train_config():
    """Fast settings for end-to-end training on tiny corpora."""
    from mamifuse.config import load_config

    return load_config(overrides=[
        "train.epochs=2", "train.batch_size=16", "train.early_stop_patience=1",
        "image.resize=32", "image.crop=28", "split.k=2",
    ])


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = m.group(1)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _outcomes[key] = (status, m.group(2).replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_outcomes, key=int):
        status, name = _outcomes[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {name}")
