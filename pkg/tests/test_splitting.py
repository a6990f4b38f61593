import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset
from mamifuse.errors import DataError
from mamifuse.splitting import FoldPlan, fold_balance_report, stratified_kfold
from mamifuse.synthetic import REFERENCE_PREVALENCE, labels_only_dataset


def brute_force_positives(plan, ds, label):
    counts = [0] * plan.k
    for s in ds:
        if s.labels.as_tuple()[label]:
            counts[plan.assignment[s.id]] += 1
    return counts


def test_single_label_half_positive():
    rows = [(1, 0, 0, 0, 0)] * 50 + [(0, 0, 0, 0, 0)] * 50
    ds = make_dataset(rows)
    plan = stratified_kfold(ds, 2, seed=0)
    assert brute_force_positives(plan, ds, 0) == [25, 25]
    assert plan.sizes() == [50, 50]


def test_identical_labels_reduce_to_plain_kfold():
    ds = make_dataset([(1, 1, 0, 0, 0)] * 10)
    assert stratified_kfold(ds, 5, seed=3).sizes() == [2] * 5


def test_deterministic():
    ds = labels_only_dataset(300, seed=2)
    a, b = stratified_kfold(ds, 5, seed=7), stratified_kfold(ds, 5, seed=7)
    assert a.assignment == b.assignment
    assert a.to_tsv() == b.to_tsv()


def test_seed_changes_assignment():
    ds = labels_only_dataset(300, seed=2)
    assert stratified_kfold(ds, 5, seed=1).assignment != stratified_kfold(ds, 5, seed=2).assignment


def test_errors():
    ds = make_dataset([(0,) * 5] * 3)
    with pytest.raises(ValueError):
        stratified_kfold(ds, 4)
    with pytest.raises(ValueError):
        stratified_kfold(ds, 1)
    with pytest.raises(ValueError):
        FoldPlan(1, {"a": 0}, 0)


def test_unlabeled_rejected():
    from mamifuse.data import Dataset, MemeSample

    ds = Dataset((MemeSample("a", "", "a"), MemeSample("b", "", "b")), "test")
    with pytest.raises(ValueError):
        stratified_kfold(ds, 2)


def test_perfect_split_zero_deviation():
    ds = make_dataset([(1, 0, 0, 0, 0), (0, 0, 0, 0, 0)] * 10)
    report = fold_balance_report(stratified_kfold(ds, 2), ds)
    assert report.max_deviation == 0.0


def test_calibrated_balance():
    ds = labels_only_dataset(2000, seed=0)
    assert np.allclose(ds.label_matrix().mean(axis=0), REFERENCE_PREVALENCE, atol=1e-3)
    report = fold_balance_report(stratified_kfold(ds, 5, seed=0), ds)
    assert report.max_deviation <= 0.05
    assert "max_abs_deviation" in report.format()


def test_report_mismatch():
    ds = make_dataset([(0,) * 5] * 4)
    plan = FoldPlan(2, {"zz": 0, "yy": 1}, 0)
    with pytest.raises(ValueError, match="mismatch"):
        fold_balance_report(plan, ds)


def test_save_load_round_trip(tmp_path):
    ds = labels_only_dataset(50, seed=1)
    plan = stratified_kfold(ds, 5, seed=4)
    plan.save(tmp_path / "folds.tsv")
    again = FoldPlan.load(tmp_path / "folds.tsv", seed=4)
    assert again.assignment == plan.assignment
    assert again.digest() == plan.digest()
    assert (tmp_path / "folds.tsv").read_text().startswith("sample_id\tfold\n")


def test_load_bad_header(tmp_path):
    p = tmp_path / "f.tsv"
    p.write_text("id\tf\n")
    with pytest.raises(DataError):
        FoldPlan.load(p)


@st.composite
def hierarchical_labels(draw):
    n = draw(st.integers(150, 400))
    seed = draw(st.integers(0, 10_000))
    rng = np.random.default_rng(seed)
    mis = rng.random(n) < draw(st.floats(0.3, 0.7))
    subs = (rng.random((n, 4)) < draw(st.floats(0.25, 0.6))) & mis[:, None]
    return np.column_stack([mis, subs]).astype(int)


@settings(max_examples=40)
@given(hierarchical_labels(), st.integers(2, 6), st.integers(0, 1000))
def test_partition_and_balance_property(labels, k, seed):
    ds = make_dataset(labels)
    plan = stratified_kfold(ds, k, seed)
    # partition: disjoint, union is everything
    ids = [sid for f in range(k) for sid in plan.fold_ids(f)]
    assert sorted(ids) == sorted(ds.ids)
    report = fold_balance_report(plan, ds)
    bound = max(0.05, k / len(ds))
    enough = labels.sum(axis=0) >= 20
    dev = np.abs(report.rates - report.global_rates)[:, enough]
    assert (dev <= bound + 1e-12).all()


@given(st.integers(2, 40), st.integers(2, 8))
def test_uniform_labels_sizes_within_one(n, k):
    if k > n:
        k = n
    ds = make_dataset([(0,) * 5] * n)
    sizes = stratified_kfold(ds, k, 0).sizes()
    assert max(sizes) - min(sizes) <= 1
