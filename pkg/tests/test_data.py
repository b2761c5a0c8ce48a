import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drtdiff.data import (
    Dataset,
    PartitionSpec,
    batch_indices,
    batches,
    make_gaussian_blobs,
    partition,
    split_dataset,
)
from drtdiff.errors import ContractViolation, PartitionInfeasible
from drtdiff.nn import Architecture, accuracy, init_params, loss_and_grad


def test_blob_count_and_determinism():
    a = make_gaussian_blobs(3, 4, 10, 0.5, seed=1)
    b = make_gaussian_blobs(3, 4, 10, 0.5, seed=1)
    assert len(a) == 30
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(2, 6), st.floats(0.0, 3.0), st.integers(0, 1000))
def test_blob_means_are_separated(c, d, spread, seed):
    ds = make_gaussian_blobs(c, d, 200, spread, seed)
    means = np.stack([ds.inputs[ds.labels == k].mean(axis=0) for k in range(c)])
    gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)[np.triu_indices(c, 1)]
    # empirical means wobble by about spread * sqrt(d / 200)
    assert gaps.min() >= 4 * spread - 6 * spread * np.sqrt(d / 200) - 1e-9


def test_blob_invalid_geometry():
    with pytest.raises(ContractViolation):
        make_gaussian_blobs(1, 2, 5, 0.1, 0)
    with pytest.raises(ContractViolation):
        make_gaussian_blobs(3, 1, 5, 0.1, 0)


def test_separable_blobs_learned_by_one_layer():
    ds = make_gaussian_blobs(2, 2, 50, 1e-3, seed=0)
    arch = Architecture((2, 2), activation="identity", bias=True)
    params = init_params(arch, 0)
    batch = ds.as_batch()
    for _ in range(200):
        _, g = loss_and_grad(arch, params, batch)
        params = [w - 0.5 * gw for w, gw in zip(params, g)]
    assert accuracy(arch, params, ds.inputs, ds.labels) == 1.0


def test_dataset_requires_every_class():
    with pytest.raises(ContractViolation):
        Dataset(np.zeros((2, 2)), np.array([0, 0]), 2)
    with pytest.raises(ContractViolation):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)


def test_csv_roundtrip_exact(tmp_path):
    ds = make_gaussian_blobs(3, 2, 4, 0.7, seed=2)
    path = tmp_path / "d.csv"
    ds.to_csv(path)
    assert path.read_text().splitlines()[0] == "label,x1,x2"
    back = Dataset.from_csv(path)
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.num_classes == 3


def test_split_is_stratified_and_disjoint():
    ds = make_gaussian_blobs(4, 3, 20, 0.5, seed=0)
    train, test = split_dataset(ds, 5, seed=1)
    assert len(train) == 60 and len(test) == 20
    assert np.bincount(test.labels).tolist() == [5] * 4
    rows = {tuple(r) for r in train.inputs} & {tuple(r) for r in test.inputs}
    assert not rows


def test_split_infeasible():
    with pytest.raises(PartitionInfeasible):
        split_dataset(make_gaussian_blobs(2, 2, 3, 0.5, 0), 3, 0)


def test_iid_two_agents_halves():
    ds = make_gaussian_blobs(2, 2, 50, 0.5, seed=0)
    parts = partition(ds, PartitionSpec(2, iid=True, seed=3))
    assert [len(p) for p in parts] == [50, 50]
    assert not set(parts[0]) & set(parts[1])


def test_single_class_agents():
    ds = make_gaussian_blobs(5, 2, 40, 0.5, seed=0)
    parts = partition(ds, PartitionSpec(6, classes_per_agent=(1, 1), samples_per_agent=(5, 10), seed=0))
    for p in parts:
        assert np.unique(ds.labels[p]).size == 1


@pytest.mark.parametrize("seed", range(100))
def test_default_non_iid_partition(seed):
    ds = make_gaussian_blobs(10, 4, 250, 0.5, seed=0)
    parts = partition(ds, PartitionSpec(16, seed=seed))
    flat = np.concatenate(parts)
    assert flat.size == np.unique(flat).size <= len(ds)
    for p in parts:
        assert 5 <= np.unique(ds.labels[p]).size <= 8
        assert 60 <= p.size <= 80


def test_partition_infeasible_names_constraint():
    ds = make_gaussian_blobs(3, 2, 10, 0.5, seed=0)
    with pytest.raises(PartitionInfeasible, match="dataset size"):
        partition(ds, PartitionSpec(4, classes_per_agent=(1, 2), samples_per_agent=(10, 12)))
    with pytest.raises(PartitionInfeasible, match="classes_per_agent"):
        partition(ds, PartitionSpec(2, classes_per_agent=(2, 5), samples_per_agent=(5, 6)))
    with pytest.raises(PartitionInfeasible, match="cannot cover"):
        partition(ds, PartitionSpec(2, classes_per_agent=(2, 3), samples_per_agent=(2, 3)))


def test_partition_runs_out_of_class_samples():
    ds = make_gaussian_blobs(2, 2, 5, 0.5, seed=0)
    with pytest.raises(PartitionInfeasible):
        partition(ds, PartitionSpec(3, classes_per_agent=(1, 1), samples_per_agent=(3, 3), seed=0))


def test_batch_sizes_and_coverage():
    chunks = batch_indices(np.arange(10), 4, epoch_seed=0)
    assert [c.size for c in chunks] == [4, 4, 2]
    assert sorted(np.concatenate(chunks).tolist()) == list(range(10))
    again = batch_indices(np.arange(10), 4, epoch_seed=0)
    for a, b in zip(chunks, again):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60, unique=True), st.integers(1, 20), st.integers(0, 99))
def test_batches_cover_each_index_once(indices, bs, seed):
    chunks = batch_indices(indices, bs, seed)
    assert sorted(np.concatenate(chunks).tolist()) == sorted(indices)
    assert all(c.size == bs for c in chunks[:-1])


def test_batches_yield_rows():
    ds = make_gaussian_blobs(2, 3, 5, 0.5, seed=0)
    out = list(batches(ds, np.arange(10), 3, 1))
    assert [len(b) for b in out] == [3, 3, 3, 1]
