"""Synthetic tasks and client partitions."""

import numpy as np
import pytest

from splitsim.data import (
    PartitionSpec,
    dirichlet_partition,
    dump_dataset,
    iid_partition,
    load_dataset,
    make_classification_blobs,
    make_regression_quadratic,
    partition_dataset,
)


def _is_partition(shards, n):
    merged = np.concatenate([np.asarray(s) for s in shards])
    return sorted(merged.tolist()) == list(range(n))


class TestGenerators:
    def test_blobs_deterministic(self):
        a = make_classification_blobs(100, 4, 3, 2.0, seed=9)
        b = make_classification_blobs(100, 4, 3, 2.0, seed=9)
        assert a.inputs.tobytes() == b.inputs.tobytes()
        assert np.array_equal(a.labels, b.labels)

    def test_blobs_balanced_counts(self):
        ds = make_classification_blobs(101, 3, 4, 2.0, seed=1)
        counts = np.bincount(ds.labels, minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_one_sample_per_class(self):
        ds = make_classification_blobs(3, 2, 3, 5.0, seed=2)
        assert sorted(ds.labels.tolist()) == [0, 1, 2]

    def test_wide_separation_linearly_learnable(self):
        # huge separation: a least-squares linear readout gets >=99% train accuracy
        ds = make_classification_blobs(400, 6, 2, 25.0, seed=3)
        x = np.hstack([ds.inputs, np.ones((len(ds), 1))])
        y = np.where(ds.labels == 0, -1.0, 1.0)
        w, *_ = np.linalg.lstsq(x, y, rcond=None)
        acc = np.mean(np.sign(x @ w) == y)
        assert acc >= 0.99

    def test_regression_shape_and_determinism(self):
        a = make_regression_quadratic(50, 3, 2, seed=11)
        assert a.inputs.shape == (50, 3) and a.labels.shape == (50, 2)
        b = make_regression_quadratic(50, 3, 2, seed=11)
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_blob_validation(self):
        with pytest.raises(ValueError):
            make_classification_blobs(1, 2, 2, 1.0, seed=0)


class TestPartitions:
    def test_iid_partition_law(self):
        shards = iid_partition(103, 4, seed=0)
        assert _is_partition(shards, 103)
        sizes = [len(s) for s in shards]
        assert max(sizes) - min(sizes) <= 1

    def test_iid_deterministic(self):
        a = iid_partition(50, 3, seed=5)
        b = iid_partition(50, 3, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_dirichlet_partition_law(self):
        labels = np.arange(200) % 5
        shards = dirichlet_partition(labels, 6, alpha=1.0, seed=1)
        assert _is_partition(shards, 200)

    def test_dirichlet_deterministic(self):
        labels = np.arange(120) % 3
        a = dirichlet_partition(labels, 4, alpha=0.5, seed=9)
        b = dirichlet_partition(labels, 4, alpha=0.5, seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_large_alpha_concentrates_sizes(self):
        # alpha=1000 on balanced labels: shard sizes within 15% of N/M on average
        labels = np.arange(400) % 4
        devs = []
        for seed in range(100):
            shards = dirichlet_partition(labels, 4, alpha=1000.0, seed=seed)
            sizes = np.array([len(s) for s in shards])
            devs.append(np.abs(sizes - 100).max() / 100)
        assert np.mean(devs) < 0.15

    def test_small_alpha_skews_labels(self):
        # alpha=0.05: at least half the seeds give some shard >=80% one class
        labels = np.arange(400) % 4
        hits = 0
        for seed in range(40):
            shards = dirichlet_partition(labels, 4, alpha=0.05, seed=seed)
            for s in shards:
                if len(s) == 0:
                    continue
                top = np.bincount(labels[s], minlength=4).max()
                if top / len(s) >= 0.8:
                    hits += 1
                    break
        assert hits >= 20

    def test_empty_shard_warns_after_retries(self):
        labels = np.zeros(3, dtype=int)  # 3 samples cannot fill 8 shards
        with pytest.warns(UserWarning):
            shards = dirichlet_partition(labels, 8, alpha=0.01, seed=0)
        assert _is_partition(shards, 3)

    def test_partition_spec_dispatch(self):
        ds = make_classification_blobs(60, 2, 2, 2.0, seed=4)
        shards = partition_dataset(ds, PartitionSpec("dirichlet", 1.0, 3, 7))
        assert _is_partition(shards, 60)

    def test_partition_spec_validation(self):
        with pytest.raises(ValueError):
            PartitionSpec("dirichlet", alpha=0.0)
        with pytest.raises(ValueError):
            PartitionSpec("striped")


class TestDumpLoad:
    def test_round_trip_classification(self, tmp_path):
        ds = make_classification_blobs(40, 3, 2, 2.0, seed=6)
        path = tmp_path / "blobs.csv"
        dump_dataset(ds, path, seed=6)
        back = load_dataset(path)
        assert back.task == ds.task
        assert np.array_equal(back.labels, ds.labels)
        assert back.inputs.tobytes() == ds.inputs.tobytes()

    def test_round_trip_regression(self, tmp_path):
        ds = make_regression_quadratic(25, 2, 2, seed=7)
        path = tmp_path / "reg.csv"
        dump_dataset(ds, path, seed=7)
        back = load_dataset(path)
        assert back.labels.shape == ds.labels.shape
        assert back.labels.tobytes() == ds.labels.tobytes()

    def test_header_is_self_describing(self, tmp_path):
        ds = make_classification_blobs(10, 2, 2, 1.0, seed=8)
        path = tmp_path / "d.csv"
        dump_dataset(ds, path, seed=8)
        header = path.read_text().splitlines()[0]
        for token in ("task=classification_blobs", "dim=2", "seed=8"):
            assert token in header

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0,0\n")
        with pytest.raises(ValueError):
            load_dataset(path)
