"""Dataset ingestion, splitting, batching, and synthetic generation."""

import numpy as np
import pytest

from dimgrow.datasets import (
    Dataset,
    FieldSchema,
    SyntheticFieldSpec,
    SyntheticSpec,
    batch_iter,
    eval_batches,
    gen_synthetic,
    load_csv,
    split,
    write_csv,
)
from dimgrow.errors import ConfigError, DataError


def write_file(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadCsv:
    def test_vocab_counts_oov_slot(self, tmp_path):
        p = write_file(tmp_path / "d.csv", "color,label\nred,0\nblue,1\n")
        ds = load_csv(p)
        assert ds.schema[0].vocab_size == 3  # OOV + 2 distinct values
        assert ds.n == 2
        np.testing.assert_array_equal(ds.samples[:, 0], [1, 2])

    def test_distinct_count_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        values = [f"v{rng.integers(0, 7)}" for _ in range(60)]
        rows = "\n".join(f"{v},{i % 2}" for i, v in enumerate(values))
        p = write_file(tmp_path / "d.csv", "f,label\n" + rows + "\n")
        ds = load_csv(p)
        # independent recount with a set over the raw strings
        assert ds.schema[0].vocab_size == len(set(values)) + 1
        assert len(set(ds.samples[:, 0].tolist())) == len(set(values))

    def test_missing_label_column(self, tmp_path):
        p = write_file(tmp_path / "d.csv", "a,b\nx,y\n")
        with pytest.raises(DataError):
            load_csv(p)

    def test_non_binary_label_reports_row(self, tmp_path):
        p = write_file(tmp_path / "d.csv", "a,label\nx,0\ny,7\n")
        with pytest.raises(DataError, match="row 3"):
            load_csv(p)

    def test_malformed_row_reports_row(self, tmp_path):
        p = write_file(tmp_path / "d.csv", "a,b,label\nx,y,0\nx,0\n")
        with pytest.raises(DataError, match="row 3"):
            load_csv(p)

    def test_stable_encoding(self, tmp_path):
        text = "a,b,label\n" + "\n".join(f"x{i%3},y{i%5},{i%2}" for i in range(20)) + "\n"
        p1 = write_file(tmp_path / "d1.csv", text)
        p2 = write_file(tmp_path / "d2.csv", text)
        d1, d2 = load_csv(p1), load_csv(p2)
        assert np.array_equal(d1.samples, d2.samples)
        assert np.array_equal(d1.labels, d2.labels)


class TestSplit:
    def make_ds(self, n=40, seed=3):
        rng = np.random.default_rng(seed)
        schema = [FieldSchema("a", 6, 0), FieldSchema("b", 4, 1)]
        samples = np.column_stack([rng.integers(0, 6, n), rng.integers(0, 4, n)])
        labels = rng.integers(0, 2, n)
        return Dataset(schema, samples, labels)

    def test_all_train(self):
        ds = self.make_ds()
        train, val, test = split(ds, (1.0, 0.0, 0.0), seed=1)
        assert train.n == ds.n and val.n == 0 and test.n == 0

    def test_deterministic(self):
        ds = self.make_ds()
        a = split(ds, (0.6, 0.2, 0.2), seed=9)
        b = split(ds, (0.6, 0.2, 0.2), seed=9)
        for x, y in zip(a, b):
            assert np.array_equal(x.samples, y.samples)
            assert np.array_equal(x.labels, y.labels)

    def test_sizes_floor_remainder_to_train(self):
        ds = self.make_ds(n=43)
        train, val, test = split(ds, (0.5, 0.25, 0.25), seed=2)
        assert val.n == int(43 * 0.25)
        assert test.n == int(43 * 0.25)
        assert train.n == 43 - val.n - test.n
        assert train.n + val.n + test.n == 43

    def test_disjoint_partition(self):
        ds = self.make_ds(n=30)
        # tag rows by a unique label pattern through samples to recount
        ds.samples[:, 0] = np.arange(30) % 6
        train, val, test = split(ds, (0.5, 0.3, 0.2), seed=4)
        total = train.n + val.n + test.n
        assert total == 30

    def test_vocab_from_train_only_unseen_goes_oov(self):
        schema = [FieldSchema("a", 10, 0)]
        samples = np.arange(10).reshape(-1, 1)
        labels = np.tile([0, 1], 5)
        ds = Dataset(schema, samples, labels)
        train, val, test = split(ds, (0.5, 0.3, 0.2), seed=7)
        train_vals = set(train.samples[:, 0].tolist())
        assert 0 not in train_vals  # train rows are all in-vocabulary
        assert train.schema[0].vocab_size == train.n + 1
        # categories absent from train map to the OOV index in val/test
        other = np.concatenate([val.samples[:, 0], test.samples[:, 0]])
        assert (other == 0).sum() == (other.shape[0])  # all 10 values distinct, none shared

    def test_train_never_empty_with_valid_fractions(self):
        # floors plus remainder-to-train guarantee at least one train row
        ds = self.make_ds(n=3)
        train, _, _ = split(ds, (0.01, 0.5, 0.49), seed=1)
        assert train.n >= 1

    def test_bad_fractions(self):
        ds = self.make_ds()
        with pytest.raises(ConfigError):
            split(ds, (0.5, 0.4, 0.2), seed=1)
        with pytest.raises(ConfigError):
            split(ds, (0.0, 0.5, 0.5), seed=1)


class TestBatchIter:
    def make_ds(self, n=10):
        schema = [FieldSchema("a", n + 1, 0)]
        return Dataset(schema, np.arange(n).reshape(-1, 1), np.zeros(n, dtype=np.uint8))

    def test_partial_final_batch(self):
        sizes = [b.size for b in batch_iter(self.make_ds(10), 4, seed=0, epoch=0)]
        assert sizes == [4, 4, 2]

    def test_deterministic_per_seed_epoch(self):
        ds = self.make_ds(12)
        a = [b.indices[0].tolist() for b in batch_iter(ds, 5, seed=3, epoch=2)]
        b = [b.indices[0].tolist() for b in batch_iter(ds, 5, seed=3, epoch=2)]
        assert a == b
        c = [b.indices[0].tolist() for b in batch_iter(ds, 5, seed=3, epoch=3)]
        assert a != c

    def test_epoch_visits_every_row_once(self):
        ds = self.make_ds(17)
        seen = []
        for b in batch_iter(ds, 4, seed=1, epoch=0):
            seen.extend(b.indices[0].tolist())
        assert sorted(seen) == list(range(17))

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            list(batch_iter(self.make_ds(), 0, seed=0, epoch=0))

    def test_eval_batches_natural_order(self):
        ds = self.make_ds(7)
        out = np.concatenate([b.indices[0] for b in eval_batches(ds, 3)])
        np.testing.assert_array_equal(out, np.arange(7))


class TestGenSynthetic:
    def test_pure_noise_base_rate(self):
        # all planted dims zero: the logit is constant 0 and the base rate
        # must sit at one half up to sampling error
        spec = SyntheticSpec(
            fields=(SyntheticFieldSpec(10, 0), SyntheticFieldSpec(5, 0)),
            n_samples=50_000, label_noise=0.0, seed=11,
        )
        ds = gen_synthetic(spec)
        assert abs(ds.labels.mean() - 0.5) < 0.02

    def test_all_noise_fields_rejected_in_config(self):
        with pytest.raises(ConfigError):
            SyntheticSpec.from_dict(
                {"fields": [{"vocab_size": 10, "planted_dim": 0}],
                 "n_samples": 10, "seed": 1}
            )

    def test_saturated_latent_nearly_deterministic(self):
        # seed 99 draws |z| > 2 for both categories of a V=2, k=1 field,
        # so each category's label is nearly deterministic
        spec = SyntheticSpec(
            fields=(SyntheticFieldSpec(2, 1),), n_samples=4000, label_noise=0.0, seed=99,
        )
        ds = gen_synthetic(spec)
        for c in (0, 1):
            rate = ds.labels[ds.samples[:, 0] == c].mean()
            assert rate < 0.15 or rate > 0.85

    def test_deterministic(self):
        spec = SyntheticSpec(
            fields=(SyntheticFieldSpec(8, 2),), n_samples=200, label_noise=0.1, seed=21,
        )
        a, b = gen_synthetic(spec), gen_synthetic(spec)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.labels, b.labels)

    def test_spec_strict_parsing(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            SyntheticSpec.from_dict(
                {"fields": [], "n_samples": 10, "seed": 1, "noize": 0.1}
            )

    def test_noise_free_field_does_not_change_scores(self):
        # a model trained without the k=0 field must be invariant to
        # permutations of that field's column
        from dimgrow.netmodel import BackboneConfig
        from dimgrow.searchctl import uniform_allocation
        from dimgrow.trainer import RetrainConfig, run_retrain

        spec = SyntheticSpec(
            fields=(SyntheticFieldSpec(6, 1), SyntheticFieldSpec(30, 0)),
            n_samples=4000, label_noise=0.05, seed=31,
        )
        ds = gen_synthetic(spec)
        train, val, test = split(ds, (0.7, 0.15, 0.15), seed=31)
        schema_wo = [train.schema[0]]
        alloc = uniform_allocation(schema_wo, 2)
        model, _ = run_retrain(
            train, val, test, alloc,
            BackboneConfig(d_bb=8, hidden_sizes=(8,)),
            RetrainConfig(epochs=2, batch_size=128, eval_every=10, seed=31),
        )
        from dimgrow.datasets import Batch
        rng = np.random.default_rng(0)
        batch = Batch(
            indices=[test.samples[:, j] for j in range(test.num_fields)],
            labels=test.labels,
        )
        permuted = Batch(
            indices=[test.samples[:, 0], rng.permutation(test.samples[:, 1])],
            labels=test.labels,
        )
        from dimgrow.trainer import auc
        a1 = auc(model.predict(batch), test.labels)
        a2 = auc(model.predict(permuted), test.labels)
        assert abs(a1 - a2) <= 0.005

    def test_learnable_at_full_dimension(self):
        # confirms search tests run on a task a plain model can fit
        from dimgrow.netmodel import BackboneConfig
        from dimgrow.searchctl import uniform_allocation
        from dimgrow.trainer import RetrainConfig, run_retrain

        spec = SyntheticSpec(
            fields=(SyntheticFieldSpec(20, 2), SyntheticFieldSpec(10, 1)),
            n_samples=50_000, label_noise=0.0, seed=41,
        )
        ds = gen_synthetic(spec)
        train, val, test = split(ds, (0.8, 0.1, 0.1), seed=41)
        alloc = uniform_allocation(train.schema, 8)
        _, log = run_retrain(
            train, val, test, alloc,
            BackboneConfig(d_bb=16, hidden_sizes=(32,)),
            RetrainConfig(epochs=3, batch_size=512, eval_every=40, seed=41),
        )
        final = log.last()
        assert final["split"] == "test"
        assert final["auc"] > 0.75


class TestWriteCsv:
    def test_roundtrip_shape(self, tmp_path):
        spec = SyntheticSpec(
            fields=(SyntheticFieldSpec(5, 1), SyntheticFieldSpec(3, 0)),
            n_samples=50, label_noise=0.0, seed=2,
        )
        ds = gen_synthetic(spec)
        path = tmp_path / "out.csv"
        write_csv(ds, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 51
        assert lines[0] == "field_0,field_1,label"
        reloaded = load_csv(str(path))
        assert reloaded.n == 50
        assert reloaded.num_fields == 2
        np.testing.assert_array_equal(reloaded.labels, ds.labels)

    def test_byte_identical_across_writes(self, tmp_path):
        spec = SyntheticSpec(
            fields=(SyntheticFieldSpec(5, 1),), n_samples=30, label_noise=0.2, seed=3,
        )
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(gen_synthetic(spec), p1)
        write_csv(gen_synthetic(spec), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestDatasetInvariants:
    def test_index_bounds_enforced(self):
        schema = [FieldSchema("a", 3, 0)]
        with pytest.raises(DataError):
            Dataset(schema, np.array([[3]]), np.array([0]))

    def test_label_values_enforced(self):
        schema = [FieldSchema("a", 3, 0)]
        with pytest.raises(DataError):
            Dataset(schema, np.array([[1]]), np.array([2]))

    def test_generated_indices_always_in_bounds(self):
        rng = np.random.default_rng(55)
        for _ in range(20):
            fields = tuple(
                SyntheticFieldSpec(int(rng.integers(1, 12)), int(rng.integers(0, 3)))
                for _ in range(int(rng.integers(1, 4)))
            )
            if not any(f.planted_dim >= 1 for f in fields):
                fields = fields + (SyntheticFieldSpec(4, 1),)
            spec = SyntheticSpec(fields=fields, n_samples=40,
                                 label_noise=0.1, seed=int(rng.integers(0, 1000)))
            ds = gen_synthetic(spec)  # Dataset.__post_init__ re-validates bounds
            for j, fs in enumerate(ds.schema):
                assert ds.samples[:, j].max() < fs.vocab_size
