"""Categorical datasets: CSV ingestion, vocabularies, batching, and a
synthetic generator with planted per-field latent dimensionality.

Encoding convention: index 0 of every field is reserved for values not
seen in the training portion; observed values get indices 1.. in
first-seen order, which keeps encoding deterministic in one pass.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .diffcore import sigmoid_values
from .errors import ConfigError, DataError, check_keys
from .seeding import substream

OOV_INDEX = 0


@dataclass(frozen=True)
class FieldSchema:
    name: str
    vocab_size: int
    field_index: int


@dataclass
class Dataset:
    """Encoded samples [n x num_fields] with binary labels.

    Empty datasets (n == 0) are legal as split outputs; loaders and the
    generator always produce at least one row.
    """

    schema: list[FieldSchema]
    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(self.schema):
            raise ConfigError(
                f"samples shape {self.samples.shape} does not match {len(self.schema)} fields"
            )
        if self.labels.shape != (self.samples.shape[0],):
            raise ConfigError("labels length does not match sample count")
        if self.n > 0:
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise DataError("labels must be 0 or 1")
            if self.samples.min() < 0:
                raise DataError("negative category index")
            for j, fs in enumerate(self.schema):
                hi = self.samples[:, j].max()
                if hi >= fs.vocab_size:
                    raise DataError(
                        f"field {fs.name!r}: index {hi} >= vocab_size {fs.vocab_size}"
                    )

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def num_fields(self):
        return len(self.schema)


@dataclass
class Batch:
    """Per-field index arrays of a common length plus labels."""

    indices: list[np.ndarray]
    labels: np.ndarray

    @property
    def size(self):
        return self.labels.shape[0]


@dataclass(frozen=True)
class SyntheticFieldSpec:
    vocab_size: int
    planted_dim: int

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.planted_dim < 0:
            raise ConfigError(f"planted_dim must be >= 0, got {self.planted_dim}")


@dataclass(frozen=True)
class SyntheticSpec:
    fields: tuple
    n_samples: int
    label_noise: float
    seed: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigError(f"label_noise must lie in [0, 0.5), got {self.label_noise}")

    @classmethod
    def from_dict(cls, d):
        check_keys(d, {"fields", "n_samples", "label_noise", "seed"},
                   {"fields", "n_samples", "seed"}, "synthetic spec")
        fields = []
        for i, fd in enumerate(d["fields"]):
            check_keys(fd, {"vocab_size", "planted_dim"}, {"vocab_size", "planted_dim"},
                       f"synthetic spec field {i}")
            fields.append(SyntheticFieldSpec(int(fd["vocab_size"]), int(fd["planted_dim"])))
        # search needs at least one learnable field; all-noise specs are
        # only useful for calibrating the generator itself
        if not any(f.planted_dim >= 1 for f in fields):
            raise ConfigError("at least one field needs planted_dim >= 1")
        return cls(
            fields=tuple(fields),
            n_samples=int(d["n_samples"]),
            label_noise=float(d.get("label_noise", 0.0)),
            seed=int(d["seed"]),
        )

    @classmethod
    def from_json_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def load_csv(path, label_column="label"):
    """Load a UTF-8 CSV with a header row into an encoded Dataset.

    All non-label columns are treated as categorical strings; vocabularies
    use first-seen order with index 0 reserved for out-of-vocabulary.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header {header}")
        label_pos = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != label_pos]
        if len(set(names)) != len(names):
            raise DataError(f"{path}: duplicate field names in header")
        vocabs = [dict() for _ in names]
        rows = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno}: expected {len(header)} columns, got {len(row)}"
                )
            raw_label = row[label_pos].strip()
            if raw_label not in ("0", "1"):
                raise DataError(f"{path}: row {lineno}: label must be 0 or 1, got {raw_label!r}")
            labels.append(int(raw_label))
            encoded = []
            col = 0
            for i, value in enumerate(row):
                if i == label_pos:
                    continue
                vocab = vocabs[col]
                encoded.append(vocab.setdefault(value, len(vocab) + 1))
                col += 1
            rows.append(encoded)
    if not rows:
        raise DataError(f"{path}: no data rows")
    schema = [
        FieldSchema(name=name, vocab_size=len(vocab) + 1, field_index=i)
        for i, (name, vocab) in enumerate(zip(names, vocabs))
    ]
    return Dataset(schema=schema, samples=np.array(rows), labels=np.array(labels))


def _remap_from_train(train_cols, other_cols):
    """First-seen remap built on train values; unseen values map to OOV_INDEX."""
    uniq, first = np.unique(train_cols, return_index=True)
    order = np.argsort(first, kind="stable")
    seen = uniq[order]
    lut_size = int(max(train_cols.max(initial=0), *(c.max(initial=0) for c in other_cols))) + 1
    lut = np.full(lut_size, OOV_INDEX, dtype=np.int64)
    lut[seen] = np.arange(1, len(seen) + 1)
    return lut, len(seen) + 1


def split(ds, fractions, seed):
    """Seeded disjoint row partition; vocabularies are rebuilt from train only.

    Val/test sizes are floor(fraction * n); the remainder goes to train.
    """
    f_train, f_val, f_test = (float(f) for f in fractions)
    if f_train <= 0 or f_val < 0 or f_test < 0:
        raise ConfigError(f"split fractions must be (train>0, val>=0, test>=0), got {fractions}")
    if f_train + f_val + f_test > 1.0 + 1e-9:
        raise ConfigError(f"split fractions sum to more than 1: {fractions}")
    n = ds.n
    n_val = int(n * f_val)
    n_test = int(n * f_test)
    n_train = n - n_val - n_test
    if n_train < 1:
        raise DataError(f"empty train split for n={n}, fractions={fractions}")
    perm = substream(seed, "split").permutation(n)
    idx = {
        "train": perm[:n_train],
        "val": perm[n_train:n_train + n_val],
        "test": perm[n_train + n_val:],
    }
    out_samples = {k: ds.samples[v] for k, v in idx.items()}
    out_labels = {k: ds.labels[v] for k, v in idx.items()}

    schema = []
    for j, fs in enumerate(ds.schema):
        train_col = out_samples["train"][:, j]
        others = [out_samples["val"][:, j], out_samples["test"][:, j]]
        lut, vocab_size = _remap_from_train(train_col, others)
        for part in out_samples.values():
            part[:, j] = lut[part[:, j]]
        schema.append(FieldSchema(name=fs.name, vocab_size=vocab_size, field_index=j))

    return tuple(
        Dataset(schema=list(schema), samples=out_samples[k], labels=out_labels[k])
        for k in ("train", "val", "test")
    )


def _take(ds, rows):
    return Batch(
        indices=[ds.samples[rows, j] for j in range(ds.num_fields)],
        labels=ds.labels[rows],
    )


def batch_iter(ds, batch_size, seed, epoch):
    """Visit every row exactly once per epoch in a seeded order.

    The final partial batch is emitted; evaluation must cover all rows and
    the search loop tolerates a variable batch size.
    """
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if ds.n == 0:
        return
    perm = substream(seed, "batch", epoch).permutation(ds.n)
    for start in range(0, ds.n, batch_size):
        yield _take(ds, perm[start:start + batch_size])


def eval_batches(ds, batch_size):
    """Natural-order batches for deterministic evaluation (any size >= 1)."""
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    for start in range(0, ds.n, batch_size):
        yield _take(ds, np.arange(start, min(start + batch_size, ds.n)))


def gen_synthetic(spec):
    """Generate a dataset whose label depends on each field through a
    planted latent factor of known dimension.

    Per field with planted_dim k >= 1: categories carry i.i.d. standard
    normal latent vectors in R^k and the field contributes w . z_c to the
    logit with sign weights w in {-1, +1}^k. On top of that, latent vectors
    interact across fields through pairwise dot products (vectors are
    zero-padded to the largest planted dimension), so every coordinate that
    a partner field shares is individually necessary: a field's optimal
    embedding rank equals its interacting coordinates plus the residual
    additive direction, not just one scalar per category. Fields with
    k = 0 contribute nothing. Labels are Bernoulli(sigmoid(logit)), then
    flipped with probability label_noise.
    """
    rng = substream(spec.seed, "synth")
    n = spec.n_samples
    latents = []
    weights = []
    for fs in spec.fields:
        if fs.planted_dim >= 1:
            latents.append(rng.standard_normal((fs.vocab_size, fs.planted_dim)))
            weights.append(rng.choice(np.array([-1.0, 1.0]), size=fs.planted_dim))
        else:
            latents.append(None)
            weights.append(None)
    samples = np.column_stack(
        [rng.integers(0, fs.vocab_size, size=n) for fs in spec.fields]
    )
    logit = np.zeros(n)
    k_max = max(fs.planted_dim for fs in spec.fields)
    padded_sum = np.zeros((n, max(k_max, 1)))
    padded_sq = np.zeros(n)
    for j, fs in enumerate(spec.fields):
        if fs.planted_dim >= 1:
            rows = latents[j][samples[:, j]]
            logit += rows @ weights[j]
            padded_sum[:, :fs.planted_dim] += rows
            padded_sq += (rows * rows).sum(axis=1)
    # sum over field pairs of dot(z_i, z_j) with zero padding
    logit += 0.5 * ((padded_sum * padded_sum).sum(axis=1) - padded_sq)
    labels = rng.random(n) < sigmoid_values(logit)
    if spec.label_noise > 0:
        labels ^= rng.random(n) < spec.label_noise
    schema = [
        FieldSchema(name=f"field_{i}", vocab_size=fs.vocab_size, field_index=i)
        for i, fs in enumerate(spec.fields)
    ]
    return Dataset(schema=schema, samples=samples, labels=labels.astype(np.uint8))


def write_csv(ds, path):
    """Write a dataset as CSV with the label column last, named 'label'."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([fs.name for fs in ds.schema] + ["label"])
        for i in range(ds.n):
            writer.writerow([str(int(v)) for v in ds.samples[i]] + [str(int(ds.labels[i]))])
