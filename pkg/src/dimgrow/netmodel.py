"""Full forward passes: the search model (gated dynamic embeddings, shared
adaptation projection, MLP backbone with a wide term) and the plain
retrain model built from a finished allocation.

The adaptation step computes sum_i e_i* @ W_i[:d_i], which equals the
concat-then-matmul formulation column for column; the sum form avoids
rebuilding a concatenated weight matrix as dimensions change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .datasets import Batch
from .dynembed import init_field, lookup, param_counts
from .errors import ConfigError
from .shufflegate import GateBank, apply_gate, gate_regularizer

DEFAULT_HIDDEN = (64, 32)
DEFAULT_DIMS_PER_FIELD = 16


@dataclass(frozen=True)
class BackboneConfig:
    d_bb: int | None = None          # None: 16 dims per field
    hidden_sizes: tuple = DEFAULT_HIDDEN
    wide_enabled: bool = True

    def __post_init__(self):
        if self.d_bb is not None and self.d_bb < 1:
            raise ConfigError(f"d_bb must be >= 1, got {self.d_bb}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden sizes must be >= 1, got {self.hidden_sizes}")

    def resolve_d_bb(self, num_fields):
        return self.d_bb if self.d_bb is not None else DEFAULT_DIMS_PER_FIELD * num_fields


class Mlp:
    """Dense relu stack ending in a single linear output column."""

    def __init__(self, layer_dims, rng):
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            self.weights.append(dc.Tensor2(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))))
            self.biases.append(dc.Tensor2(np.zeros((1, fan_out))))

    def forward(self, h):
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = dc.add_row(dc.matmul(h, w), b)
            if i < last:
                h = dc.relu(h)
        return h

    def forward_values(self, h):
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.values + b.values
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def parameters(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"mlp.w{i}", w
            yield f"mlp.b{i}", b

    def param_count(self):
        return sum(t.values.size for _, t in self.parameters())


class _WideAndBias:
    """Per-field scalar tables plus a global bias, summed into the logit."""

    def __init__(self, vocab_sizes, rng, enabled):
        self.enabled = enabled
        self.tables = [dc.Tensor2(np.zeros((v, 1))) for v in vocab_sizes] if enabled else []
        self.bias = dc.Tensor2(np.zeros((1, 1)))
        del rng  # scalar terms start at zero; kept for signature symmetry

    def apply(self, logits, indices):
        if self.enabled:
            for table, idx in zip(self.tables, indices):
                logits = dc.add(logits, dc.row_gather(table, idx))
        return dc.add_row(logits, self.bias)

    def apply_values(self, logits, indices):
        if self.enabled:
            for table, idx in zip(self.tables, indices):
                logits = logits + table.values[idx]
        return logits + self.bias.values

    def parameters(self):
        for i, t in enumerate(self.tables):
            yield f"wide.{i}", t
        yield "bias", self.bias


class SearchModel:
    """Dynamic-dimension model used during the search phase."""

    def __init__(self, schema, search_config, backbone_config, rng):
        if not schema:
            raise ConfigError("search model needs at least one field")
        self.schema = list(schema)
        self.alpha = search_config.alpha
        self.decayed_reg = search_config.decayed_reg
        self.d_bb = backbone_config.resolve_d_bb(len(schema))
        self.bank = GateBank(search_config.tau_temperature)
        self.field_states = [init_field(fs, self.d_bb, rng) for fs in self.schema]
        for st in self.field_states:
            self.bank.add_field(st.theta)
        self.mlp = Mlp([self.d_bb, *backbone_config.hidden_sizes, 1], rng)
        self.wide = _WideAndBias(
            [fs.vocab_size for fs in self.schema], rng, backbone_config.wide_enabled
        )

    def forward(self, batch, rng):
        """Training forward pass with fresh shuffles; needs batch size >= 2."""
        if batch.size < 2:
            raise ConfigError(
                f"search forward needs a batch of >= 2 samples (got {batch.size}); "
                "shuffling a single sample is degenerate"
            )
        h = None
        for i, st in enumerate(self.field_states):
            e = lookup(st, batch.indices[i])
            e_star = apply_gate(e, self.bank, i, rng)
            proj = dc.matmul(e_star, dc.slice_rows(st.adapter, st.used_dims))
            h = proj if h is None else dc.add(h, proj)
        logits = self.mlp.forward(h)
        return self.wide.apply(logits, batch.indices)

    def regularizer(self):
        return gate_regularizer(
            self.bank,
            [st.used_dims for st in self.field_states],
            self.alpha,
            self.decayed_reg,
        )

    def loss(self, logits, batch):
        task = dc.bce_with_logits(logits, batch.labels)
        reg = self.regularizer()
        return task if reg is None else dc.add(task, reg)

    def predict(self, batch):
        """Deterministic evaluation scores in (0, 1).

        The shuffled branch is replaced by its expectation under a uniform
        within-batch permutation (the per-batch column mean), so no RNG is
        consumed and reruns are byte-identical.
        """
        h = np.zeros((batch.size, self.d_bb))
        for i, st in enumerate(self.field_states):
            e = st.table.values[batch.indices[i]][:, :st.used_dims]
            g = self.bank.gate_values(i, st.used_dims)
            mixed = g * e + (1.0 - g) * e.mean(axis=0, keepdims=True)
            h += mixed @ st.adapter.values[:st.used_dims]
        logits = self.mlp.forward_values(h)
        logits = self.wide.apply_values(logits, batch.indices)
        return dc.sigmoid_values(logits[:, 0])

    def parameters(self):
        """Yield (name, tensor, lr_group, active_region) for the optimizer.

        active_region is a callable giving (rows, cols) limits, or None
        when the whole tensor trains; parameters of retained-but-unused
        dimensions are frozen.
        """
        for st in self.field_states:
            name = st.field.name
            yield f"emb.{name}", st.table, "main", (lambda st=st: (None, st.used_dims))
            yield f"adapter.{name}", st.adapter, "main", (lambda st=st: (st.used_dims, None))
            yield f"theta.{name}", st.theta, "gate", (lambda st=st: (None, st.used_dims))
        for name, t in self.mlp.parameters():
            yield name, t, "main", None
        for name, t in self.wide.parameters():
            yield name, t, "main", None

    def zero_grad(self):
        for _, t, _, _ in self.parameters():
            t.zero_grad()

    def param_counts(self):
        return param_counts(self.field_states)

    def dims(self):
        return {st.field.name: st.used_dims for st in self.field_states}

    def gate_summary(self):
        out = {}
        for i, st in enumerate(self.field_states):
            g = self.bank.gate_values(i, st.used_dims)
            out[st.field.name] = {
                "min": float(g.min()),
                "mean": float(g.mean()),
                "max": float(g.max()),
            }
        return out


class RetrainModel:
    """Plain fixed-dimension model: concatenated embeddings into an MLP.

    No gates, no shuffling, no adapters; removed fields are simply absent
    and their data columns are ignored at batch time.
    """

    def __init__(self, allocation, backbone_config, rng):
        self.fields = allocation.surviving()
        if not self.fields:
            raise ConfigError("allocation has no surviving fields")
        self.d_in = sum(f.dim for f in self.fields)
        self.tables = [
            dc.Tensor2(rng.normal(0.0, 0.01, (f.vocab_size, f.dim))) for f in self.fields
        ]
        self.mlp = Mlp([self.d_in, *backbone_config.hidden_sizes, 1], rng)
        self.wide = _WideAndBias(
            [f.vocab_size for f in self.fields], rng, backbone_config.wide_enabled
        )
        self._columns = None

    def bind(self, schema):
        """Resolve allocation fields to dataset columns by name."""
        by_name = {fs.name: fs for fs in schema}
        cols = []
        for f in self.fields:
            fs = by_name.get(f.name)
            if fs is None:
                raise ConfigError(f"dataset has no field named {f.name!r}")
            if fs.vocab_size != f.vocab_size:
                raise ConfigError(
                    f"field {f.name!r}: allocation vocab_size {f.vocab_size} "
                    f"!= dataset vocab_size {fs.vocab_size}"
                )
            cols.append(fs.field_index)
        self._columns = cols
        return self

    def _field_indices(self, batch):
        if self._columns is None:
            raise ConfigError("retrain model is not bound to a dataset schema")
        return [batch.indices[c] for c in self._columns]

    def forward(self, batch):
        indices = self._field_indices(batch)
        embs = [dc.row_gather(t, idx) for t, idx in zip(self.tables, indices)]
        h = embs[0] if len(embs) == 1 else dc.concat_cols(embs)
        logits = self.mlp.forward(h)
        return self.wide.apply(logits, indices)

    def loss(self, logits, batch):
        return dc.bce_with_logits(logits, batch.labels)

    def predict(self, batch):
        indices = self._field_indices(batch)
        h = np.concatenate(
            [t.values[idx] for t, idx in zip(self.tables, indices)], axis=1
        )
        logits = self.mlp.forward_values(h)
        logits = self.wide.apply_values(logits, indices)
        return dc.sigmoid_values(logits[:, 0])

    def parameters(self):
        for f, t in zip(self.fields, self.tables):
            yield f"emb.{f.name}", t, "main", None
        for name, t in self.mlp.parameters():
            yield name, t, "main", None
        for name, t in self.wide.parameters():
            yield name, t, "main", None

    def zero_grad(self):
        for _, t, _, _ in self.parameters():
            t.zero_grad()

    def embedding_params(self):
        return sum(t.values.size for t in self.tables)

    def param_count_total(self):
        return sum(t.values.size for _, t, _, _ in self.parameters())


def build_retrain_model(allocation, backbone_config, rng):
    return RetrainModel(allocation, backbone_config, rng)


def forward_eval(model, batch):
    """Deterministic scores in (0, 1) for either model kind."""
    return model.predict(batch)
