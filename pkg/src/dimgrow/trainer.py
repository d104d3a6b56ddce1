"""Optimization loops for search and retrain, evaluation metrics, and
structured run logging.

The optimizer keeps per-element moment and step-count state so that
dimensions added (or re-activated) mid-run start from fresh moments with
exact bias correction, and dimensions currently unused are left frozen.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .datasets import batch_iter, eval_batches
from .dynembed import param_counts
from .errors import ConfigError, DataError, NumericError, check_keys
from .netmodel import BackboneConfig, SearchModel, build_retrain_model
from .searchctl import OptimizerConfig, check_and_adjust, finalize
from .seeding import substream
from . import diffcore as dc


@dataclass(frozen=True)
class AcceptanceConfig:
    """Tolerated relative performance drop for a compressed model."""

    perf_tolerance: float = 0.999

    def __post_init__(self):
        if not 0 < self.perf_tolerance <= 1:
            raise ConfigError(f"perf_tolerance must lie in (0, 1], got {self.perf_tolerance}")


class _Slot:
    __slots__ = ("tensor", "lr", "active", "m", "v", "t")

    def __init__(self, tensor, lr, active):
        self.tensor = tensor
        self.lr = lr
        self.active = active
        shape = tensor.values.shape
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = np.zeros(shape, dtype=np.int64)


class Adam:
    """Adaptive-moment optimizer with per-element state.

    Moment arrays track the parameter's shape: when a parameter grows, the
    new slices start at zero moments and step count zero. The optional
    active-region callable restricts updates to the currently used rows or
    columns; everything outside it is frozen.
    """

    def __init__(self, config=None):
        self.config = config or OptimizerConfig()
        self._slots = {}

    def register(self, tensor, lr_group="main", active=None):
        lr = (
            self.config.gate_learning_rate
            if lr_group == "gate"
            else self.config.learning_rate
        )
        self._slots[id(tensor)] = _Slot(tensor, lr, active)

    def register_model(self, model):
        for _, tensor, lr_group, active in model.parameters():
            self.register(tensor, lr_group, active)

    def _slot(self, tensor):
        slot = self._slots.get(id(tensor))
        if slot is None:
            raise ConfigError("tensor is not registered with this optimizer")
        return slot

    @staticmethod
    def _sync(slot):
        shape = slot.tensor.values.shape
        if slot.m.shape == shape:
            return
        for name in ("m", "v", "t"):
            old = getattr(slot, name)
            fresh = np.zeros(shape, dtype=old.dtype)
            r = min(old.shape[0], shape[0])
            c = min(old.shape[1], shape[1])
            fresh[:r, :c] = old[:r, :c]
            setattr(slot, name, fresh)

    @staticmethod
    def _region(slot):
        if slot.active is None:
            return (slice(None), slice(None))
        rows, cols = slot.active()
        return (
            slice(None) if rows is None else slice(0, rows),
            slice(None) if cols is None else slice(0, cols),
        )

    def step(self):
        b1, b2, eps = self.config.beta1, self.config.beta2, self.config.eps
        for slot in self._slots.values():
            self._sync(slot)
            region = self._region(slot)
            g = slot.tensor.grad[region]
            slot.t[region] += 1
            t = slot.t[region]
            slot.m[region] = b1 * slot.m[region] + (1.0 - b1) * g
            slot.v[region] = b2 * slot.v[region] + (1.0 - b2) * g * g
            m_hat = slot.m[region] / (1.0 - np.power(b1, t))
            v_hat = slot.v[region] / (1.0 - np.power(b2, t))
            slot.tensor.values[region] -= slot.lr * m_hat / (np.sqrt(v_hat) + eps)

    def moments(self, tensor):
        slot = self._slot(tensor)
        self._sync(slot)
        return slot.m, slot.v, slot.t

    def reset_slices(self, tensor, axis, index):
        """Zero the moment state of one row (axis 0) or column (axis 1)."""
        slot = self._slot(tensor)
        self._sync(slot)
        sel = (index, slice(None)) if axis == 0 else (slice(None), index)
        for arr in (slot.m, slot.v, slot.t):
            arr[sel] = 0

    def permute_slices(self, tensor, axis, perm):
        """Reorder the first len(perm) rows or columns of the moment state."""
        slot = self._slot(tensor)
        self._sync(slot)
        k = len(perm)
        for arr in (slot.m, slot.v, slot.t):
            if axis == 0:
                arr[:k, :] = arr[perm, :]
            else:
                arr[:, :k] = arr[:, perm]


def auc(scores, labels):
    """Rank-based AUC with average ranks for tied scores, O(n log n)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n = scores.shape[0]
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: labels contain a single class")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    starts = np.r_[True, s[1:] != s[:-1]]
    run_id = np.cumsum(starts) - 1
    counts = np.bincount(run_id)
    ends = np.cumsum(counts)
    avg = (ends - counts + 1 + ends) / 2.0
    ranks = np.empty(n)
    ranks[order] = avg[run_id]
    r_pos = ranks[labels == 1].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(scores, labels):
    p = np.clip(np.asarray(scores, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    y = np.asarray(labels, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def evaluate(model, ds, batch_size=4096):
    """(auc, logloss) of a model's deterministic predictions over a dataset."""
    if ds.n == 0:
        raise DataError("cannot evaluate on an empty dataset")
    scores = np.concatenate([model.predict(b) for b in eval_batches(ds, batch_size)])
    return auc(scores, ds.labels), logloss(scores, ds.labels)


class RunLog:
    """Stream of evaluation records for one run, plus the final gate values."""

    def __init__(self, stage):
        self.stage = stage
        self.records = []
        self.final_gates = None

    def append(self, record):
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ConfigError("log steps must be strictly increasing")
        self.records.append(record)

    def last(self):
        return self.records[-1] if self.records else None


def _search_record(step, split, model, metrics):
    used, allocated = model.param_counts()
    return {
        "step": step,
        "split": split,
        "auc": metrics[0],
        "logloss": metrics[1],
        "params_used": used,
        "params_alloc": allocated,
        "dims": model.dims(),
        "gate_summary": model.gate_summary(),
    }


def run_search(train, val, config, backbone=None):
    """Grow-and-shrink dimension search over a fixed epoch budget.

    Returns the finalized allocation and the evaluation log. Batches of a
    single sample are skipped for training (shuffling needs >= 2 rows);
    evaluation always covers every row.
    """
    backbone = backbone or BackboneConfig()
    rng_init = substream(config.seed, "init")
    rng_shuffle = substream(config.seed, "shuffle")
    model = SearchModel(train.schema, config, backbone, rng_init)
    optimizer = Adam(config.optimizer)
    optimizer.register_model(model)
    log = RunLog("search")

    step = 0
    for epoch in range(config.epochs):
        for batch in batch_iter(train, config.batch_size, config.seed, epoch):
            if batch.size < 2:
                continue
            model.zero_grad()
            logits = model.forward(batch, rng_shuffle)
            loss = model.loss(logits, batch)
            if not np.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at step {step}")
            dc.backward(loss)
            optimizer.step()
            step += 1
            if step % config.check_interval_steps == 0:
                check_and_adjust(model.field_states, model.bank, config, rng_init, optimizer)
            if step % config.eval_every == 0:
                log.append(_search_record(step, "val", model, evaluate(model, val)))

    if not log.records or log.records[-1]["step"] != step:
        log.append(_search_record(step, "val", model, evaluate(model, val)))
    allocation = finalize(model.field_states, model.bank, config)
    log.final_gates = allocation.gate_snapshot
    return allocation, log


_RETRAIN_KEYS = {"epochs", "patience", "batch_size", "learning_rate", "eval_every", "seed"}


@dataclass(frozen=True)
class RetrainConfig:
    epochs: int = 10
    patience: int = 3
    batch_size: int = 256
    learning_rate: float = 1e-3
    eval_every: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("retrain epochs, patience and batch_size must be >= 1")
        if self.eval_every < 1 or self.learning_rate <= 0:
            raise ConfigError("retrain eval_every must be >= 1 and learning_rate > 0")

    @classmethod
    def from_dict(cls, d):
        check_keys(d, _RETRAIN_KEYS, set(), "retrain config")
        return cls(**d)


def _retrain_record(step, split, model, allocation, metrics):
    used = allocation.embedding_params()
    return {
        "step": step,
        "split": split,
        "auc": metrics[0],
        "logloss": metrics[1],
        "params_used": used,
        "params_alloc": used,
        "dims": allocation.dims(),
        "gate_summary": {},
    }


def run_retrain(train, val, test, allocation, backbone=None, config=None):
    """Train a fixed-dimension model from scratch with early stopping.

    Early stopping watches validation AUC with the configured patience and
    restores the best parameters before the final test evaluation.
    """
    backbone = backbone or BackboneConfig()
    config = config or RetrainConfig()
    rng_init = substream(config.seed, "init")
    model = build_retrain_model(allocation, backbone, rng_init).bind(train.schema)
    optimizer = Adam(
        OptimizerConfig(learning_rate=config.learning_rate,
                        gate_learning_rate=config.learning_rate)
    )
    optimizer.register_model(model)
    log = RunLog("retrain")
    params = [t for _, t, _, _ in model.parameters()]

    best_auc = -np.inf
    best_values = None
    bad_evals = 0
    step = 0
    stop = False

    def _eval_val():
        nonlocal best_auc, best_values, bad_evals, stop
        metrics = evaluate(model, val)
        log.append(_retrain_record(step, "val", model, allocation, metrics))
        if metrics[0] > best_auc:
            best_auc = metrics[0]
            best_values = [t.values.copy() for t in params]
            bad_evals = 0
        else:
            bad_evals += 1
            if bad_evals >= config.patience:
                stop = True

    for epoch in range(config.epochs):
        for batch in batch_iter(train, config.batch_size, config.seed, epoch):
            model.zero_grad()
            logits = model.forward(batch)
            loss = model.loss(logits, batch)
            if not np.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at step {step}")
            dc.backward(loss)
            optimizer.step()
            step += 1
            if step % config.eval_every == 0 and val.n > 0:
                _eval_val()
            if stop:
                break
        if stop:
            break

    if best_values is None and val.n > 0:
        _eval_val()
    if best_values is not None:
        for t, v in zip(params, best_values):
            t.values[...] = v
    log.append(_retrain_record(step + 1, "test", model, allocation, evaluate(model, test)))
    return model, log


GATE_HISTOGRAM_BINS = 10


def gate_histogram(final_gates):
    """Counts of final gate values in ten equal bins over [0, 1]."""
    values = []
    for gates in (final_gates or {}).values():
        values.extend(gates)
    counts, edges = np.histogram(np.array(values, dtype=np.float64),
                                 bins=GATE_HISTOGRAM_BINS, range=(0.0, 1.0))
    return {
        "bin_edges": [float(e) for e in edges],
        "counts": [int(c) for c in counts],
        "total": int(counts.sum()),
    }


def emit_report(log, out_dir):
    """Write metrics JSONL, a gate histogram, and an AUC-vs-params CSV.

    The search stage writes metrics.jsonl; other stages prefix the file
    name with the stage so several runs can share a directory.
    """
    os.makedirs(out_dir, exist_ok=True)
    prefix = "" if log.stage == "search" else f"{log.stage}_"
    written = []

    metrics_path = os.path.join(out_dir, f"{prefix}metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        for record in log.records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    written.append(metrics_path)

    hist_path = os.path.join(out_dir, f"{prefix}gate_histogram.json")
    with open(hist_path, "w", encoding="utf-8") as fh:
        json.dump(gate_histogram(log.final_gates), fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(hist_path)

    csv_path = os.path.join(out_dir, f"{prefix}auc_params.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("stage,params_used,auc,logloss\n")
        for record in log.records:
            fh.write(
                f"{log.stage},{record['params_used']},{record['auc']!r},{record['logloss']!r}\n"
            )
    written.append(csv_path)
    return written
