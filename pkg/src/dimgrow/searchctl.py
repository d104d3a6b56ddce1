"""Dimension expansion/reduction controller: threshold checks, budget
enforcement, and finalization into an allocation scheme.

After each optimizer step the controller inspects every field's active
gates. Reduction runs first (dimensions whose gates collapsed below
t_down are reordered out and truncated), then expansion grows fields
whose weakest active gate exceeds t_up, highest-confidence fields first,
skipping any growth that would exceed the configured budget.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynembed import grow, param_counts, shrink
from .errors import ConfigError, check_keys

BUDGET_KINDS = ("total_dims", "total_params")


@dataclass(frozen=True)
class Budget:
    kind: str
    value: int

    def __post_init__(self):
        if self.kind not in BUDGET_KINDS:
            raise ConfigError(f"budget kind must be one of {BUDGET_KINDS}, got {self.kind!r}")
        if self.value < 1:
            raise ConfigError(f"budget value must be >= 1, got {self.value}")

    @classmethod
    def from_dict(cls, d):
        check_keys(d, {"kind", "value"}, {"kind", "value"}, "budget")
        return cls(kind=d["kind"], value=int(d["value"]))


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    gate_learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.gate_learning_rate <= 0:
            raise ConfigError("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        check_keys(d, {f.name for f in cls.__dataclass_fields__.values()}, set(), "optimizer")
        return cls(**d)


_SEARCH_KEYS = {
    "alpha", "tau_temperature", "t_up", "t_down", "check_interval_steps",
    "budget", "decayed_reg", "seed", "optimizer", "epochs", "batch_size",
    "eval_every",
}


@dataclass(frozen=True)
class SearchConfig:
    alpha: float = 0.01
    tau_temperature: float = 5.0
    t_up: float = 0.6
    t_down: float = 0.01
    check_interval_steps: int = 1
    budget: Budget | None = None
    decayed_reg: bool = True
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 5
    batch_size: int = 256
    eval_every: int = 200

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.t_down < self.t_up < 1:
            raise ConfigError(f"need 0 < t_down < t_up < 1, got {self.t_down}, {self.t_up}")
        if self.check_interval_steps < 1:
            raise ConfigError("check_interval_steps must be >= 1")
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 1 and batch_size >= 2")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    @classmethod
    def from_dict(cls, d):
        check_keys(d, _SEARCH_KEYS, set(), "search config")
        d = dict(d)
        if d.get("budget") is not None:
            d["budget"] = Budget.from_dict(d["budget"])
        if "optimizer" in d:
            d["optimizer"] = OptimizerConfig.from_dict(d["optimizer"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["budget"] = asdict(self.budget) if self.budget else None
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class FieldAllocation:
    name: str
    vocab_size: int
    dim: int


@dataclass
class AllocationScheme:
    """Search output: final dimension per field, with d = 0 meaning removal."""

    fields: list[FieldAllocation]
    removed: list[str]
    gate_snapshot: dict
    config_hash: str
    seed: int

    def __post_init__(self):
        removed = {f.name for f in self.fields if f.dim == 0}
        if removed != set(self.removed):
            raise ConfigError(
                f"removed list {sorted(self.removed)} inconsistent with zero-dim "
                f"fields {sorted(removed)}"
            )

    def dims(self):
        return {f.name: f.dim for f in self.fields}

    def surviving(self):
        return [f for f in self.fields if f.dim > 0]

    def embedding_params(self):
        return sum(f.vocab_size * f.dim for f in self.fields)

    def to_dict(self):
        return {
            "fields": [
                {"name": f.name, "vocab_size": f.vocab_size, "dim": f.dim}
                for f in self.fields
            ],
            "removed": list(self.removed),
            "gate_snapshot": self.gate_snapshot,
            "config_hash": self.config_hash,
            "seed": self.seed,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d):
        check_keys(d, {"fields", "removed", "gate_snapshot", "config_hash", "seed"},
                   {"fields"}, "allocation scheme")
        fields = []
        for i, fd in enumerate(d["fields"]):
            check_keys(fd, {"name", "vocab_size", "dim"}, {"name", "vocab_size", "dim"},
                       f"allocation field {i}")
            if fd["dim"] < 0 or fd["vocab_size"] < 1:
                raise ConfigError(f"allocation field {fd['name']!r}: bad dim or vocab_size")
            fields.append(FieldAllocation(fd["name"], int(fd["vocab_size"]), int(fd["dim"])))
        removed = d.get("removed")
        if removed is None:
            removed = [f.name for f in fields if f.dim == 0]
        return cls(
            fields=fields,
            removed=list(removed),
            gate_snapshot=d.get("gate_snapshot", {}),
            config_hash=d.get("config_hash", ""),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def uniform_allocation(schema, dim):
    """Every field at the same dimension; the no-search baseline."""
    if dim < 1:
        raise ConfigError(f"uniform allocation needs dim >= 1, got {dim}")
    fields = [FieldAllocation(fs.name, fs.vocab_size, int(dim)) for fs in schema]
    return AllocationScheme(fields=fields, removed=[], gate_snapshot={},
                            config_hash="", seed=0)


def _increment_fits(states, state, budget):
    if budget is None:
        return True
    if budget.kind == "total_dims":
        total = sum(st.used_dims for st in states)
        return total + 1 <= budget.value
    used, _ = param_counts(states)
    return used + state.field.vocab_size <= budget.value


def budget_remaining(field_states, config):
    """Headroom under the configured budget; never negative because
    expansion is pre-checked."""
    if config.budget is None:
        raise ConfigError("budget_remaining called without a configured budget")
    if config.budget.kind == "total_dims":
        current = sum(st.used_dims for st in field_states)
    else:
        current, _ = param_counts(field_states)
    return config.budget.value - current


def check_and_adjust(field_states, bank, config, rng, optimizer=None):
    """One controller pass: reduction first, then budget-aware expansion.

    Eligibility uses a snapshot of each field's weakest active gate taken
    on entry, so a field never shrinks and grows in the same pass. Budget
    checks use live totals, so dimensions freed by reduction become
    available to better fields immediately.
    """
    snapshot_min = []
    for i, st in enumerate(field_states):
        snapshot_min.append(float(bank.gate_values(i, st.used_dims).min()))

    actions = []
    for i, st in enumerate(field_states):
        g = bank.gate_values(i, st.used_dims)
        if g.min() < config.t_down:
            keep = max(int((g >= config.t_down).sum()), 1)
            if keep < st.used_dims:
                order = np.argsort(-g, kind="stable")
                prev = st.used_dims
                shrink(st, keep, order, optimizer)
                actions.append(
                    {"action": "shrink", "field": st.field.name, "from": prev, "to": keep}
                )

    order = sorted(range(len(field_states)), key=lambda i: (-snapshot_min[i], i))
    for i in order:
        if snapshot_min[i] <= config.t_up:
            continue
        st = field_states[i]
        if not _increment_fits(field_states, st, config.budget):
            continue
        prev = st.used_dims
        grow(st, rng, optimizer)
        actions.append(
            {"action": "grow", "field": st.field.name, "from": prev, "to": st.used_dims}
        )
    return actions


def finalize(field_states, bank, config):
    """Snapshot the gates of used dimensions and derive final dimensions.

    A dimension counts only if its gate is strictly above 0.5; a field
    whose count is zero is removed.
    """
    snapshot = {}
    fields = []
    removed = []
    for i, st in enumerate(field_states):
        g = bank.gate_values(i, st.used_dims)
        snapshot[st.field.name] = [float(v) for v in g]
        d_star = int((g > 0.5).sum())
        fields.append(FieldAllocation(st.field.name, st.field.vocab_size, d_star))
        if d_star == 0:
            removed.append(st.field.name)
    bank.snapshot = snapshot
    return AllocationScheme(
        fields=fields,
        removed=removed,
        gate_snapshot=snapshot,
        config_hash=config.config_hash(),
        seed=config.seed,
    )
