"""Growable per-field embedding tables with used vs allocated dimensions.

A field's table has allocated_dims columns but only the first used_dims
participate in the forward pass. Growth appends fresh parameters (or
re-activates previously shrunk ones); reduction reorders the used columns
by gate value and truncates, keeping allocated parameters intact for
possible reuse. Column k of the table, row k of the adapter, and gate k
always refer to the same logical dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import FieldSchema
from .diffcore import Tensor2, row_gather, slice_cols
from .errors import ConfigError

TABLE_INIT_STD = 0.01


def adapter_init_std(d_bb):
    return 1.0 / np.sqrt(d_bb)


@dataclass
class DynamicFieldState:
    field: FieldSchema
    table: Tensor2      # vocab_size x allocated_dims
    adapter: Tensor2    # allocated_dims x d_bb
    theta: Tensor2      # 1 x allocated_dims, shared with the gate bank
    used_dims: int
    allocated_dims: int

    def check_alignment(self):
        ok = (
            self.table.cols == self.adapter.rows == self.theta.cols == self.allocated_dims
            and 1 <= self.used_dims <= self.allocated_dims
        )
        if not ok:
            raise ConfigError(
                f"field {self.field.name!r}: misaligned state "
                f"(table {self.table.shape}, adapter {self.adapter.shape}, "
                f"theta {self.theta.shape}, used {self.used_dims}, "
                f"allocated {self.allocated_dims})"
            )


def init_field(schema, d_bb, rng):
    """Start a field at one used and one allocated dimension, gate at 0.5."""
    table = Tensor2(rng.normal(0.0, TABLE_INIT_STD, (schema.vocab_size, 1)))
    adapter = Tensor2(rng.normal(0.0, adapter_init_std(d_bb), (1, d_bb)))
    theta = Tensor2(np.zeros((1, 1)))
    return DynamicFieldState(
        field=schema, table=table, adapter=adapter, theta=theta,
        used_dims=1, allocated_dims=1,
    )


def lookup(state, idx):
    """Gather embedding rows and keep the first used_dims columns."""
    return slice_cols(row_gather(state.table, idx), state.used_dims)


def _append_col(t, col):
    t.values = np.concatenate([t.values, col], axis=1)
    t.grad = np.concatenate([t.grad, np.zeros_like(col)], axis=1)


def _append_row(t, row):
    t.values = np.concatenate([t.values, row], axis=0)
    t.grad = np.concatenate([t.grad, np.zeros_like(row)], axis=0)


def grow(state, rng, optimizer=None):
    """Add one used dimension, allocating new parameters only when needed.

    Re-activating a previously shrunk dimension reuses its stored table
    column and adapter row but resets its gate parameter to 0 (gate 0.5)
    and its optimizer moments, so the dimension gets a fresh evaluation.
    """
    state.used_dims += 1
    if state.used_dims > state.allocated_dims:
        d_bb = state.adapter.cols
        _append_col(state.table, rng.normal(0.0, TABLE_INIT_STD, (state.field.vocab_size, 1)))
        _append_row(state.adapter, rng.normal(0.0, adapter_init_std(d_bb), (1, d_bb)))
        _append_col(state.theta, np.zeros((1, 1)))
        state.allocated_dims += 1
    else:
        k = state.used_dims - 1
        state.theta.values[0, k] = 0.0
        if optimizer is not None:
            optimizer.reset_slices(state.table, axis=1, index=k)
            optimizer.reset_slices(state.adapter, axis=0, index=k)
            optimizer.reset_slices(state.theta, axis=1, index=k)
    state.check_alignment()


def shrink(state, new_used, gate_order, optimizer=None):
    """Reorder the used dimensions by gate_order, then truncate to new_used.

    gate_order must be a permutation of range(used_dims), highest gate
    first, so the dimensions that survive truncation are the high-gate
    ones. Allocated parameters beyond new_used stay intact.
    """
    if new_used < 1:
        raise ConfigError("used dimensions cannot drop below 1")
    if not new_used < state.used_dims:
        raise ConfigError(f"shrink needs new_used < used_dims, got {new_used} >= {state.used_dims}")
    perm = np.asarray(gate_order, dtype=np.int64)
    u = state.used_dims
    if perm.shape != (u,) or not np.array_equal(np.sort(perm), np.arange(u)):
        raise ConfigError(f"gate_order must be a permutation of range({u}), got {gate_order}")

    state.table.values[:, :u] = state.table.values[:, perm]
    state.table.grad[:, :u] = state.table.grad[:, perm]
    state.adapter.values[:u, :] = state.adapter.values[perm, :]
    state.adapter.grad[:u, :] = state.adapter.grad[perm, :]
    state.theta.values[:, :u] = state.theta.values[:, perm]
    state.theta.grad[:, :u] = state.theta.grad[:, perm]
    if optimizer is not None:
        optimizer.permute_slices(state.table, axis=1, perm=perm)
        optimizer.permute_slices(state.adapter, axis=0, perm=perm)
        optimizer.permute_slices(state.theta, axis=1, perm=perm)
    state.used_dims = int(new_used)
    state.check_alignment()


def param_counts(states):
    """(used, allocated) embedding parameter totals: sum of vocab * dims."""
    used = sum(st.field.vocab_size * st.used_dims for st in states)
    allocated = sum(st.field.vocab_size * st.allocated_dims for st in states)
    return used, allocated
