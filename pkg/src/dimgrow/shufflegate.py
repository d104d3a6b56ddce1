"""Dimension-wise shuffling, learnable gates, and the L1 gate penalty.

Each embedding dimension gets a gate g = sigmoid(temperature * theta).
During training, a column is mixed with a within-batch shuffled copy of
itself: g * orig + (1 - g) * shuffled. The shuffled branch carries no
gradient, so the gate learns how costly the perturbation is, and the L1
penalty pushes gates of unhelpful dimensions toward zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    Tensor2,
    add,
    cmul,
    gate_mix,
    scale,
    sigmoid,
    sigmoid_values,
    slice_cols,
    stop_gradient,
    sum_all,
)
from .errors import ConfigError

DEFAULT_TEMPERATURE = 5.0


def shuffle_columns(t, rng):
    """Independently permute each column of a [B x D] tensor across the batch.

    Implemented as per-column argsort of i.i.d. uniforms; the permutation
    matrices are never materialized. Returns a fresh constant tensor, to be
    wrapped in stop_gradient by the caller.
    """
    b, d = t.shape
    r = rng.random((d, b))
    perm = np.argsort(r, axis=1)
    shuffled = np.take_along_axis(t.values.T, perm, axis=1).T
    return Tensor2(shuffled)


class GateBank:
    """Per-field gate parameter rows, one entry per allocated dimension."""

    def __init__(self, temperature=DEFAULT_TEMPERATURE):
        self.temperature = float(temperature)
        self.thetas: list[Tensor2] = []
        self.snapshot = None

    def add_field(self, theta):
        if theta.rows != 1:
            raise ConfigError(f"gate parameters must be a 1 x d row, got {theta.shape}")
        self.thetas.append(theta)
        return len(self.thetas) - 1

    @property
    def num_fields(self):
        return len(self.thetas)

    def gate_values(self, field, used=None):
        """Gate values sigmoid(temperature * theta) as a plain 1-D array."""
        theta = self.thetas[field].values[0]
        if used is not None:
            if not 1 <= used <= theta.shape[0]:
                raise ConfigError(f"field {field}: used={used} exceeds {theta.shape[0]} gates")
            theta = theta[:used]
        return sigmoid_values(self.temperature * theta)

    def gate_node(self, field, used):
        """Differentiable [1 x used] gate row for the current graph."""
        theta = self.thetas[field]
        if not 1 <= used <= theta.cols:
            raise ConfigError(f"field {field}: used={used} exceeds {theta.cols} gates")
        return sigmoid(scale(slice_cols(theta, used), self.temperature))


def apply_gate(orig, bank, field, rng):
    """Mix a [B x d] embedding with its column-shuffled copy under the field's gates."""
    gates = bank.gate_node(field, orig.cols)
    shuffled = stop_gradient(shuffle_columns(orig, rng))
    return gate_mix(orig, shuffled, gates)


def gate_regularizer(bank, used_dims, alpha, decayed=True):
    """L1 penalty over the gates of used dimensions, as a scalar graph node.

    The decayed form weighs gate k (1-based) by 1/(k+1), letting deeper
    dimensions grow under weaker pressure. Gates are positive, so |g| = g.
    Returns None when alpha == 0.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return None
    total = None
    for field, used in enumerate(used_dims):
        g = bank.gate_node(field, used)
        if decayed:
            w = 1.0 / (np.arange(1, used + 1) + 1.0)
            term = sum_all(cmul(g, w.reshape(1, -1)))
        else:
            term = sum_all(g)
        total = term if total is None else add(total, term)
    return scale(total, alpha)


@dataclass(frozen=True)
class PolarizationProbe:
    """One gate-movement hypothesis for the polarization tests.

    alpha is the penalty strength, epsilon_bound caps how much the task
    loss can react to replacing the dimension's values, and
    expected_direction states which way the gate must move.
    """

    alpha: float
    epsilon_bound: float
    expected_direction: str

    def __post_init__(self):
        if self.expected_direction not in ("toward_zero", "toward_one"):
            raise ConfigError(
                f"expected_direction must be toward_zero or toward_one,"
                f" got {self.expected_direction!r}"
            )
