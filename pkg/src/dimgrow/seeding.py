"""Named deterministic RNG substreams derived from one top-level seed.

Every source of randomness in a run (data split, parameter init, column
shuffling, batch order, synthetic generation) pulls from its own stream so
components can be tested in isolation while whole runs replay exactly.
"""

import numpy as np

from .errors import ConfigError

_STREAMS = {
    "split": 0,
    "init": 1,
    "shuffle": 2,
    "batch": 3,
    "synth": 4,
}


def substream(seed, name, *extra):
    """Return a Generator for the named stream, optionally keyed further (e.g. epoch)."""
    if name not in _STREAMS:
        raise ConfigError(f"unknown rng stream {name!r}")
    key = (_STREAMS[name],) + tuple(int(x) for x in extra)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
