"""Exception taxonomy and strict-parsing helpers shared across modules."""


class DimGrowError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DimGrowError):
    """Invalid configuration, shapes, or API misuse. CLI exit code 2."""


class DataError(DimGrowError):
    """Malformed or out-of-contract data. CLI exit code 2."""


class NumericError(DimGrowError):
    """Numerical failure during training, e.g. a non-finite loss. CLI exit code 3."""


def check_keys(mapping, allowed, required, where):
    """Reject unknown keys and report missing ones; typos must not pass silently."""
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed keys are {sorted(allowed)}")
    missing = sorted(set(required) - set(mapping))
    if missing:
        raise ConfigError(f"{where}: missing required keys {missing}")
