"""Field-level embedding dimension search.

Every categorical field starts at one embedding dimension. During training
each dimension's importance is scored by a shuffle gate, dimensions grow or
shrink under the controller's thresholds and budget, and the surviving
allocation is used to retrain a compact model from scratch.
"""

from .datasets import (
    Batch,
    Dataset,
    FieldSchema,
    SyntheticFieldSpec,
    SyntheticSpec,
    batch_iter,
    gen_synthetic,
    load_csv,
    split,
    write_csv,
)
from .errors import ConfigError, DataError, DimGrowError, NumericError
from .netmodel import BackboneConfig, RetrainModel, SearchModel, build_retrain_model
from .searchctl import (
    AllocationScheme,
    Budget,
    OptimizerConfig,
    SearchConfig,
    uniform_allocation,
)
from .trainer import RetrainConfig, RunLog, auc, emit_report, run_retrain, run_search

__version__ = "0.1.0"

__all__ = [
    "AllocationScheme",
    "BackboneConfig",
    "Batch",
    "Budget",
    "ConfigError",
    "DataError",
    "Dataset",
    "DimGrowError",
    "FieldSchema",
    "NumericError",
    "OptimizerConfig",
    "RetrainConfig",
    "RetrainModel",
    "RunLog",
    "SearchConfig",
    "SearchModel",
    "SyntheticFieldSpec",
    "SyntheticSpec",
    "auc",
    "batch_iter",
    "build_retrain_model",
    "emit_report",
    "gen_synthetic",
    "load_csv",
    "run_retrain",
    "run_search",
    "split",
    "uniform_allocation",
    "write_csv",
]
