"""Federated multi-task hierarchical attention models for sensor time series."""

from ._core import (
    ConfigError,
    DataError,
    DimensionError,
    Error,
    IoError,
    SchemaError,
    classification_metrics,
    evaluate,
    predict,
    smape,
    synth,
    train,
    variants,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "Error",
    "IoError",
    "SchemaError",
    "classification_metrics",
    "evaluate",
    "predict",
    "smape",
    "synth",
    "train",
    "variants",
]
