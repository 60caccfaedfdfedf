"""Marginal and joint outlier detection for mixed discrete/continuous tables."""

from .data import (
    DetectionConfig,
    DetectionResult,
    IngestionError,
    MixedDataset,
    MixodError,
    SchemaError,
    load_csv,
    write_csv,
)
from .pipeline import PipelineConfig, detect

__version__ = "0.1.0"

__all__ = [
    "DetectionConfig",
    "DetectionResult",
    "IngestionError",
    "MixedDataset",
    "MixodError",
    "PipelineConfig",
    "SchemaError",
    "__version__",
    "detect",
    "load_csv",
    "write_csv",
]
