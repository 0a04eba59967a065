"""Multilevel weighted support vector machines for large and imbalanced data."""

from .config import Config, ConfigError
from .data import Dataset, gen_imbalanced_mixture, gen_synthetic, kfold_split, load_csv, save_csv
from .driver import (
    TrainedClassifier, cross_validate, load_model, mlsvm_predict, mlsvm_train, save_model,
)
from .modelsel import PerformanceReport, compute_metrics

__all__ = [
    "Config", "ConfigError", "Dataset", "PerformanceReport", "TrainedClassifier",
    "compute_metrics", "cross_validate", "gen_imbalanced_mixture", "gen_synthetic",
    "kfold_split", "load_csv", "load_model", "mlsvm_predict", "mlsvm_train", "save_csv",
    "save_model",
]

__version__ = "0.1.0"
