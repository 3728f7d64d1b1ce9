"""Cell-level outlier detection and repair for mixed-type tabular data.

A gated variational autoencoder learns the clean data distribution while
explicitly estimating, per cell, the probability that the value is clean;
those probabilities drive outlier scores and several repair strategies.
Ships with the corruption processes and metrics used to benchmark it and
a marginal-distribution baseline.
"""

__version__ = "0.1.0"

from .data import (ColumnStats, EmbeddingBank, FeatureSpec, MixedTable,  # noqa: F401
                   TableSchema, load_csv, standardize)
from .train import RvaeModel, TrainConfig, load_model, save_model, train  # noqa: F401
