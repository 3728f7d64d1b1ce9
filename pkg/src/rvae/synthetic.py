"""Seeded synthetic mixed-type tables for experiments and tests.

Rows come from a two-component latent mixture: real features are
component-dependent Gaussians, categorical features are component-skewed
discrete draws, so cross-feature context carries signal a cleaner can
exploit.
"""

from __future__ import annotations

import numpy as np

from .data import FeatureSpec, MixedTable, TableSchema
from .nn import Rng

DEFAULT_REAL_MEANS = np.array([
    [-2.0, -1.0, 1.0, 2.0],
    [2.0, 1.0, -1.0, -2.0],
])
DEFAULT_REAL_STDS = np.array([0.7, 0.5, 0.5, 0.7])
DEFAULT_CAT_TABLES = (
    np.array([[0.80, 0.10, 0.10], [0.10, 0.10, 0.80]]),
    np.array([[0.70, 0.15, 0.10, 0.05], [0.05, 0.10, 0.15, 0.70]]),
)


def mixture_table(n_rows: int, seed: int, n_real: int = 4, n_cat: int = 2) -> MixedTable:
    """Two-component mixture data: ``n_real`` real features, ``n_cat``
    categorical features with skewed marginals (both at most the sizes of
    the built-in parameter tables)."""
    if not 1 <= n_real <= DEFAULT_REAL_MEANS.shape[1] or not 0 <= n_cat <= len(DEFAULT_CAT_TABLES):
        raise ValueError("unsupported synthetic shape")
    rng = Rng(seed)
    component = (rng.uniform(n_rows) < 0.5).astype(int)
    reals = (DEFAULT_REAL_MEANS[component][:, :n_real]
             + DEFAULT_REAL_STDS[None, :n_real] * rng.normal((n_rows, n_real)))
    cats = np.zeros((n_rows, n_cat), dtype=np.int64)
    for j in range(n_cat):
        probs = DEFAULT_CAT_TABLES[j][component]
        u = rng.uniform(n_rows)
        cats[:, j] = np.clip((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1),
                             0, probs.shape[1] - 1)
    features = [FeatureSpec(name=f"x{j}", kind="real") for j in range(n_real)]
    for j in range(n_cat):
        cards = DEFAULT_CAT_TABLES[j].shape[1]
        features.append(FeatureSpec(name=f"c{j}", kind="categorical",
                                    categories=tuple(f"k{i}" for i in range(cards))))
    schema = TableSchema(tuple(features))
    return MixedTable(schema=schema, reals=reals, cats=cats, stats=None)
