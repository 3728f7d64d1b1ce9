import numpy as np
import pytest

from rvae.data import FeatureSpec, MixedTable, TableSchema
from rvae.model import build_networks
from rvae.nn import Rng


@pytest.fixture
def mixed_schema():
    return TableSchema((
        FeatureSpec("a", "real"),
        FeatureSpec("b", "categorical", ("x", "y", "z")),
        FeatureSpec("c", "real"),
        FeatureSpec("d", "categorical", ("p", "q")),
    ))


@pytest.fixture
def real_schema():
    return TableSchema((FeatureSpec("u", "real"), FeatureSpec("v", "real")))


def random_batch(schema, n, seed):
    """Standardized-looking random rows for a schema."""
    rng = Rng(seed)
    reals = rng.normal((n, len(schema.real_features)))
    cats = np.zeros((n, len(schema.cat_features)), dtype=np.int64)
    for j, feat in enumerate(schema.cat_features):
        cats[:, j] = rng.integers(0, feat.cardinality, size=n)
    return reals, cats


def random_table(schema, n, seed):
    reals, cats = random_batch(schema, n, seed)
    return MixedTable(schema=schema, reals=reals * 2.0 + 1.0, cats=cats, stats=None)


def tiny_networks(schema, seed, latent=3, hidden=8, emb=4, amortized=False):
    return build_networks(schema, latent_dim=latent, hidden_dim=hidden,
                          embedding_dim=emb, rng=Rng(seed), amortized=amortized)


def finite_difference(loss_fn, params, h=1e-5):
    """Central-difference gradients of a scalar loss over a dict of tensors."""
    grads = {}
    for name, tensor in params.items():
        flat = tensor.value.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            g[i] = (up - down) / (2.0 * h)
        grads[name] = g.reshape(tensor.value.shape)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-6):
    for name, num in numeric.items():
        ana = analytic[name]
        err = np.abs(ana - num)
        tol = np.maximum(rtol * np.maximum(np.abs(ana), np.abs(num)), atol)
        assert np.all(err <= tol), (
            f"gradient mismatch for {name}: max err {err.max():.3e} vs tol {tol[err.argmax() // 1]}"
            if err.ndim == 1 else f"gradient mismatch for {name}: max err {err.max():.3e}")
