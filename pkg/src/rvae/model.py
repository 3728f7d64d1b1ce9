"""The probabilistic core: per-feature likelihoods, outlier components,
KL terms, the VAE and gated-mixture ELBOs, and the closed-form update for
the per-cell clean probability.

Every real feature is modelled as N(x | m_d(z), sigma_d) with a learned
per-feature sigma_d; every categorical feature as a softmax over logits
a_d(z). The outlier side is a z-independent broad Gaussian N(0, S) for
reals and a uniform 1/C_d for categoricals. A per-cell gate probability
pi mixes the two; its coordinate-ascent optimum is
sigmoid(r + logit(alpha)) with r the expected log density ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine
from .data import REAL, EmbeddingBank, FeatureSpec, TableSchema, encode_rows
from .engine import Tensor
from .errors import ConfigError
from .nn import DenseNet, Rng

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 4.0
R_CLAMP = 30.0


@dataclass(frozen=True)
class OutlierComponents:
    """Broad-Gaussian scale for reals (a standard deviation, > 1);
    categoricals get uniform mass 1/C_d."""

    real_scale: float = 2.0

    def __post_init__(self):
        if not self.real_scale > 1.0:
            raise ConfigError(f"outlier scale must exceed 1, got {self.real_scale}")

    def log_lik_real(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        s = self.real_scale
        return -HALF_LOG_2PI - math.log(s) - 0.5 * (x / s) ** 2

    def log_lik_cat(self, cardinality: int) -> float:
        return -math.log(cardinality)


@dataclass(frozen=True)
class GateParams:
    """Prior clean probability plus the per-cell variational probabilities."""

    alpha: float
    pi: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if np.any(self.pi < 0.0) or np.any(self.pi > 1.0):
            raise ConfigError("pi values must lie in [0, 1]")


class Encoder:
    """Encoded row -> hidden -> (posterior mean, log std diag), both length K."""

    def __init__(self, input_dim: int, hidden_dim: int, latent_dim: int, rng: Rng | None):
        self.latent_dim = latent_dim
        self.net = DenseNet([input_dim, hidden_dim, 2 * latent_dim], ["relu", "identity"], rng, name="encoder")

    def latent(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        out = self.net.apply(x)
        k = self.latent_dim
        mu = engine.slice_cols(out, 0, k)
        log_sigma = engine.clip(engine.slice_cols(out, k, 2 * k), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return mu, log_sigma, engine.exp(log_sigma)

    def latent_values(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = _net_values(self.net, x)
        k = self.latent_dim
        log_sigma = np.clip(out[:, k:2 * k], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return out[:, :k], np.exp(log_sigma)

    def params(self) -> dict[str, Tensor]:
        return self.net.params()


class Decoder:
    """Shared trunk z -> hidden plus per-feature linear heads.

    Real features get a mean head and a learned scalar log sigma_d;
    categorical features get a logit head of their cardinality.
    """

    def __init__(self, schema: TableSchema, latent_dim: int, hidden_dim: int, rng: Rng | None):
        self.schema = schema
        self.latent_dim = latent_dim
        self.trunk = DenseNet([latent_dim, hidden_dim], ["relu"], rng, name="decoder.trunk")
        self.real_heads: dict[str, tuple[Tensor, Tensor]] = {}
        self.log_sigma: dict[str, Tensor] = {}
        self.cat_heads: dict[str, tuple[Tensor, Tensor]] = {}
        scale = math.sqrt(1.0 / hidden_dim)
        for feat in schema.features:
            if feat.kind == REAL:
                w = np.zeros((hidden_dim, 1)) if rng is None else rng.normal((hidden_dim, 1)) * scale
                self.real_heads[feat.name] = (Tensor(w), Tensor(np.zeros(1)))
                self.log_sigma[feat.name] = Tensor(np.zeros(1))
            else:
                w = np.zeros((hidden_dim, feat.cardinality)) if rng is None else rng.normal((hidden_dim, feat.cardinality)) * scale
                self.cat_heads[feat.name] = (Tensor(w), Tensor(np.zeros(feat.cardinality)))

    def hidden(self, z: Tensor) -> Tensor:
        return self.trunk.apply(z)

    def real_mean(self, h: Tensor, name: str) -> Tensor:
        w, b = self.real_heads[name]
        return engine.add(engine.matmul(h, w), b)

    def cat_logits(self, h: Tensor, name: str) -> Tensor:
        w, b = self.cat_heads[name]
        return engine.add(engine.matmul(h, w), b)

    def clipped_log_sigma(self, name: str) -> Tensor:
        return engine.clip(self.log_sigma[name], LOG_SIGMA_MIN, LOG_SIGMA_MAX)

    def sigma_value(self, name: str) -> float:
        return float(np.exp(np.clip(self.log_sigma[name].value, LOG_SIGMA_MIN, LOG_SIGMA_MAX))[0])

    def params(self) -> dict[str, Tensor]:
        out = dict(self.trunk.params())
        for feat in self.schema.features:
            name = feat.name
            if feat.kind == REAL:
                w, b = self.real_heads[name]
                out[f"decoder.real.{name}.W"] = w
                out[f"decoder.real.{name}.b"] = b
                out[f"decoder.real.{name}.log_sigma"] = self.log_sigma[name]
            else:
                w, b = self.cat_heads[name]
                out[f"decoder.cat.{name}.W"] = w
                out[f"decoder.cat.{name}.b"] = b
        return out


@dataclass
class RvaeNetworks:
    encoder: Encoder
    decoder: Decoder
    embeddings: EmbeddingBank
    pi_encoder: DenseNet | None = None

    def params(self) -> dict[str, Tensor]:
        out = dict(self.encoder.params())
        out.update(self.decoder.params())
        out.update(self.embeddings.params())
        if self.pi_encoder is not None:
            out.update(self.pi_encoder.params())
        return out


def build_networks(schema: TableSchema, latent_dim: int, hidden_dim: int,
                   embedding_dim: int, rng: Rng | None, amortized: bool = False) -> RvaeNetworks:
    """Fresh networks; random draws happen in a fixed order for determinism."""
    from .data import encoded_dim

    input_dim = encoded_dim(schema, embedding_dim)
    encoder = Encoder(input_dim, hidden_dim, latent_dim, rng)
    decoder = Decoder(schema, latent_dim, hidden_dim, rng)
    embeddings = EmbeddingBank(schema, embedding_dim, rng)
    pi_encoder = None
    if amortized:
        pi_encoder = DenseNet([input_dim, hidden_dim, schema.n_features], ["relu", "identity"], rng, name="pi")
    return RvaeNetworks(encoder, decoder, embeddings, pi_encoder)


def _net_values(net: DenseNet, x: np.ndarray) -> np.ndarray:
    out = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        out = out @ layer.W.value + layer.b.value
        if layer.activation == "relu":
            out = np.maximum(out, 0.0)
    return out


# ---------------------------------------------------------------------------
# closed-form pieces
# ---------------------------------------------------------------------------

def gaussian_log_pdf(x, mean, std):
    x = np.asarray(x, dtype=np.float64)
    return -HALF_LOG_2PI - np.log(std) - 0.5 * ((x - mean) / std) ** 2


def kl_gaussian(mu, sigma) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return float(0.5 * np.sum(mu ** 2 + sigma ** 2 - 1.0 - 2.0 * np.log(sigma)))


def kl_bernoulli(pi, alpha):
    """KL(Bernoulli(pi) || Bernoulli(alpha)) with the 0*ln(0) := 0 convention."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    pi_arr = np.asarray(pi, dtype=np.float64)
    if np.any(pi_arr < 0.0) or np.any(pi_arr > 1.0):
        raise ValueError("pi must lie in [0, 1]")
    out = np.zeros_like(pi_arr)
    nz = pi_arr > 0.0
    out[nz] += pi_arr[nz] * np.log(pi_arr[nz] / alpha)
    lt1 = pi_arr < 1.0
    out[lt1] += (1.0 - pi_arr[lt1]) * np.log((1.0 - pi_arr[lt1]) / (1.0 - alpha))
    return float(out) if np.isscalar(pi) or np.ndim(pi) == 0 else out


def pi_update(r, alpha):
    """Coordinate-ascent optimum of the gate probability.

    Equals sigmoid(r + logit(alpha)), evaluated in odds form
    alpha*e^r / (alpha*e^r + 1 - alpha) so that pi_update(0, alpha) is
    exactly alpha. r is clamped to +-30 first; the sigmoid saturates far
    earlier, and the clamp keeps downstream log scores finite.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    r_arr = np.clip(np.asarray(r, dtype=np.float64), -R_CLAMP, R_CLAMP)
    odds = alpha * np.exp(r_arr)
    out = odds / (odds + (1.0 - alpha))
    return float(out) if np.ndim(r) == 0 else out


# ---------------------------------------------------------------------------
# per-cell likelihood surface
# ---------------------------------------------------------------------------

def log_lik_clean(decoder: Decoder, z: np.ndarray, cell, feature: FeatureSpec) -> float:
    """Log density (real) or log probability (categorical) of one cell given z."""
    h = _net_values(decoder.trunk, np.atleast_2d(np.asarray(z, dtype=np.float64)))
    if feature.kind == REAL:
        w, b = decoder.real_heads[feature.name]
        mean = float((h @ w.value + b.value)[0, 0])
        return float(gaussian_log_pdf(float(cell), mean, decoder.sigma_value(feature.name)))
    w, b = decoder.cat_heads[feature.name]
    logits = (h @ w.value + b.value)[0]
    shifted = logits - logits.max()
    return float(shifted[int(cell)] - np.log(np.exp(shifted).sum()))


def log_lik_outlier(components: OutlierComponents, cell, feature: FeatureSpec) -> float:
    if feature.kind == REAL:
        return float(components.log_lik_real(float(cell)))
    return components.log_lik_cat(feature.cardinality)


def outlier_logliks(components: OutlierComponents, schema: TableSchema,
                    reals: np.ndarray, cats: np.ndarray) -> np.ndarray:
    """(B, D) matrix of outlier-component log likelihoods, schema order."""
    n = reals.shape[0] if reals.size else cats.shape[0]
    out = np.empty((n, schema.n_features))
    for column, feat in enumerate(schema.features):
        kind, slot = schema.kind_index(column)
        if kind == REAL:
            out[:, column] = components.log_lik_real(reals[:, slot])
        else:
            out[:, column] = components.log_lik_cat(feat.cardinality)
    return out


# ---------------------------------------------------------------------------
# ELBOs (tape expressions over batches; one z sample per expectation)
# ---------------------------------------------------------------------------

def forward_elbo_parts(nets: RvaeNetworks, schema: TableSchema, reals: np.ndarray,
                       cats: np.ndarray, eps: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    """Shared forward pass: encoded input, clean log likelihoods (B, D), KL(z)."""
    x_enc = encode_rows(schema, reals, cats, nets.embeddings)
    mu, log_sigma, sigma = nets.encoder.latent(x_enc)
    z = engine.add(mu, engine.mul(sigma, eps))
    h = nets.decoder.hidden(z)
    n = z.shape[0]
    cols: list[Tensor] = []
    for column, feat in enumerate(schema.features):
        kind, slot = schema.kind_index(column)
        if kind == REAL:
            x_col = reals[:, slot][:, None]
            mean = nets.decoder.real_mean(h, feat.name)
            log_sigma_d = nets.decoder.clipped_log_sigma(feat.name)
            resid = engine.mul(engine.sub(engine._wrap(x_col), mean), engine.exp(engine.neg(log_sigma_d)))
            ll = engine.sub(engine.sub(engine._wrap(-HALF_LOG_2PI), log_sigma_d),
                            engine.mul(engine.mul(resid, resid), 0.5))
            cols.append(ll)
        else:
            logits = nets.decoder.cat_logits(h, feat.name)
            ll = engine.gather_cols(engine.log_softmax(logits), cats[:, slot])
            cols.append(engine.reshape(ll, (n, 1)))
    ll_clean = engine.concat(cols, axis=1)
    kl_z = engine.mul(engine.tsum(
        engine.sub(engine.sub(engine.add(engine.mul(mu, mu), engine.mul(sigma, sigma)), 1.0),
                   engine.mul(log_sigma, 2.0)),
        axis=1), 0.5)
    return x_enc, ll_clean, kl_z


def _draw_eps(rng: Rng | None, eps, n: int, latent_dim: int) -> np.ndarray:
    if eps is not None:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != (n, latent_dim):
            raise ValueError(f"eps shape {eps.shape} does not match ({n}, {latent_dim})")
        return eps
    if rng is None:
        raise ValueError("provide either eps or rng")
    return rng.normal((n, latent_dim))


def elbo_vae(nets: RvaeNetworks, schema: TableSchema, reals: np.ndarray, cats: np.ndarray,
             eps: np.ndarray | None = None, rng: Rng | None = None) -> Tensor:
    """Per-row ELBO (B,): sum_d E_q[log p(x_d | z)] - KL(q(z|x) || p(z))."""
    n = reals.shape[0] if reals.size else cats.shape[0]
    eps = _draw_eps(rng, eps, n, nets.encoder.latent_dim)
    _, ll_clean, kl_z = forward_elbo_parts(nets, schema, reals, cats, eps)
    return engine.sub(engine.tsum(ll_clean, axis=1), kl_z)


def elbo_rvae(nets: RvaeNetworks, schema: TableSchema, reals: np.ndarray, cats: np.ndarray,
              components: OutlierComponents, pi: np.ndarray, alpha: float,
              eps: np.ndarray | None = None, rng: Rng | None = None) -> Tensor:
    """Per-row gated ELBO (B,) with pi treated as constants.

    sum_d [pi * E_q log p(x_d|z) + (1 - pi) * log p0(x_d)]
      - KL(q(z|x) || p(z)) - sum_d KL(Bernoulli(pi) || Bernoulli(alpha)).

    The gradient w.r.t. decoder parameters through cell d carries the
    factor pi_nd, which is the down-weighting mechanism.
    """
    n = reals.shape[0] if reals.size else cats.shape[0]
    eps = _draw_eps(rng, eps, n, nets.encoder.latent_dim)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (n, schema.n_features):
        raise ValueError(f"pi shape {pi.shape} does not match ({n}, {schema.n_features})")
    _, ll_clean, kl_z = forward_elbo_parts(nets, schema, reals, cats, eps)
    ll_out = outlier_logliks(components, schema, reals, cats)
    mix = engine.tsum(engine.add(engine.mul(ll_clean, pi), (1.0 - pi) * ll_out), axis=1)
    kl_w = kl_bernoulli(pi, alpha).sum(axis=1)
    return engine.sub(engine.sub(mix, kl_z), engine._wrap(kl_w))


def kl_bernoulli_from_logits(logits: Tensor, alpha: float) -> Tensor:
    """Per-cell KL(Bernoulli(sigmoid(w)) || Bernoulli(alpha)) on the tape.

    Uses log pi = -softplus(-w) and log(1 - pi) = -softplus(w) so saturated
    gates stay finite under differentiation.
    """
    pi = engine.sigmoid(logits)
    log_pi = engine.neg(engine.softplus(engine.neg(logits)))
    log_1m = engine.neg(engine.softplus(logits))
    t1 = engine.mul(pi, engine.sub(log_pi, math.log(alpha)))
    t2 = engine.mul(engine.sub(engine._wrap(1.0), pi), engine.sub(log_1m, math.log(1.0 - alpha)))
    return engine.add(t1, t2)


def rvae_step_objective(nets: RvaeNetworks, schema: TableSchema, reals: np.ndarray,
                        cats: np.ndarray, components: OutlierComponents, alpha: float,
                        eps: np.ndarray, amortized: bool,
                        pi_override: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Per-row gated ELBO for one training step, plus the pi values used.

    Coordinate mode infers pi in closed form from the same single z sample
    and treats it as constant for the gradient; amortized mode takes pi
    from the gate encoder, so gradients flow into it. ``pi_override``
    substitutes fixed constants in either mode (test hook).
    """
    x_enc, ll_clean, kl_z = forward_elbo_parts(nets, schema, reals, cats, eps)
    ll_out = outlier_logliks(components, schema, reals, cats)
    if amortized and pi_override is None:
        if nets.pi_encoder is None:
            raise ConfigError("amortized objective requires a pi encoder")
        logits = nets.pi_encoder.apply(x_enc)
        pi_t = engine.sigmoid(logits)
        mix = engine.tsum(engine.add(engine.mul(pi_t, ll_clean),
                                     engine.mul(engine.sub(engine._wrap(1.0), pi_t), ll_out)), axis=1)
        kl_w = engine.tsum(kl_bernoulli_from_logits(logits, alpha), axis=1)
        per_row = engine.sub(engine.sub(mix, kl_z), kl_w)
        return per_row, pi_t.value
    if pi_override is not None:
        pi = np.broadcast_to(np.asarray(pi_override, dtype=np.float64),
                             (ll_out.shape[0], schema.n_features)).copy()
    else:
        r = ll_clean.value - ll_out
        pi = pi_update(r, alpha)
    mix = engine.tsum(engine.add(engine.mul(ll_clean, pi), (1.0 - pi) * ll_out), axis=1)
    kl_w = kl_bernoulli(pi, alpha).sum(axis=1)
    per_row = engine.sub(engine.sub(mix, kl_z), engine._wrap(kl_w))
    return per_row, pi


# ---------------------------------------------------------------------------
# plain-value forward paths (scoring and repair; no tape)
# ---------------------------------------------------------------------------

def encode_values(schema: TableSchema, reals: np.ndarray, cats: np.ndarray,
                  bank: EmbeddingBank, zero_mask: np.ndarray | None = None) -> np.ndarray:
    parts = []
    if reals.shape[1]:
        parts.append(np.asarray(reals, dtype=np.float64))
    for j, feat in enumerate(schema.cat_features):
        emb = bank.tensors[feat.name].value[cats[:, j]]
        if zero_mask is not None:
            emb = emb * (~zero_mask[:, j]).astype(np.float64)[:, None]
        parts.append(emb)
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)


@dataclass
class DecodedValues:
    real_means: np.ndarray            # (B, n_real)
    real_stds: np.ndarray             # (n_real,)
    cat_probs: dict[str, np.ndarray]  # name -> (B, C_d)


def decode_values(decoder: Decoder, z: np.ndarray) -> DecodedValues:
    from .nn import softmax

    h = _net_values(decoder.trunk, z)
    schema = decoder.schema
    n_real = len(schema.real_features)
    means = np.empty((z.shape[0], n_real))
    stds = np.empty(n_real)
    for j, feat in enumerate(schema.real_features):
        w, b = decoder.real_heads[feat.name]
        means[:, j] = (h @ w.value + b.value)[:, 0]
        stds[j] = decoder.sigma_value(feat.name)
    probs = {}
    for feat in schema.cat_features:
        w, b = decoder.cat_heads[feat.name]
        probs[feat.name] = softmax(h @ w.value + b.value, axis=1)
    return DecodedValues(real_means=means, real_stds=stds, cat_probs=probs)


def clean_logliks_values(decoder: Decoder, decoded: DecodedValues,
                         reals: np.ndarray, cats: np.ndarray) -> np.ndarray:
    """(B, D) clean-component log likelihoods of observed cells, schema order."""
    schema = decoder.schema
    n = reals.shape[0] if reals.size else cats.shape[0]
    out = np.empty((n, schema.n_features))
    for column, feat in enumerate(schema.features):
        kind, slot = schema.kind_index(column)
        if kind == REAL:
            out[:, column] = gaussian_log_pdf(reals[:, slot], decoded.real_means[:, slot],
                                              decoded.real_stds[slot])
        else:
            p = decoded.cat_probs[feat.name][np.arange(n), cats[:, slot]]
            out[:, column] = np.log(np.maximum(p, 1e-300))
    return out
