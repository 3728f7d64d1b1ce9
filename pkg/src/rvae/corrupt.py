"""Ground-truth-generating noise injection for mixed-type tables.

Two-step cell selection: a fraction of rows is drawn, and inside every
selected row a fraction of features is drawn independently. Real cells
get additive noise in raw (pre-standardization) units with scales tied to
the clean column std; categorical cells are resampled from the tempered
marginal distribution with the clean category excluded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import REAL, MixedTable
from .errors import ConfigError, DataFormatError
from .nn import Rng

RECORD_MAGIC = "rvae-corruption-record"


@dataclass(frozen=True)
class GaussianNoise:
    mu: float = 0.0
    k: float = 5.0  # scale multiplier on the clean column std

    def draw(self, sigma_hat: float, rng: Rng, size: int) -> np.ndarray:
        return self.mu + self.k * sigma_hat * rng.normal(size)


@dataclass(frozen=True)
class LaplaceNoise:
    mu: float = 0.0
    k: float = 4.0

    def draw(self, sigma_hat: float, rng: Rng, size: int) -> np.ndarray:
        return rng.gen.laplace(self.mu, self.k * sigma_hat, size)


@dataclass(frozen=True)
class LogNormalNoise:
    mu: float = 0.0
    k: float = 0.75

    def draw(self, sigma_hat: float, rng: Rng, size: int) -> np.ndarray:
        # the additive term itself is log-normal: exp(N(mu, k * sigma_hat))
        return np.exp(self.mu + self.k * sigma_hat * rng.normal(size))


@dataclass(frozen=True)
class GaussianMixtureNoise:
    components: tuple[tuple[float, float, float], ...] = ((-0.5, 3.0, 0.6), (0.5, 3.0, 0.4))

    def __post_init__(self):
        weights = [w for _, _, w in self.components]
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError("mixture weights must sum to 1")

    def draw(self, sigma_hat: float, rng: Rng, size: int) -> np.ndarray:
        weights = np.array([w for _, _, w in self.components])
        choice = rng.gen.choice(len(self.components), size=size, p=weights)
        eps = rng.normal(size)
        mus = np.array([m for m, _, _ in self.components])
        ks = np.array([k for _, k, _ in self.components])
        return mus[choice] + ks[choice] * sigma_hat * eps


@dataclass(frozen=True)
class TemperedCategorical:
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")


RealNoise = GaussianNoise | LaplaceNoise | LogNormalNoise | GaussianMixtureNoise


@dataclass(frozen=True)
class NoiseSpec:
    real: RealNoise | None = None
    cat: TemperedCategorical | None = None

    def describe(self) -> str:
        parts = []
        if self.real is not None:
            parts.append(type(self.real).__name__)
        if self.cat is not None:
            parts.append(f"tempered(beta={self.cat.beta})")
        return "+".join(parts) if parts else "none"


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def select_cells(n_rows: int, n_features: int, row_frac: float,
                 feat_frac: float = 0.2, rng: Rng | None = None) -> np.ndarray:
    """Boolean (N, D) mask: round(row_frac*N) rows, each with
    round(feat_frac*D) features redrawn independently per row."""
    if not 0.0 < row_frac <= 1.0:
        raise ConfigError(f"row fraction must lie in (0, 1], got {row_frac}")
    if rng is None:
        raise ConfigError("select_cells needs an rng")
    n_sel_rows = _round_half_up(row_frac * n_rows)
    n_sel_feats = _round_half_up(feat_frac * n_features)
    if n_sel_feats == 0:
        raise ConfigError(f"feature fraction {feat_frac} selects zero of {n_features} features per row")
    mask = np.zeros((n_rows, n_features), dtype=bool)
    rows = rng.gen.choice(n_rows, size=n_sel_rows, replace=False)
    for r in sorted(int(x) for x in rows):
        feats = rng.gen.choice(n_features, size=n_sel_feats, replace=False)
        mask[r, feats] = True
    return mask


def corrupt_real(value: float, spec: RealNoise, sigma_hat: float, rng: Rng) -> float:
    """Additive noise: observed = clean + zeta, zeta from the configured process."""
    return float(value + spec.draw(sigma_hat, rng, 1)[0])


def tempered_probs(marginal: np.ndarray, clean_index: int, beta: float) -> np.ndarray:
    """Noise distribution over the other categories: p_c^beta renormalized
    with the clean category excluded (beta=0 gives the uniform)."""
    p = np.asarray(marginal, dtype=np.float64).copy()
    p[clean_index] = 0.0
    if not np.any(p > 0):
        raise DataFormatError("all other categories have zero marginal mass")
    weights = np.zeros_like(p)
    pos = p > 0
    weights[pos] = p[pos] ** beta
    return weights / weights.sum()


def corrupt_categorical(value: int, beta: float, marginal: np.ndarray, rng: Rng) -> int:
    """Draw a dirty category, never equal to the clean one."""
    probs = tempered_probs(marginal, int(value), beta)
    u = float(rng.uniform())
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


@dataclass
class CorruptionRecord:
    """Ground truth for the evaluator: which cells were corrupted, and the
    clean values they held."""

    mask: np.ndarray  # (N, D) bool, schema column order
    originals: dict[tuple[int, int], float | int] = field(default_factory=dict)
    row_fraction: float = 0.0
    feat_fraction: float = 0.2
    seed: int = 0

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    def apply_originals(self, dirty: MixedTable) -> MixedTable:
        """Put the clean values back; exact inverse of the corruption."""
        reals = dirty.reals.copy()
        cats = dirty.cats.copy()
        for (row, column), value in self.originals.items():
            kind, slot = dirty.schema.kind_index(column)
            if kind == REAL:
                reals[row, slot] = value
            else:
                cats[row, slot] = value
        return dirty.with_values(reals=reals, cats=cats)

    def save(self, path) -> None:
        """One file: a JSON header line, then a (row,column,original_value) CSV."""
        lines = [json.dumps({
            "format": RECORD_MAGIC,
            "seed": self.seed,
            "row_fraction": self.row_fraction,
            "feat_fraction": self.feat_fraction,
            "shape": list(self.mask.shape),
        })]
        lines.append("row,column,original_value")
        for (row, column), value in sorted(self.originals.items()):
            lines.append(f"{row},{column},{value!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CorruptionRecord":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text:
            raise DataFormatError(f"{path}: empty record file")
        try:
            header = json.loads(text[0])
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: record header does not parse: {exc}") from exc
        if header.get("format") != RECORD_MAGIC:
            raise DataFormatError(f"{path}: not a corruption record")
        n, d = header["shape"]
        mask = np.zeros((n, d), dtype=bool)
        originals: dict[tuple[int, int], float | int] = {}
        for line in text[2:]:
            if not line:
                continue
            row_s, col_s, val_s = line.split(",", 2)
            row, col = int(row_s), int(col_s)
            mask[row, col] = True
            # values are repr() of int or float, both of which round-trip exactly
            try:
                value: float | int = int(val_s)
            except ValueError:
                value = float(val_s)
            originals[(row, col)] = value
        return cls(mask=mask, originals=originals, seed=header["seed"],
                   row_fraction=header["row_fraction"], feat_fraction=header["feat_fraction"])


def make_scenario(table: MixedTable, row_frac: float, noise: NoiseSpec, seed: int,
                  feat_frac: float = 0.2) -> tuple[MixedTable, CorruptionRecord]:
    """Corrupt a clean raw table; the record retains the originals.

    Column std and categorical marginals for the noise processes are
    computed on the clean table (the injector owns the ground truth).
    """
    if table.is_standardized:
        raise ConfigError("corruption operates on raw (pre-standardization) tables")
    n, d = table.n_rows, table.schema.n_features
    if row_frac == 0.0:
        return table, CorruptionRecord(mask=np.zeros((n, d), dtype=bool), seed=seed,
                                       row_fraction=0.0, feat_fraction=feat_frac)
    rng = Rng(seed)
    mask = select_cells(n, d, row_frac, feat_frac, rng)
    sigma_hat = table.reals.std(axis=0) if table.reals.size else np.zeros(0)
    marginals = []
    for j, feat in enumerate(table.schema.cat_features):
        counts = np.bincount(table.cats[:, j], minlength=feat.cardinality).astype(np.float64)
        marginals.append(counts / counts.sum())
    reals = table.reals.copy()
    cats = table.cats.copy()
    originals: dict[tuple[int, int], float | int] = {}
    for row, column in zip(*np.nonzero(mask)):
        row, column = int(row), int(column)
        kind, slot = table.schema.kind_index(column)
        if kind == REAL:
            if noise.real is None:
                raise ConfigError(f"mask hit real feature '{table.schema.features[column].name}' "
                                  "but no real noise process was configured")
            originals[(row, column)] = float(reals[row, slot])
            reals[row, slot] = corrupt_real(reals[row, slot], noise.real, float(sigma_hat[slot]), rng)
        else:
            if noise.cat is None:
                raise ConfigError(f"mask hit categorical feature '{table.schema.features[column].name}' "
                                  "but no categorical noise process was configured")
            originals[(row, column)] = int(cats[row, slot])
            cats[row, slot] = corrupt_categorical(int(cats[row, slot]), noise.cat.beta,
                                                  marginals[slot], rng)
    dirty = table.with_values(reals=reals, cats=cats)
    record = CorruptionRecord(mask=mask, originals=originals, seed=seed,
                              row_fraction=row_frac, feat_fraction=feat_frac)
    return dirty, record
