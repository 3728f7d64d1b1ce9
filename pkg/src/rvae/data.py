"""Schema, mixed-type tables, standardization, and categorical encoding.

Tables store real columns as a float64 matrix and categorical columns as
integer indices into each feature's label list. Real features can carry a
standardization transform (mean, std mapping raw to current values) so
repairs can be reported back in original units.

External formats:
  * data CSV: RFC-4180 style, UTF-8, first row is the header;
  * schema JSON: an array, in column order, of
    ``{"name": ..., "kind": "real"}`` or
    ``{"name": ..., "kind": "categorical", "categories": [...]}``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine
from .engine import Tensor
from .errors import DataFormatError, SchemaMismatchError
from .nn import Rng

REAL = "real"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (REAL, CATEGORICAL):
            raise DataFormatError(f"feature '{self.name}': unknown kind '{self.kind}'")
        if self.kind == CATEGORICAL:
            if self.categories is None or len(self.categories) < 2:
                raise DataFormatError(f"feature '{self.name}': categorical features need >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise DataFormatError(f"feature '{self.name}': duplicate category labels")
        elif self.categories is not None:
            raise DataFormatError(f"feature '{self.name}': real features take no categories")

    @property
    def cardinality(self) -> int:
        return len(self.categories) if self.categories is not None else 0


@dataclass(frozen=True)
class TableSchema:
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        if len(self.features) < 1:
            raise DataFormatError("schema needs at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataFormatError("duplicate feature names in schema")

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def real_features(self) -> list[FeatureSpec]:
        return [f for f in self.features if f.kind == REAL]

    @property
    def cat_features(self) -> list[FeatureSpec]:
        return [f for f in self.features if f.kind == CATEGORICAL]

    def kind_index(self, column: int) -> tuple[str, int]:
        """Map a schema column to ("real", i) or ("categorical", j) storage slots."""
        kind = self.features[column].kind
        own = [i for i, f in enumerate(self.features) if f.kind == kind]
        return kind, own.index(column)

    def to_json_obj(self) -> list[dict]:
        out = []
        for f in self.features:
            if f.kind == REAL:
                out.append({"name": f.name, "kind": REAL})
            else:
                out.append({"name": f.name, "kind": CATEGORICAL, "categories": list(f.categories)})
        return out

    @classmethod
    def from_json_obj(cls, obj) -> "TableSchema":
        if not isinstance(obj, list):
            raise DataFormatError("schema JSON must be an array of feature objects")
        feats = []
        for entry in obj:
            try:
                kind = entry["kind"]
                name = entry["name"]
            except (TypeError, KeyError) as exc:
                raise DataFormatError(f"schema entry missing field: {exc}") from exc
            cats = tuple(entry["categories"]) if kind == CATEGORICAL else None
            feats.append(FeatureSpec(name=name, kind=kind, categories=cats))
        return cls(tuple(feats))

    @classmethod
    def load(cls, path) -> "TableSchema":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"schema file {path} does not parse: {exc}") from exc
        return cls.from_json_obj(obj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_obj(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ColumnStats:
    """Affine transform from raw to current values: current = (raw - mean) / std."""

    mean: float
    std: float


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MixedTable:
    """N rows of mixed-type cells, immutable after construction."""

    schema: TableSchema
    reals: np.ndarray  # (N, n_real) float64
    cats: np.ndarray   # (N, n_cat) int64
    stats: dict[str, ColumnStats] | None = None

    def __post_init__(self):
        object.__setattr__(self, "reals", _freeze(np.asarray(self.reals, dtype=np.float64)))
        object.__setattr__(self, "cats", _freeze(np.asarray(self.cats, dtype=np.int64)))
        n_real = len(self.schema.real_features)
        n_cat = len(self.schema.cat_features)
        if self.reals.shape != (self.n_rows, n_real) or self.cats.shape != (self.n_rows, n_cat):
            raise DataFormatError("table arrays do not match schema")
        if not np.all(np.isfinite(self.reals)):
            raise DataFormatError("non-finite real cell")
        for j, feat in enumerate(self.schema.cat_features):
            col = self.cats[:, j]
            if col.size and (col.min() < 0 or col.max() >= feat.cardinality):
                raise DataFormatError(f"categorical index out of range in feature '{feat.name}'")
        if self.stats is not None:
            for feat in self.schema.real_features:
                if feat.name not in self.stats:
                    raise DataFormatError(f"missing standardization stats for '{feat.name}'")
                if not self.stats[feat.name].std > 0:
                    raise DataFormatError(f"non-positive std in stats for '{feat.name}'")

    @property
    def n_rows(self) -> int:
        return self.reals.shape[0] if self.reals.ndim == 2 else self.cats.shape[0]

    @property
    def is_standardized(self) -> bool:
        return self.stats is not None

    def cell(self, row: int, column: int):
        """Raw cell value: float for real features, int index for categorical."""
        kind, slot = self.schema.kind_index(column)
        return float(self.reals[row, slot]) if kind == REAL else int(self.cats[row, slot])

    def with_values(self, reals: np.ndarray | None = None, cats: np.ndarray | None = None,
                    stats="__keep__") -> "MixedTable":
        return MixedTable(
            schema=self.schema,
            reals=self.reals if reals is None else reals,
            cats=self.cats if cats is None else cats,
            stats=self.stats if stats == "__keep__" else stats,
        )


def load_csv(csv_path, schema_path) -> MixedTable:
    schema = TableSchema.load(schema_path)
    return read_table(csv_path, schema)


def read_table(csv_path, schema: TableSchema) -> MixedTable:
    """Parse a CSV against a schema; all errors report row and column."""
    path = Path(csv_path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header != schema.names:
            raise DataFormatError(f"{path}: header {header} does not match schema columns {schema.names}")
        rows = list(reader)
    if not rows:
        raise DataFormatError(f"{path}: no rows")
    n_real = len(schema.real_features)
    n_cat = len(schema.cat_features)
    reals = np.empty((len(rows), n_real))
    cats = np.empty((len(rows), n_cat), dtype=np.int64)
    cat_lookup = {f.name: {label: i for i, label in enumerate(f.categories)} for f in schema.cat_features}
    for r, row in enumerate(rows):
        if len(row) != schema.n_features:
            raise DataFormatError(f"{path}: row {r} has {len(row)} cells, expected {schema.n_features}")
        i_real = i_cat = 0
        for c, (feat, text) in enumerate(zip(schema.features, row)):
            if text == "":
                raise DataFormatError(f"{path}: row {r}, column '{feat.name}': missing values are not supported")
            if feat.kind == REAL:
                try:
                    reals[r, i_real] = float(text)
                except ValueError:
                    raise DataFormatError(f"{path}: row {r}, column '{feat.name}': non-numeric value '{text}'") from None
                i_real += 1
            else:
                try:
                    cats[r, i_cat] = cat_lookup[feat.name][text]
                except KeyError:
                    raise DataFormatError(f"{path}: row {r}, column '{feat.name}': unknown category '{text}'") from None
                i_cat += 1
    return MixedTable(schema=schema, reals=reals, cats=cats, stats=None)


def write_table(table: MixedTable, csv_path) -> None:
    """Write a table back to CSV; floats use repr so reloads are bit-exact."""
    schema = table.schema
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.names)
        for r in range(table.n_rows):
            row = []
            i_real = i_cat = 0
            for feat in schema.features:
                if feat.kind == REAL:
                    row.append(repr(float(table.reals[r, i_real])))
                    i_real += 1
                else:
                    row.append(feat.categories[table.cats[r, i_cat]])
                    i_cat += 1
            writer.writerow(row)


def standardize(table: MixedTable) -> MixedTable:
    """Shift/scale every real column to empirical mean 0 and std 1.

    Uses the population (1/N) standard deviation. Composes with any
    transform the table already carries, so re-standardizing is a no-op up
    to float rounding and de-standardization always recovers raw units.
    """
    if not table.schema.real_features:
        return table.with_values(stats={})
    means = table.reals.mean(axis=0)
    stds = table.reals.std(axis=0)
    new_stats = {}
    for j, feat in enumerate(table.schema.real_features):
        if stds[j] <= 0.0:
            raise DataFormatError(f"feature '{feat.name}' is constant; cannot standardize")
        old = table.stats.get(feat.name) if table.stats else None
        if old is None:
            new_stats[feat.name] = ColumnStats(mean=float(means[j]), std=float(stds[j]))
        else:
            new_stats[feat.name] = ColumnStats(mean=float(old.mean + means[j] * old.std),
                                               std=float(old.std * stds[j]))
    values = (table.reals - means) / stds
    return table.with_values(reals=values, stats=new_stats)


def apply_stats(table: MixedTable, stats: dict[str, ColumnStats]) -> MixedTable:
    """Standardize a raw table with a previously computed transform."""
    if table.stats is not None:
        raise DataFormatError("apply_stats expects a raw (unstandardized) table")
    values = table.reals.copy()
    for j, feat in enumerate(table.schema.real_features):
        st = stats[feat.name]
        values[:, j] = (values[:, j] - st.mean) / st.std
    return table.with_values(reals=values, stats=dict(stats))


def destandardize(table: MixedTable) -> MixedTable:
    """Map a standardized table back to raw units."""
    if table.stats is None:
        return table
    values = table.reals.copy()
    for j, feat in enumerate(table.schema.real_features):
        st = table.stats[feat.name]
        values[:, j] = values[:, j] * st.std + st.mean
    return table.with_values(reals=values, stats=None)


def destandardize_column(values: np.ndarray, stats: ColumnStats) -> np.ndarray:
    return values * stats.std + stats.mean


def one_hot(index: int, cardinality: int) -> np.ndarray:
    if not 0 <= index < cardinality:
        raise ValueError(f"index {index} out of range for {cardinality} categories")
    out = np.zeros(cardinality)
    out[index] = 1.0
    return out


class EmbeddingBank:
    """Learnable unit-norm embedding rows, one matrix per categorical feature."""

    def __init__(self, schema: TableSchema, dim: int, rng: Rng | None = None):
        self.dim = dim
        self.tensors: dict[str, Tensor] = {}
        for feat in schema.cat_features:
            if rng is None:
                rows = np.zeros((feat.cardinality, dim))
                rows[:, 0] = 1.0
            else:
                rows = rng.normal((feat.cardinality, dim))
                rows /= np.linalg.norm(rows, axis=1, keepdims=True)
            self.tensors[feat.name] = Tensor(rows)

    def renormalize(self) -> None:
        """Rescale every row to unit Euclidean norm (called after optimizer steps)."""
        for t in self.tensors.values():
            t.value /= np.linalg.norm(t.value, axis=1, keepdims=True)

    def params(self) -> dict[str, Tensor]:
        return {f"embeddings.{name}": t for name, t in self.tensors.items()}


def encoded_dim(schema: TableSchema, embedding_dim: int) -> int:
    return len(schema.real_features) + embedding_dim * len(schema.cat_features)


def encode_rows(schema: TableSchema, reals: np.ndarray, cats: np.ndarray,
                bank: EmbeddingBank, zero_mask: np.ndarray | None = None) -> Tensor:
    """Model input for a batch: standardized reals then one embedding per categorical.

    Differentiable w.r.t. the embedding matrices. ``zero_mask`` (B, n_cat)
    replaces selected embedding rows with zero vectors, which is how
    mean-behaviour imputation represents unknown categoricals.
    """
    parts: list[Tensor] = []
    if reals.shape[1]:
        parts.append(Tensor(reals))
    for j, feat in enumerate(schema.cat_features):
        emb = engine.take_rows(bank.tensors[feat.name], cats[:, j])
        if zero_mask is not None:
            keep = (~zero_mask[:, j]).astype(np.float64)[:, None]
            emb = engine.mul(emb, keep)
        parts.append(emb)
    if len(parts) == 1:
        return parts[0]
    return engine.concat(parts, axis=1)


def encode_row(row_reals: np.ndarray, row_cats: np.ndarray, schema: TableSchema, bank: EmbeddingBank) -> Tensor:
    """Single-row convenience wrapper around :func:`encode_rows`."""
    out = encode_rows(schema, np.atleast_2d(np.asarray(row_reals, dtype=np.float64)),
                      np.atleast_2d(np.asarray(row_cats, dtype=np.int64)), bank)
    return engine.reshape(out, (out.shape[1],))


def require_same_schema(a: TableSchema, b: TableSchema, context: str = "") -> None:
    if a == b:
        return
    prefix = f"{context}: " if context else ""
    if a.names != b.names:
        raise SchemaMismatchError(f"{prefix}feature names differ: {a.names} vs {b.names}")
    for fa, fb in zip(a.features, b.features):
        if fa != fb:
            raise SchemaMismatchError(f"{prefix}feature '{fa.name}' differs: {fa} vs {fb}")
    raise SchemaMismatchError(f"{prefix}schemas differ")
