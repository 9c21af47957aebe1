"""Mixed continuous/categorical tables, feature coalitions, and one-hot views.

Cells are stored as float64 throughout: continuous features hold their
value, categorical features hold an integer level code in 1..L. The
schema carries the kind of each column plus external string labels for
categorical levels, so CSV files round-trip through labels while the
numerical code never leaves the 1..L convention.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ArityMismatch,
    DimensionTooLarge,
    KindMismatch,
    LevelOutOfRange,
    SchemaError,
)

MAX_COALITION_FEATURES = 20

__all__ = [
    "FeatureSpec",
    "FeatureSchema",
    "MixedTable",
    "Coalition",
    "OneHotMap",
    "enumerate_coalitions",
    "validate_row",
    "one_hot_encode",
    "one_hot_encode_row",
    "aggregate_onehot_shapley",
    "load_schema",
    "read_csv_table",
    "write_csv_table",
]


@dataclass(frozen=True)
class FeatureSpec:
    """One column: ``levels`` is None for continuous features, otherwise
    the ordered external labels for codes 1..L."""

    name: str
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if self.levels is not None:
            if len(self.levels) < 2:
                raise SchemaError(
                    f"categorical feature {self.name!r} needs at least 2 levels"
                )
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"duplicate level labels in feature {self.name!r}")

    @property
    def is_categorical(self) -> bool:
        return self.levels is not None

    @property
    def n_levels(self) -> int:
        if self.levels is None:
            raise SchemaError(f"feature {self.name!r} is continuous, has no levels")
        return len(self.levels)


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names")
        if not self.features:
            raise SchemaError("schema needs at least one feature")

    @property
    def m(self) -> int:
        return len(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def categorical_indices(self) -> tuple[int, ...]:
        return tuple(j for j, f in enumerate(self.features) if f.is_categorical)

    @property
    def continuous_indices(self) -> tuple[int, ...]:
        return tuple(j for j, f in enumerate(self.features) if not f.is_categorical)

    def select(self, indices: Sequence[int]) -> "FeatureSchema":
        return FeatureSchema(tuple(self.features[j] for j in indices))

    def to_dict(self) -> dict:
        out = []
        for f in self.features:
            if f.is_categorical:
                out.append(
                    {"name": f.name, "kind": "categorical", "levels": list(f.levels)}
                )
            else:
                out.append({"name": f.name, "kind": "continuous"})
        return {"features": out}


def load_schema(source: str | Path | dict) -> FeatureSchema:
    """Build a schema from a JSON file path or an already-parsed dict."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            source = json.load(fh)
    if not isinstance(source, dict) or "features" not in source:
        raise SchemaError("schema JSON must be an object with a 'features' list")
    specs = []
    for entry in source["features"]:
        kind = entry.get("kind")
        if kind == "continuous":
            specs.append(FeatureSpec(entry["name"]))
        elif kind == "categorical":
            levels = entry.get("levels")
            if not levels:
                raise SchemaError(
                    f"categorical feature {entry.get('name')!r} needs a levels list"
                )
            specs.append(FeatureSpec(entry["name"], tuple(str(s) for s in levels)))
        else:
            raise SchemaError(f"unknown feature kind {kind!r}")
    return FeatureSchema(tuple(specs))


def validate_row(schema: FeatureSchema, row: np.ndarray | Sequence[float]) -> np.ndarray:
    """Check one row against the schema and return it as float64.

    Raises ArityMismatch, KindMismatch (non-integral categorical code or
    non-finite cell), or LevelOutOfRange.
    """
    arr = np.asarray(row, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != schema.m:
        raise ArityMismatch(
            f"row has {arr.shape[0] if arr.ndim == 1 else arr.shape} cells, "
            f"schema has {schema.m} features"
        )
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise KindMismatch(
            f"cell {schema.names[bad]!r} is missing or non-finite: {arr[bad]!r}"
        )
    for j in schema.categorical_indices:
        value = arr[j]
        if value != round(value):
            raise KindMismatch(
                f"categorical cell {schema.names[j]!r} has non-integral code {value!r}"
            )
        level = int(round(value))
        n_levels = schema.features[j].n_levels
        if not 1 <= level <= n_levels:
            raise LevelOutOfRange(
                f"cell {schema.names[j]!r}: level {level} outside 1..{n_levels}"
            )
    return arr


@dataclass(frozen=True)
class MixedTable:
    """Immutable (n, M) float64 matrix plus its schema."""

    schema: FeatureSchema
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2:
            raise ArityMismatch(f"table values must be 2-D, got shape {arr.shape}")
        if arr.shape[1] != self.schema.m:
            raise ArityMismatch(
                f"table has {arr.shape[1]} columns, schema has {self.schema.m}"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if not np.all(np.isfinite(arr)):
            raise KindMismatch("table contains missing or non-finite cells")
        for j in self.schema.categorical_indices:
            col = arr[:, j]
            if not np.array_equal(col, np.round(col)):
                raise KindMismatch(
                    f"column {self.schema.names[j]!r} has non-integral codes"
                )
            n_levels = self.schema.features[j].n_levels
            if col.size and (col.min() < 1 or col.max() > n_levels):
                raise LevelOutOfRange(
                    f"column {self.schema.names[j]!r} has codes outside 1..{n_levels}"
                )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.schema.m

    def row(self, i: int) -> np.ndarray:
        return self.values[i]

    def select(self, indices: Sequence[int]) -> "MixedTable":
        """Column subset as a new table with the matching sub-schema."""
        idx = list(indices)
        return MixedTable(self.schema.select(idx), self.values[:, idx])


@dataclass(frozen=True)
class Coalition:
    """Subset of feature indices as a bitmask over M positions."""

    mask: int
    m: int

    def __post_init__(self):
        if not 0 <= self.m <= MAX_COALITION_FEATURES:
            raise DimensionTooLarge(
                f"coalitions support up to {MAX_COALITION_FEATURES} features, got m={self.m}"
            )
        if not 0 <= self.mask < (1 << self.m):
            raise ValueError(f"mask {self.mask:#x} out of range for m={self.m}")

    @classmethod
    def from_members(cls, m: int, members: Iterable[int]) -> "Coalition":
        mask = 0
        for j in members:
            if not 0 <= j < m:
                raise ValueError(f"member {j} outside 0..{m - 1}")
            mask |= 1 << j
        return cls(mask, m)

    @classmethod
    def empty(cls, m: int) -> "Coalition":
        return cls(0, m)

    @classmethod
    def full(cls, m: int) -> "Coalition":
        return cls((1 << m) - 1, m)

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.m) if self.mask >> j & 1)

    @property
    def size(self) -> int:
        return int(self.mask).bit_count()

    def contains(self, j: int) -> bool:
        return bool(self.mask >> j & 1)

    def complement(self) -> "Coalition":
        return Coalition(((1 << self.m) - 1) ^ self.mask, self.m)

    def union(self, j: int) -> "Coalition":
        return Coalition(self.mask | (1 << j), self.m)

    @property
    def is_empty(self) -> bool:
        return self.mask == 0

    @property
    def is_full(self) -> bool:
        return self.mask == (1 << self.m) - 1

    def __repr__(self) -> str:
        return f"Coalition({{{','.join(map(str, self.members))}}}, m={self.m})"


def enumerate_coalitions(m: int) -> list[Coalition]:
    """All 2^m coalitions in ascending mask order. m is capped at 20;
    anything larger raises DimensionTooLarge before allocating."""
    if m > MAX_COALITION_FEATURES:
        raise DimensionTooLarge(
            f"enumeration over {m} features would produce 2^{m} coalitions "
            f"(cap is {MAX_COALITION_FEATURES})"
        )
    if m < 0:
        raise ValueError("m must be non-negative")
    return [Coalition(mask, m) for mask in range(1 << m)]


@dataclass(frozen=True)
class OneHotMap:
    """Bookkeeping from an original schema to its one-hot encoded view.

    ``groups[j]`` lists the encoded column indices produced by original
    feature j: a single column for continuous features, L-1 indicator
    columns (levels 2..L, level 1 is the all-zeros reference) for
    categorical ones.
    """

    original: FeatureSchema
    encoded: FeatureSchema
    groups: tuple[tuple[int, ...], ...]

    @property
    def n_encoded(self) -> int:
        return self.encoded.m

    def group_of(self, encoded_col: int) -> int:
        for j, cols in enumerate(self.groups):
            if encoded_col in cols:
                return j
        raise ValueError(f"encoded column {encoded_col} not mapped")

    def decode_row(self, encoded_row: np.ndarray) -> np.ndarray:
        """Invert the encoding for one row of exact 0/1 indicators."""
        out = np.empty(self.original.m)
        for j, spec in enumerate(self.original.features):
            cols = self.groups[j]
            if spec.is_categorical:
                block = np.asarray(encoded_row)[list(cols)]
                hot = np.flatnonzero(block == 1.0)
                if hot.size > 1 or not np.all((block == 0.0) | (block == 1.0)):
                    raise KindMismatch(
                        f"indicator block for {spec.name!r} is not one-hot: {block}"
                    )
                out[j] = 1.0 if hot.size == 0 else float(hot[0] + 2)
            else:
                out[j] = encoded_row[cols[0]]
        return out


def _encoded_schema(schema: FeatureSchema) -> tuple[FeatureSchema, tuple[tuple[int, ...], ...]]:
    specs: list[FeatureSpec] = []
    groups: list[tuple[int, ...]] = []
    for f in schema.features:
        if f.is_categorical:
            cols = []
            for level in range(2, f.n_levels + 1):
                cols.append(len(specs))
                specs.append(FeatureSpec(f"{f.name}={f.levels[level - 1]}"))
            groups.append(tuple(cols))
        else:
            groups.append((len(specs),))
            specs.append(FeatureSpec(f.name))
    return FeatureSchema(tuple(specs)), tuple(groups)


def one_hot_encode(table: MixedTable) -> tuple[MixedTable, OneHotMap]:
    """Dummy-encode categorical columns, keeping continuous ones in place.

    Level 1 maps to the all-zeros indicator block, so the encoding is
    invertible on rows and the encoded column count is
    sum(L_j - 1) + #continuous.
    """
    encoded_schema, groups = _encoded_schema(table.schema)
    onehot = OneHotMap(table.schema, encoded_schema, groups)
    out = np.zeros((table.n_rows, encoded_schema.m))
    for j, spec in enumerate(table.schema.features):
        cols = groups[j]
        if spec.is_categorical:
            codes = table.values[:, j].astype(int)
            for offset, level in enumerate(range(2, spec.n_levels + 1)):
                out[:, cols[offset]] = codes == level
        else:
            out[:, cols[0]] = table.values[:, j]
    return MixedTable(encoded_schema, out), onehot


def one_hot_encode_row(onehot: OneHotMap, row: np.ndarray) -> np.ndarray:
    row = validate_row(onehot.original, row)
    out = np.zeros(onehot.n_encoded)
    for j, spec in enumerate(onehot.original.features):
        cols = onehot.groups[j]
        if spec.is_categorical:
            level = int(round(row[j]))
            if level >= 2:
                out[cols[level - 2]] = 1.0
        else:
            out[cols[0]] = row[j]
    return out


def aggregate_onehot_shapley(onehot: OneHotMap, phi_encoded: np.ndarray) -> np.ndarray:
    """Sum encoded-space Shapley values over each original feature's
    indicator block. Conservation: output sums equal the input sum."""
    phi_encoded = np.asarray(phi_encoded, dtype=float)
    if phi_encoded.shape != (onehot.n_encoded,):
        raise ArityMismatch(
            f"expected {onehot.n_encoded} encoded values, got shape {phi_encoded.shape}"
        )
    return np.array([phi_encoded[list(cols)].sum() for cols in onehot.groups])


def read_csv_table(path: str | Path, schema: FeatureSchema) -> MixedTable:
    """Load a CSV whose header matches the schema names in order.

    Categorical cells are matched by exact string against the level
    labels; continuous cells are parsed as floats.
    """
    label_maps = {
        j: {label: float(code) for code, label in enumerate(schema.features[j].levels, start=1)}
        for j in schema.categorical_indices
    }
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty CSV")
        if tuple(header) != schema.names:
            raise SchemaError(
                f"{path}: header {tuple(header)} does not match schema {schema.names}"
            )
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != schema.m:
                raise ArityMismatch(
                    f"{path}:{lineno}: {len(record)} cells, expected {schema.m}"
                )
            row = []
            for j, cell in enumerate(record):
                if j in label_maps:
                    try:
                        row.append(label_maps[j][cell])
                    except KeyError:
                        raise LevelOutOfRange(
                            f"{path}:{lineno}: unknown level {cell!r} for "
                            f"feature {schema.names[j]!r}"
                        ) from None
                else:
                    try:
                        row.append(float(cell))
                    except ValueError:
                        raise KindMismatch(
                            f"{path}:{lineno}: cannot parse {cell!r} as a number"
                        ) from None
            rows.append(row)
    values = np.array(rows, dtype=float) if rows else np.empty((0, schema.m))
    return MixedTable(schema, values)


def write_csv_table(path: str | Path, table: MixedTable) -> None:
    """Inverse of read_csv_table: codes map back to their labels."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.schema.names)
        cat = set(table.schema.categorical_indices)
        for i in range(table.n_rows):
            record = []
            for j in range(table.m):
                value = table.values[i, j]
                if j in cat:
                    record.append(table.schema.features[j].levels[int(value) - 1])
                else:
                    record.append(repr(float(value)))
            writer.writerow(record)
