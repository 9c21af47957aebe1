"""Linear predictive models over mixed tables.

The functional form is an intercept, one effect per categorical level
with level 1 pinned to zero (reference coding), and one slope per
continuous feature. Effects are stored densely per feature so predict
reduces to indexing plus a dot product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError
from .tabular import FeatureSchema, MixedTable, OneHotMap

__all__ = ["LinearModelSpec", "load_model", "save_model"]


@dataclass(frozen=True)
class LinearModelSpec:
    """Reference-coded linear model aligned to a schema.

    ``effects[j]`` has length L_j for a categorical feature (entry 0 is
    the level-1 reference and must be 0.0) and length 1 for a continuous
    feature (the slope).
    """

    schema: FeatureSchema
    intercept: float
    effects: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.effects) != self.schema.m:
            raise SchemaError(
                f"model has {len(self.effects)} effect blocks, "
                f"schema has {self.schema.m} features"
            )
        frozen = []
        for j, spec in enumerate(self.schema.features):
            block = np.asarray(self.effects[j], dtype=float)
            want = spec.n_levels if spec.is_categorical else 1
            if block.shape != (want,):
                raise SchemaError(
                    f"effect block for {spec.name!r} has shape {block.shape}, "
                    f"expected ({want},)"
                )
            if not np.all(np.isfinite(block)):
                raise SchemaError(f"effect block for {spec.name!r} is not finite")
            if spec.is_categorical and block[0] != 0.0:
                raise SchemaError(
                    f"level-1 effect for {spec.name!r} must be the 0.0 reference"
                )
            block = block.copy()
            block.setflags(write=False)
            frozen.append(block)
        object.__setattr__(self, "effects", tuple(frozen))
        if not np.isfinite(self.intercept):
            raise SchemaError("intercept is not finite")

    def predict(self, rows: np.ndarray) -> np.ndarray:
        """Predictions for an (n, M) array of codes/values."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.schema.m:
            raise SchemaError(
                f"rows have {rows.shape[1]} columns, schema has {self.schema.m}"
            )
        out = np.full(rows.shape[0], self.intercept)
        for j, spec in enumerate(self.schema.features):
            if spec.is_categorical:
                out += self.effects[j][rows[:, j].astype(int) - 1]
            else:
                out += self.effects[j][0] * rows[:, j]
        return out

    def predict_table(self, table: MixedTable) -> np.ndarray:
        return self.predict(table.values)

    def encoded_coefficients(self, onehot: OneHotMap) -> tuple[float, np.ndarray]:
        """(intercept, coefficient vector) over the one-hot columns.

        The encoded linear model reproduces predict exactly because
        level 1 maps to the all-zeros indicator block.
        """
        if onehot.original != self.schema:
            raise SchemaError("one-hot map was built for a different schema")
        coef = np.zeros(onehot.n_encoded)
        for j, spec in enumerate(self.schema.features):
            cols = onehot.groups[j]
            if spec.is_categorical:
                coef[list(cols)] = self.effects[j][1:]
            else:
                coef[cols[0]] = self.effects[j][0]
        return self.intercept, coef

    def encoded_predictor(self, onehot: OneHotMap):
        intercept, coef = self.encoded_coefficients(onehot)

        def predict(rows: np.ndarray) -> np.ndarray:
            rows = np.atleast_2d(np.asarray(rows, dtype=float))
            return intercept + rows @ coef

        return predict

    def to_dict(self) -> dict:
        categorical: dict = {}
        continuous: dict = {}
        for j, spec in enumerate(self.schema.features):
            if spec.is_categorical:
                categorical[spec.name] = {
                    label: float(self.effects[j][code])
                    for code, label in enumerate(spec.levels)
                    if code > 0
                }
            else:
                continuous[spec.name] = float(self.effects[j][0])
        return {
            "intercept": float(self.intercept),
            "categorical": categorical,
            "continuous": continuous,
        }


def load_model(source: str | Path | dict, schema: FeatureSchema) -> LinearModelSpec:
    """Read the JSON interchange form.

    Level-1 entries may be omitted (implied 0); any other missing level
    effect is an error, as is an effect for an unknown feature or level.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            source = json.load(fh)
    if not isinstance(source, dict) or "intercept" not in source:
        raise ConfigError("model JSON must be an object with an 'intercept'")
    categorical = dict(source.get("categorical", {}))
    continuous = dict(source.get("continuous", {}))
    effects = []
    for spec in schema.features:
        if spec.is_categorical:
            table = dict(categorical.pop(spec.name, {}))
            block = np.zeros(spec.n_levels)
            reference = spec.levels[0]
            table.pop(reference, None)  # implied 0; an explicit 0 is harmless
            for code, label in enumerate(spec.levels):
                if code == 0:
                    continue
                if label not in table:
                    raise ConfigError(
                        f"model is missing the effect for {spec.name!r} level {label!r}"
                    )
                block[code] = float(table.pop(label))
            if table:
                raise ConfigError(
                    f"model has effects for unknown levels of {spec.name!r}: "
                    f"{sorted(table)}"
                )
            effects.append(block)
        else:
            if spec.name not in continuous:
                raise ConfigError(f"model is missing the slope for {spec.name!r}")
            effects.append(np.array([float(continuous.pop(spec.name))]))
    if categorical:
        raise ConfigError(f"model names unknown categorical features: {sorted(categorical)}")
    if continuous:
        raise ConfigError(f"model names unknown continuous features: {sorted(continuous)}")
    return LinearModelSpec(schema, float(source["intercept"]), tuple(effects))


def save_model(path: str | Path, model: LinearModelSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
