"""Shared builders for the small schemas and tables the tests reuse."""

import numpy as np

from mixshap.tabular import FeatureSchema, FeatureSpec, MixedTable


def cat_schema(m: int, l: int, prefix: str = "x") -> FeatureSchema:
    levels = tuple(str(i) for i in range(1, l + 1))
    return FeatureSchema(
        tuple(FeatureSpec(f"{prefix}{j + 1}", levels) for j in range(m))
    )


def cont_schema(m: int, prefix: str = "x") -> FeatureSchema:
    return FeatureSchema(tuple(FeatureSpec(f"{prefix}{j + 1}") for j in range(m)))


def mixed_schema(n_cat: int, n_cont: int, l: int) -> FeatureSchema:
    """Categorical features first, mirroring the synthetic generator."""
    levels = tuple(str(i) for i in range(1, l + 1))
    specs = [FeatureSpec(f"x{j + 1}", levels) for j in range(n_cat)]
    specs += [FeatureSpec(f"x{n_cat + j + 1}") for j in range(n_cont)]
    return FeatureSchema(tuple(specs))


def cont_table(n: int, m: int, rng: np.random.Generator) -> MixedTable:
    return MixedTable(cont_schema(m), rng.standard_normal((n, m)))
