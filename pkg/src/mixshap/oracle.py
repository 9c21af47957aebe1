"""Exact Shapley values for threshold-Gaussian data and linear models.

The generative model is a latent multivariate normal whose coordinates
either pass through unchanged (continuous features) or are digitized at
fixed cutoffs into level codes (categorical features). For this family
the contribution function v(S) = E[f(x) | x_S = x*_S] has a closed or
one-dimensional-quadrature form, so estimator error can be measured
against the truth instead of against another estimate.

Two oracles cover the two regimes. CategoricalOracle tabulates the full
joint probability over every level combination and answers conditional
expectations by slice sums, for any predictor over the grid.
MixedOracle handles schemas with continuous features for additive
linear models, conditioning the latent normal exactly and integrating
over each unconditioned coordinate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import (
    DimensionTooLarge,
    LengthMismatch,
    ZeroProbabilityCondition,
)
from .gaussian import (
    MvnSpec,
    Rectangle,
    conditional_affine,
    equicorrelation,
    integrate_1d_vec,
    mvn_rectangle_prob,
    mvn_rectangle_prob_batch,
    sample_mvn,
)
from .linmodel import LinearModelSpec
from .shapley import ContributionVector, ShapleyResult, kernel_shap_solve
from .tabular import (
    Coalition,
    FeatureSchema,
    FeatureSpec,
    MixedTable,
    validate_row,
)

__all__ = [
    "ThresholdGaussianSpec",
    "CategoricalOracle",
    "MixedOracle",
    "weighted_mae",
    "write_truth_csv",
]

# probability mass below which conditioning is treated as impossible
ZERO_MASS = 1e-12

# full-grid tabulation cap; larger grids need a different strategy
MAX_GRID_COMBOS = 262_144


@dataclass(frozen=True)
class ThresholdGaussianSpec:
    """Latent normal plus per-feature digitization cutoffs.

    cutoffs[j] is None for a continuous feature, or the full boundary
    tuple (-inf, c_1, ..., c_{L-1}, +inf) mapping latent coordinate j to
    level codes 1..L. Level l occupies the half-open box
    [cutoffs[l-1], cutoffs[l]).
    """

    mvn: MvnSpec
    cutoffs: tuple[tuple[float, ...] | None, ...]

    def __post_init__(self):
        cuts = tuple(tuple(c) if c is not None else None for c in self.cutoffs)
        object.__setattr__(self, "cutoffs", cuts)
        if len(cuts) != self.mvn.dim:
            raise ValueError(
                f"{len(cuts)} cutoff entries for a {self.mvn.dim}-dimensional latent"
            )
        for j, c in enumerate(cuts):
            if c is None:
                continue
            if len(c) < 3:
                raise ValueError(f"feature {j}: need at least 2 levels, got {len(c) - 1}")
            if not (math.isinf(c[0]) and c[0] < 0 and math.isinf(c[-1]) and c[-1] > 0):
                raise ValueError(f"feature {j}: cutoffs must start at -inf and end at +inf")
            arr = np.asarray(c)
            if not np.all(np.diff(arr) > 0) or not np.all(np.isfinite(arr[1:-1])):
                raise ValueError(f"feature {j}: interior cutoffs must be finite increasing")
        names = tuple(f"x{j + 1}" for j in range(self.mvn.dim))
        feats = tuple(
            FeatureSpec(name, None)
            if c is None
            else FeatureSpec(name, tuple(str(l) for l in range(1, len(c))))
            for name, c in zip(names, cuts)
        )
        object.__setattr__(self, "_schema", FeatureSchema(feats))

    @classmethod
    def equicorrelated(
        cls,
        m: int,
        rho: float,
        interior_cutoffs: Sequence[float],
        n_categorical: int | None = None,
    ) -> "ThresholdGaussianSpec":
        """Zero-mean equicorrelated latent; the first n_categorical
        features (all of them by default) share one cutoff vector."""
        n_cat = m if n_categorical is None else n_categorical
        if not 0 <= n_cat <= m:
            raise ValueError(f"n_categorical must lie in 0..{m}, got {n_cat}")
        full = (-math.inf, *(float(c) for c in interior_cutoffs), math.inf)
        cuts = tuple(full if j < n_cat else None for j in range(m))
        return cls(MvnSpec(np.zeros(m), equicorrelation(m, rho)), cuts)

    @property
    def m(self) -> int:
        return self.mvn.dim

    @property
    def schema(self) -> FeatureSchema:
        return self._schema

    def n_levels(self, j: int) -> int:
        c = self.cutoffs[j]
        if c is None:
            raise ValueError(f"feature {j} is continuous")
        return len(c) - 1

    def level_box(self, j: int, code: int) -> tuple[float, float]:
        """Latent interval of level ``code`` (1-based) for feature j."""
        c = self.cutoffs[j]
        if c is None:
            raise ValueError(f"feature {j} is continuous")
        if not 1 <= code <= len(c) - 1:
            raise ValueError(f"feature {j}: level {code} outside 1..{len(c) - 1}")
        return c[code - 1], c[code]

    def digitize(self, z: np.ndarray) -> np.ndarray:
        """Map latent draws (n, m) to observed rows (codes as floats)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = z.copy()
        for j, c in enumerate(self.cutoffs):
            if c is not None:
                out[:, j] = np.digitize(z[:, j], c[1:-1]) + 1.0
        return out

    def sample(self, n: int, rng: np.random.Generator) -> MixedTable:
        return MixedTable(self.schema, self.digitize(sample_mvn(self.mvn, n, rng)))


class CategoricalOracle:
    """Exact conditional expectations by full-grid tabulation.

    Every level combination gets its joint probability (one rectangle
    integral per combination, batched) and its model value; v(S) is then
    a ratio of slice sums over the grid, memoized per coalition.
    """

    def __init__(
        self,
        spec: ThresholdGaussianSpec,
        predict: Callable[[np.ndarray], np.ndarray],
        accuracy: float = 1e-5,
        rng: np.random.Generator | None = None,
    ):
        if any(c is None for c in spec.cutoffs):
            raise ValueError("grid tabulation needs an all-categorical schema")
        self.spec = spec
        self.schema = spec.schema
        levels = tuple(spec.n_levels(j) for j in range(spec.m))
        grid = int(np.prod(levels))
        if grid > MAX_GRID_COMBOS:
            raise DimensionTooLarge(
                f"{grid} level combinations exceed the tabulation cap of {MAX_GRID_COMBOS}"
            )
        self._levels = levels
        # row-major grid: x1 is the slowest digit, so rows come out in
        # lexicographic order (ties in probability break lexicographically)
        digits = np.stack(
            np.meshgrid(*(np.arange(l) for l in levels), indexing="ij"), axis=-1
        ).reshape(grid, spec.m)
        self._digits = digits
        self.combos = digits.astype(float) + 1.0
        lowers = np.empty((grid, spec.m))
        uppers = np.empty((grid, spec.m))
        for j in range(spec.m):
            edges = np.asarray(spec.cutoffs[j])
            lowers[:, j] = edges[digits[:, j]]
            uppers[:, j] = edges[digits[:, j] + 1]
        values, errors, _ = mvn_rectangle_prob_batch(
            spec.mvn, lowers, uppers, accuracy=accuracy, rng=rng
        )
        self.probabilities = np.maximum(values, 0.0)
        self.probability_errors = errors
        self.values = np.asarray(predict(self.combos), dtype=float).reshape(-1)
        if self.values.shape != (grid,):
            raise ValueError("predict must return one value per combination")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("predict returned non-finite values on the grid")
        self._tables: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- slice-sum tables ----------------------------------------------------

    def _table(self, mask: int) -> tuple[np.ndarray, np.ndarray]:
        """(numerator, denominator) sums keyed by the S-columns."""
        cached = self._tables.get(mask)
        if cached is not None:
            return cached
        p = self.probabilities
        if mask == 0:
            table = (np.array([self.values @ p]), np.array([p.sum()]))
        else:
            members = [j for j in range(self.spec.m) if mask >> j & 1]
            dims = tuple(self._levels[j] for j in members)
            keys = np.ravel_multi_index(
                tuple(self._digits[:, j] for j in members), dims
            )
            size = int(np.prod(dims))
            num = np.bincount(keys, weights=self.values * p, minlength=size)
            den = np.bincount(keys, weights=p, minlength=size)
            table = (num, den)
        self._tables[mask] = table
        return table

    def _key(self, mask: int, codes: np.ndarray) -> int:
        if mask == 0:
            return 0
        members = [j for j in range(self.spec.m) if mask >> j & 1]
        dims = tuple(self._levels[j] for j in members)
        return int(np.ravel_multi_index(tuple(codes[members] - 1), dims))

    # -- public API ----------------------------------------------------------

    def conditional_expectation(self, s: Coalition, x_star) -> float:
        """E[f(x) | x_S = x*_S] from the tabulated joint."""
        if s.m != self.spec.m:
            raise ValueError(f"coalition over {s.m} features, oracle has {self.spec.m}")
        row = validate_row(self.schema, x_star)
        codes = row.astype(int)
        num, den = self._table(s.mask)
        key = self._key(s.mask, codes)
        if den[key] < ZERO_MASS:
            raise ZeroProbabilityCondition(
                f"conditioning event has mass {den[key]:.3e} (< {ZERO_MASS})"
            )
        return float(num[key] / den[key])

    def contributions(self, x_star) -> ContributionVector:
        m = self.spec.m
        vals = np.empty(1 << m)
        for mask in range(1 << m):
            vals[mask] = self.conditional_expectation(Coalition(mask, m), x_star)
        return ContributionVector(m, vals)

    def true_shapley(self, x_star) -> ShapleyResult:
        v = self.contributions(x_star)
        return kernel_shap_solve(v)

    def test_combinations(self, t_max: int = 2000) -> tuple[MixedTable, np.ndarray]:
        """The t most probable combinations and their renormalized mass.

        Combinations are ranked by joint probability, ties broken
        lexicographically; the returned weights sum to one over the
        selection.
        """
        if t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {t_max}")
        order = np.argsort(-self.probabilities, kind="stable")
        take = order[: min(t_max, order.shape[0])]
        weights = self.probabilities[take]
        total = weights.sum()
        if total <= 0:
            raise ZeroProbabilityCondition("every combination has zero mass")
        return MixedTable(self.schema, self.combos[take]), weights / total


class _MixedPlan:
    """Per-coalition conditioning pieces reused for every query row."""

    __slots__ = ("ks", "cs", "targets", "base", "coef", "cov", "rest_pos", "den_mvn", "inner")

    def __init__(self, spec: ThresholdGaussianSpec, mask: int):
        m = spec.m
        members = [j for j in range(m) if mask >> j & 1]
        self.ks = [j for j in members if spec.cutoffs[j] is None]
        self.cs = [j for j in members if spec.cutoffs[j] is not None]
        self.targets = [j for j in range(m) if not mask >> j & 1]
        self.base, self.coef, self.cov = conditional_affine(spec.mvn, self.ks)
        rest = [j for j in range(m) if j not in self.ks]
        self.rest_pos = {j: i for i, j in enumerate(rest)}
        cs_pos = [self.rest_pos[j] for j in self.cs]
        if self.cs:
            block = self.cov[np.ix_(cs_pos, cs_pos)]
            self.den_mvn = MvnSpec(np.zeros(len(cs_pos)), _sym(block))
        else:
            self.den_mvn = None
        # inner plans: distribution of the cs block given one target
        # coordinate, mean affine in the target with constant covariance
        self.inner: dict[int, tuple[np.ndarray, MvnSpec]] = {}
        if self.cs:
            for j in self.targets:
                t = self.rest_pos[j]
                var_t = self.cov[t, t]
                cross = self.cov[np.ix_(cs_pos, [t])][:, 0]
                slope = cross / var_t
                inner_cov = self.cov[np.ix_(cs_pos, cs_pos)] - np.outer(slope, cross)
                self.inner[j] = (slope, MvnSpec(np.zeros(len(cs_pos)), _sym(inner_cov)))


def _sym(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


class MixedOracle:
    """Exact v(S) for additive linear models on threshold-Gaussian data.

    Continuous members are conditioned on exactly (Gaussian affine
    update); categorical members restrict their latent coordinates to
    cutoff boxes. Each unconditioned feature then contributes its
    conditional level probabilities (categorical) or conditional latent
    mean (continuous), obtained in closed form when no box constraint is
    active and by adaptive quadrature against the box probability
    otherwise.
    """

    def __init__(
        self,
        spec: ThresholdGaussianSpec,
        model: LinearModelSpec,
        tol: float = 1e-7,
        accuracy: float = 1e-5,
    ):
        if model.schema != spec.schema:
            raise ValueError("model schema does not match the generative schema")
        self.spec = spec
        self.model = model
        self.schema = spec.schema
        self.tol = tol
        self.accuracy = accuracy
        self._plans: dict[int, _MixedPlan] = {}

    def _plan(self, mask: int) -> _MixedPlan:
        plan = self._plans.get(mask)
        if plan is None:
            plan = _MixedPlan(self.spec, mask)
            self._plans[mask] = plan
        return plan

    def contribution(self, s: Coalition, x_star) -> float:
        """E[f(x) | x_S = x*_S] for the fitted linear model."""
        if s.m != self.spec.m:
            raise ValueError(f"coalition over {s.m} features, oracle has {self.spec.m}")
        row = validate_row(self.schema, x_star)
        effects = self.model.effects
        total = self.model.intercept
        for j in s.members:
            if self.spec.cutoffs[j] is None:
                total += effects[j][0] * row[j]
            else:
                total += effects[j][int(row[j]) - 1]
        if s.is_full:
            return float(total)

        plan = self._plan(s.mask)
        mean = plan.base + plan.coef @ row[plan.ks]
        if plan.cs:
            cs_pos = [plan.rest_pos[j] for j in plan.cs]
            lo = np.array([self.spec.level_box(j, int(row[j]))[0] for j in plan.cs])
            hi = np.array([self.spec.level_box(j, int(row[j]))[1] for j in plan.cs])
            lo_c, hi_c = lo - mean[cs_pos], hi - mean[cs_pos]
            den = mvn_rectangle_prob(
                plan.den_mvn, Rectangle.make(lo_c, hi_c), accuracy=self.accuracy
            ).value
            if den < ZERO_MASS:
                raise ZeroProbabilityCondition(
                    f"conditioning event has mass {den:.3e} (< {ZERO_MASS})"
                )
        else:
            lo_c = hi_c = None
            den = 1.0

        for j in plan.targets:
            t = plan.rest_pos[j]
            m_j, sd_j = mean[t], math.sqrt(plan.cov[t, t])
            if self.spec.cutoffs[j] is None:
                if plan.cs:
                    num = self._segment_integrals(
                        plan, j, m_j, sd_j, lo_c, hi_c, -math.inf, math.inf, moment=True
                    )
                    total += effects[j][0] * (num / den)
                else:
                    total += effects[j][0] * m_j
            else:
                edges = np.asarray(self.spec.cutoffs[j])
                if plan.cs:
                    segs = np.array(
                        [
                            self._segment_integrals(
                                plan, j, m_j, sd_j, lo_c, hi_c, edges[l], edges[l + 1]
                            )
                            for l in range(len(edges) - 1)
                        ]
                    )
                    probs = segs / den
                else:
                    cdf = ndtr((edges - m_j) / sd_j)
                    probs = np.diff(cdf)
                total += float(effects[j] @ probs)
        return float(total)

    def _segment_integrals(
        self,
        plan: _MixedPlan,
        j: int,
        m_j: float,
        sd_j: float,
        lo_c: np.ndarray,
        hi_c: np.ndarray,
        lower: float,
        upper: float,
        moment: bool = False,
    ) -> float:
        """Integral of phi(t) P(cs-box | target=t) over a segment,
        optionally weighted by t (first moment)."""
        slope, inner = plan.inner[j]

        def integrand(ts: np.ndarray) -> np.ndarray:
            shift = np.outer(ts - m_j, slope)
            vals, _, _ = mvn_rectangle_prob_batch(
                inner, lo_c - shift, hi_c - shift, accuracy=self.accuracy
            )
            z = (ts - m_j) / sd_j
            pdf = np.exp(-0.5 * z * z) / (sd_j * math.sqrt(2.0 * math.pi))
            out = pdf * vals
            return ts * out if moment else out

        return float(integrate_1d_vec(integrand, lower, upper, tol=self.tol))

    def contributions(self, x_star) -> ContributionVector:
        m = self.spec.m
        vals = np.empty(1 << m)
        for mask in range(1 << m):
            vals[mask] = self.contribution(Coalition(mask, m), x_star)
        return ContributionVector(m, vals)

    def true_shapley(self, x_star) -> ShapleyResult:
        return kernel_shap_solve(self.contributions(x_star))


def weighted_mae(
    true_phi: np.ndarray, est_phi: np.ndarray, weights: np.ndarray
) -> float:
    """Probability-weighted mean absolute Shapley error.

    true_phi and est_phi are (T, M) arrays of per-feature attributions
    (phi_0 excluded); weights is the (T,) mass of each evaluation row.
    The result averages the weighted column sums over the M features.
    """
    t = np.asarray(true_phi, dtype=float)
    e = np.asarray(est_phi, dtype=float)
    w = np.asarray(weights, dtype=float)
    if t.shape != e.shape or t.ndim != 2 or w.shape != (t.shape[0],):
        raise LengthMismatch(
            f"shapes disagree: true {t.shape}, estimate {e.shape}, weights {w.shape}"
        )
    return float(w @ np.abs(t - e) @ np.ones(t.shape[1]) / t.shape[1])


def write_truth_csv(
    path: str | Path, table: MixedTable, results: Sequence[ShapleyResult]
) -> None:
    """Save exact attributions as a golden file: one row per observation
    with the feature values, the model prediction, phi0, and each phi_j.

    Floats are written with repr so a reloaded file reproduces the exact
    doubles; reruns with the same inputs are byte-identical.
    """
    names = [f.name for f in table.schema.features]
    if len(results) != table.n_rows:
        raise LengthMismatch(
            f"{table.n_rows} observations but {len(results)} shapley results"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + ["prediction", "phi0"] + [f"phi_{n}" for n in names])
        for row, res in zip(table.values, results):
            cells = [repr(float(c)) for c in row]
            cells.append(repr(float(res.predicted)))
            cells.append(repr(float(res.phi0)))
            cells.extend(repr(float(p)) for p in res.phi)
            writer.writerow(cells)
