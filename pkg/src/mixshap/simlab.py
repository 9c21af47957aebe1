"""Simulation experiments measuring estimator error against the truth.

One experiment cell draws dependent mixed training data from a
threshold-Gaussian generator, fits a linear regression to a noisy
response, computes exact Shapley values of the fitted model with the
matching oracle, then runs each configured estimator over a weighted
test set and records the probability-weighted MAE plus wall-clock
timings. Everything is reproducible from (spec, seed): every random
stream is keyed by the seed plus a purpose label, and coefficient draws
deliberately exclude rho so one model spans a whole dependence grid.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .linmodel import LinearModelSpec
from .oracle import (
    CategoricalOracle,
    MixedOracle,
    ThresholdGaussianSpec,
    weighted_mae,
)
from .rng import keyed_rng
from .samplers import SamplerSpec, fit as fit_sampler
from .shapley import kernel_shap_solve
from .tabular import (
    MixedTable,
    aggregate_onehot_shapley,
    one_hot_encode,
    one_hot_encode_row,
)

__all__ = [
    "MethodSpec",
    "ExperimentSpec",
    "MethodResult",
    "ExperimentResult",
    "simulate_mixed_data",
    "make_response_and_model",
    "explain_test_set",
    "run_experiment",
    "run_grid",
]

METHOD_NAMES = ("independence", "empirical", "gaussian", "ctree", "ctree_onehot")

# estimators that cannot handle raw level codes and explain in the
# one-hot encoded space instead
_ONEHOT_METHODS = frozenset({"empirical", "gaussian", "ctree_onehot"})


@dataclass(frozen=True)
class MethodSpec:
    """Estimator selection; k defaults to 100 for gaussian (its draws
    are exact conditionals) and 500 elsewhere."""

    name: str
    k: int | None = None

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}; pick one of {METHOD_NAMES}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    @property
    def resolved_k(self) -> int:
        if self.k is not None:
            return self.k
        return 100 if self.name == "gaussian" else 500


@dataclass(frozen=True)
class ExperimentSpec:
    """One simulation cell: dimensions, dependence, sizes, methods."""

    m: int
    n_cat: int
    n_cont: int
    rho: float
    n_train: int = 1000
    t: int = 2000
    l: int | None = None
    cutoffs: tuple[float, ...] = ()
    methods: tuple[MethodSpec, ...] = (MethodSpec("independence"), MethodSpec("ctree"))
    seed: int = 0
    noise_sd: float = 0.1
    alpha: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "cutoffs", tuple(float(c) for c in self.cutoffs))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.m < 1 or self.n_cat + self.n_cont != self.m:
            raise ValueError(f"need n_cat + n_cont = m >= 1, got {self.n_cat}+{self.n_cont}!={self.m}")
        if not -1.0 / max(self.m - 1, 1) < self.rho < 1.0:
            raise ValueError(f"rho={self.rho} gives a non-PD equicorrelation at m={self.m}")
        if self.n_cat > 0:
            if self.l is None or self.l < 2:
                raise ValueError("categorical features need l >= 2")
            if len(self.cutoffs) != self.l - 1:
                raise ValueError(f"l={self.l} needs {self.l - 1} interior cutoffs, got {len(self.cutoffs)}")
            arr = np.asarray(self.cutoffs)
            if not (np.all(np.isfinite(arr)) and np.all(np.diff(arr) > 0)):
                raise ValueError("interior cutoffs must be finite and increasing")
        if self.n_train < 2:
            raise ValueError(f"n_train must be >= 2, got {self.n_train}")
        if self.t < 1:
            raise ValueError(f"t must be >= 1, got {self.t}")
        if not self.methods:
            raise ValueError("at least one method is required")
        names = [ms.name for ms in self.methods]
        if len(set(names)) != len(names):
            raise ValueError("duplicate method names")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def generative(self) -> ThresholdGaussianSpec:
        return ThresholdGaussianSpec.equicorrelated(
            self.m, self.rho, self.cutoffs, self.n_cat
        )

    @property
    def cell(self) -> str:
        """Grid-cell label without the seed (rho included)."""
        parts = [f"M{self.m}"]
        if self.n_cat:
            parts.append(f"L{self.l}")
        if self.n_cont:
            parts.append(f"cont{self.n_cont}")
        parts.append(f"rho{self.rho:g}")
        return "_".join(parts)

    def _model_key(self) -> tuple:
        # no rho: the same coefficients span a dependence grid
        return (self.m, self.l or 0, self.n_cat, self.n_cont)


def simulate_mixed_data(spec: ExperimentSpec, rng: np.random.Generator) -> MixedTable:
    """n_train rows: latent equicorrelated normal, categorical features
    digitized at the cutoffs, continuous ones passed through."""
    return spec.generative.sample(spec.n_train, rng)


def make_response_and_model(
    table: MixedTable, spec: ExperimentSpec, rng: np.random.Generator
) -> tuple[np.ndarray, LinearModelSpec]:
    """Draw the true linear model, emit noisy responses, refit by OLS.

    Coefficients come from the given stream in feature order (intercept,
    then per feature: one slope or l-1 level effects against reference
    level 1), all standard normal. The returned model is the least
    squares refit on the one-hot design; a rank-deficient design falls
    back to the minimum-norm solution, which is what lstsq computes.
    """
    schema = table.schema
    intercept = float(rng.standard_normal())
    effects = []
    for j in range(schema.m):
        feat = schema.features[j]
        if feat.levels is None:
            effects.append(np.array([float(rng.standard_normal())]))
        else:
            effects.append(np.concatenate([[0.0], rng.standard_normal(len(feat.levels) - 1)]))
    truth = LinearModelSpec(schema, intercept, tuple(effects))

    y = truth.predict(table.values) + spec.noise_sd * rng.standard_normal(table.n_rows)

    encoded, onehot = one_hot_encode(table)
    design = np.column_stack([np.ones(table.n_rows), encoded.values])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    fit_effects = []
    for j, cols in enumerate(onehot.groups):
        block = coef[1 + np.asarray(cols)]
        if schema.features[j].levels is None:
            fit_effects.append(block)
        else:
            fit_effects.append(np.concatenate([[0.0], block]))
    fitted = LinearModelSpec(schema, float(coef[0]), tuple(fit_effects))
    return y, fitted


@dataclass
class MethodResult:
    """One estimator's outcome on one cell."""

    method: MethodSpec
    mae: float | None = None
    fit_seconds: float | None = None
    explain_seconds_per_obs: float | None = None
    phi: np.ndarray | None = None
    phi0: np.ndarray | None = None
    error: str | None = None
    details: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    test: MixedTable | None = None
    weights: np.ndarray | None = None
    true_phi: np.ndarray | None = None
    methods: dict[str, MethodResult] = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _true_values(
    spec: ExperimentSpec, fitted: LinearModelSpec
) -> tuple[MixedTable, np.ndarray, np.ndarray]:
    """Test set, its weights, and exact Shapley values of the fitted
    model: the full combination grid with box-probability weights when
    everything is categorical, fresh uniform draws otherwise."""
    generative = spec.generative
    if spec.n_cont == 0:
        oracle = CategoricalOracle(generative, fitted.predict)
        test, weights = oracle.test_combinations(spec.t)
        true_phi = np.vstack([oracle.true_shapley(test.row(i)).phi for i in range(test.n_rows)])
    else:
        rng = keyed_rng(spec.seed, "test", *spec._model_key(), repr(spec.rho))
        test = generative.sample(spec.t, rng)
        weights = np.full(spec.t, 1.0 / spec.t)
        oracle = MixedOracle(generative, fitted)
        true_phi = np.vstack([oracle.true_shapley(test.row(i)).phi for i in range(test.n_rows)])
    return test, weights, true_phi


def explain_test_set(
    ms: MethodSpec,
    train: MixedTable,
    model: LinearModelSpec,
    test: MixedTable,
    seed: int = 0,
    alpha: float = 0.5,
    threads: int = 1,
) -> MethodResult:
    """Fit one estimator and explain every test row; timed phases.

    Methods that cannot take raw level codes run in the one-hot encoded
    space and their attributions are summed back per original feature.
    """
    result = MethodResult(method=ms)
    kind = "ctree" if ms.name == "ctree_onehot" else ms.name
    spec = SamplerSpec(kind, k=ms.resolved_k, seed=seed, alpha=alpha)

    t0 = time.perf_counter()
    if ms.name in _ONEHOT_METHODS:
        enc_train, onehot = one_hot_encode(train)
        predict = model.encoded_predictor(onehot)
        sampler = fit_sampler(spec, enc_train)
    else:
        onehot = None
        predict = model.predict
        sampler = fit_sampler(spec, train)
    if hasattr(sampler, "prepare"):
        sampler.prepare()  # tree fitting counts as fitting, not explaining
    result.fit_seconds = time.perf_counter() - t0

    t_rows = test.n_rows
    phi = np.empty((t_rows, train.schema.m))
    phi0 = np.empty(t_rows)

    def explain(i: int) -> None:
        # one stream per observation, shared by every method: estimators
        # that consume draws identically produce identical values
        rng = keyed_rng(seed, "explain", i)
        row = test.row(i)
        x = one_hot_encode_row(onehot, row) if onehot is not None else row
        res = kernel_shap_solve(sampler.estimate_contributions(predict, x, rng=rng))
        phi[i] = aggregate_onehot_shapley(onehot, res.phi) if onehot is not None else res.phi
        phi0[i] = res.phi0

    t1 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(explain, range(t_rows)))
    else:
        for i in range(t_rows):
            explain(i)
    result.explain_seconds_per_obs = (time.perf_counter() - t1) / t_rows

    result.phi = phi
    result.phi0 = phi0
    if hasattr(sampler, "root_only_counts"):
        root_only, fitted_trees = sampler.root_only_counts()
        result.details["root_only_trees"] = root_only
        result.details["fitted_trees"] = fitted_trees
    return result


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Run every configured method on one cell.

    A method failure is recorded on its MethodResult and does not stop
    the others; truth or data-generation failures mark the whole cell.
    """
    out = ExperimentResult(spec=spec)
    try:
        rng_train = keyed_rng(spec.seed, "train", *spec._model_key(), repr(spec.rho))
        train = simulate_mixed_data(spec, rng_train)
        rng_model = keyed_rng(spec.seed, "model", *spec._model_key())
        _, fitted = make_response_and_model(train, spec, rng_model)
        test, weights, true_phi = _true_values(spec, fitted)
    except Exception as exc:  # cell-fatal: no truth to compare against
        out.error = f"{type(exc).__name__}: {exc}"
        return out
    out.test, out.weights, out.true_phi = test, weights, true_phi

    for ms in spec.methods:
        try:
            mres = explain_test_set(
                ms, train, fitted, test, seed=spec.seed, alpha=spec.alpha, threads=threads
            )
            mres.mae = weighted_mae(true_phi, mres.phi, weights)
        except Exception as exc:
            mres = MethodResult(method=ms, error=f"{type(exc).__name__}: {exc}")
        out.methods[ms.name] = mres
    return out


def run_grid(specs, threads: int = 1) -> list[ExperimentResult]:
    """Independent cells in sequence; failures stay per-cell."""
    return [run_experiment(spec, threads=threads) for spec in specs]
