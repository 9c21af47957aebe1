"""Conditional samplers for the contribution function v(S).

Four strategies estimate E[f(x) | x_S = x*_S]: independence (marginal
draws), empirical (kernel-weighted training rows), Gaussian (exact
conditional normal), and ctree (draws from the leaf that x*_S routes
to). All of them produce full rows with x*_S spliced in, so the model
is always evaluated on complete feature vectors.

RNG discipline matters here: every sampler consumes the generator in
the same pattern (one integers() call per coalition in ascending mask
order), which makes ctree with all-root-only trees return bit-identical
results to the independence sampler under a shared stream.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ctree import CtreeConfig, CtreeModel, fit_ctree
from .errors import (
    DegenerateCovariance,
    CholeskyFailure,
    NonFinitePrediction,
    SchemaUnsupported,
    UnfittedCoalition,
)
from .gaussian import MvnSpec, conditional_affine
from .rng import keyed_rng
from .shapley import ContributionVector
from .tabular import Coalition, MixedTable, validate_row

__all__ = ["SamplerSpec", "FittedSampler", "fit"]

PredictFn = Callable[[np.ndarray], np.ndarray]

_KINDS = ("independence", "empirical", "gaussian", "ctree")


@dataclass(frozen=True)
class SamplerSpec:
    """Which strategy to fit plus its knobs.

    k is the per-coalition sample count; seed feeds the fallback RNG
    streams when no generator is passed to a call. bandwidth/mass only
    apply to the empirical kind, mu/sigma to the Gaussian kind (None
    means: estimate from the training table), alpha/min_node to ctree.
    enumerate_all swaps sampling for full enumeration of the candidate
    rows (independence and ctree only), removing Monte Carlo noise.
    """

    kind: str
    k: int = 500
    seed: int = 0
    bandwidth: float = 0.1
    mass: float = 0.95
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    alpha: float = 0.5
    min_node: int = 7
    enumerate_all: bool = False

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; pick one of {_KINDS}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not 0 < self.mass <= 1:
            raise ValueError(f"mass must lie in (0, 1], got {self.mass}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.min_node < 1:
            raise ValueError(f"min_node must be >= 1, got {self.min_node}")


def fit(spec: SamplerSpec, train: MixedTable) -> "FittedSampler":
    """Build the sampler for spec.kind on the training table."""
    if train.n_rows == 0:
        raise ValueError("cannot fit a sampler on an empty table")
    cls = {
        "independence": IndependenceSampler,
        "empirical": EmpiricalSampler,
        "gaussian": GaussianSampler,
        "ctree": CtreeSampler,
    }[spec.kind]
    return cls(spec, train)


class FittedSampler:
    """Shared splice/estimate machinery; subclasses supply the draws."""

    def __init__(self, spec: SamplerSpec, train: MixedTable):
        self.spec = spec
        self.train = train
        self.schema = train.schema

    @property
    def n_train(self) -> int:
        return self.train.n_rows

    # -- kind-specific hook -------------------------------------------------

    def _conditional_rows(
        self, s: Coalition, x_star: np.ndarray, k: int, rng: np.random.Generator
    ) -> np.ndarray:
        """(k, M) full rows whose S-columns equal x*_S."""
        raise NotImplementedError

    def _splice(self, rows: np.ndarray, s: Coalition, x_star: np.ndarray) -> np.ndarray:
        if not s.is_empty:
            members = list(s.members)
            rows[:, members] = x_star[members]
        return rows

    def _check_coalition(self, s: Coalition) -> None:
        if s.m != self.schema.m:
            raise UnfittedCoalition(
                f"coalition is over {s.m} features, sampler was fitted on {self.schema.m}"
            )

    # -- public API ----------------------------------------------------------

    def sample_conditional(
        self,
        s: Coalition,
        x_star: np.ndarray | Sequence[float],
        k: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """K full rows drawn from the conditional given x_S = x*_S.

        S = full returns K copies of x_star; S = empty returns
        unconditional draws. With enumerate_all the candidate rows come
        back once each instead of K times with replacement.
        """
        self._check_coalition(s)
        x_star = validate_row(self.schema, x_star)
        k = self.spec.k if k is None else k
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if rng is None:
            rng = keyed_rng(self.spec.seed, "sample", s.mask)
        if s.is_full:
            return np.tile(x_star, (k, 1))
        return self._conditional_rows(s, x_star, k, rng)

    def estimate_contributions(
        self,
        predict: PredictFn,
        x_star: np.ndarray | Sequence[float],
        k: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> ContributionVector:
        """v(S) for all 2^M coalitions in ascending mask order.

        v(full) is the exact model value at x_star; every other
        coalition averages predictions over conditional samples (the
        empirical kind replaces the average with its kernel weights).
        """
        x_star = validate_row(self.schema, x_star)
        k = self.spec.k if k is None else k
        if rng is None:
            rng = keyed_rng(self.spec.seed, "estimate")
        m = self.schema.m
        full_mask = (1 << m) - 1
        values = np.empty(1 << m)
        for mask in range(full_mask):
            s = Coalition(mask, m)
            values[mask] = self._coalition_value(s, predict, x_star, k, rng)
        values[full_mask] = _finite(predict(x_star[None, :]))[0]
        return ContributionVector(m, values)

    def _coalition_value(
        self,
        s: Coalition,
        predict: PredictFn,
        x_star: np.ndarray,
        k: int,
        rng: np.random.Generator,
    ) -> float:
        rows = self._conditional_rows(s, x_star, k, rng)
        return float(_finite(predict(rows)).mean())


def _finite(pred) -> np.ndarray:
    arr = np.asarray(pred, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise NonFinitePrediction("model returned NaN or infinite predictions")
    return arr


class IndependenceSampler(FittedSampler):
    """Marginal draws: x_S̄ comes from random training rows regardless
    of x*_S (the splice is still applied)."""

    def _conditional_rows(self, s, x_star, k, rng):
        if self.spec.enumerate_all:
            rows = self.train.values.copy()
        else:
            idx = rng.integers(0, self.n_train, k)
            rows = self.train.values[idx]
        return self._splice(rows, s, x_star)


class CtreeSampler(FittedSampler):
    """Leaf draws from per-coalition conditional inference trees.

    Trees are fitted lazily (response x_S̄ on predictors x_S) and
    memoized; the memo insert is lock-protected so concurrent explainers
    fit each tree exactly once. A root-only tree has the whole training
    set as its single leaf, which reduces this sampler to independence.
    """

    def __init__(self, spec: SamplerSpec, train: MixedTable):
        super().__init__(spec, train)
        self._config = CtreeConfig(alpha=spec.alpha, min_node=spec.min_node)
        self._trees: dict[int, CtreeModel] = {}
        self._lock = threading.Lock()

    def tree_for(self, s: Coalition) -> CtreeModel:
        self._check_coalition(s)
        if s.is_empty or s.is_full:
            raise UnfittedCoalition("trees exist only for proper nonempty coalitions")
        model = self._trees.get(s.mask)
        if model is not None:
            return model
        with self._lock:
            model = self._trees.get(s.mask)
            if model is None:
                members = list(s.members)
                rest = list(s.complement().members)
                model = fit_ctree(
                    self.train.select(members), self.train.select(rest), self._config
                )
                self._trees[s.mask] = model
        return model

    def prepare(self) -> "CtreeSampler":
        """Fit every tree up front so explain-phase timings exclude
        tree construction."""
        m = self.schema.m
        for mask in range(1, (1 << m) - 1):
            self.tree_for(Coalition(mask, m))
        return self

    def fitted_trees(self) -> dict[int, CtreeModel]:
        with self._lock:
            return dict(self._trees)

    def root_only_counts(self) -> tuple[int, int]:
        """(root-only trees, fitted trees) at this point in time."""
        trees = self.fitted_trees()
        return sum(t.is_root_only for t in trees.values()), len(trees)

    def _conditional_rows(self, s, x_star, k, rng):
        if s.is_empty:
            # no conditioning: same uniform draw as the independence kind
            if self.spec.enumerate_all:
                rows = self.train.values.copy()
            else:
                rows = self.train.values[rng.integers(0, self.n_train, k)]
            return self._splice(rows, s, x_star)
        tree = self.tree_for(s)
        leaf = tree.route(x_star[list(s.members)])
        if self.spec.enumerate_all:
            rows = self.train.values[leaf.rows]
        else:
            rows = self.train.values[leaf.rows[rng.integers(0, len(leaf.rows), k)]]
        return self._splice(rows, s, x_star)


class EmpiricalSampler(FittedSampler):
    """Kernel-weighted training rows, all-continuous schemas only.

    Weights decay with the scaled Mahalanobis distance between x*_S and
    each row's S-columns; only the smallest row set carrying ``mass`` of
    the total weight is kept. Contributions use the weighted average
    directly instead of Monte Carlo draws.
    """

    def __init__(self, spec: SamplerSpec, train: MixedTable):
        if train.schema.categorical_indices:
            raise SchemaUnsupported(
                "empirical sampler needs an all-continuous schema; one-hot "
                "encode categorical features first"
            )
        super().__init__(spec, train)
        # column covariance once; per-coalition blocks are sliced from it
        centered = train.values - train.values.mean(axis=0)
        denom = max(train.n_rows - 1, 1)
        self._cov = centered.T @ centered / denom

    def retained_rows(
        self, s: Coalition, x_star: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """(row indices, normalized weights), weights nonincreasing."""
        self._check_coalition(s)
        n = self.n_train
        if s.is_empty:
            return np.arange(n), np.full(n, 1.0 / n)
        members = list(s.members)
        diff = self.train.values[:, members] - x_star[members]
        block = self._cov[np.ix_(members, members)]
        # pseudoinverse tolerates duplicated or constant columns
        d2 = np.einsum("ij,jk,ik->i", diff, np.linalg.pinv(block), diff) / len(members)
        log_w = -d2 / (2.0 * self.spec.bandwidth**2)
        log_w -= log_w.max()  # distant x* would underflow every weight
        w = np.exp(log_w)
        order = np.argsort(-w, kind="stable")
        sorted_w = w[order]
        cum = np.cumsum(sorted_w) / sorted_w.sum()
        keep = int(np.searchsorted(cum, self.spec.mass) + 1)
        idx = order[:keep]
        kept = sorted_w[:keep]
        return idx, kept / kept.sum()

    def _conditional_rows(self, s, x_star, k, rng):
        idx, weights = self.retained_rows(s, x_star)
        pick = rng.choice(idx, size=k, p=weights)
        return self._splice(self.train.values[pick], s, x_star)

    def _coalition_value(self, s, predict, x_star, k, rng):
        idx, weights = self.retained_rows(s, x_star)
        rows = self._splice(self.train.values[idx], s, x_star)
        return float(weights @ _finite(predict(rows)))


class GaussianSampler(FittedSampler):
    """Exact multivariate-normal conditionals, all-continuous schemas.

    mu/sigma default to training moments. Per-coalition affine pieces
    (conditional mean map and covariance) are cached; draws then cost
    one matrix multiply per call.
    """

    def __init__(self, spec: SamplerSpec, train: MixedTable):
        if train.schema.categorical_indices:
            raise SchemaUnsupported(
                "gaussian sampler needs an all-continuous schema; one-hot "
                "encode categorical features first"
            )
        super().__init__(spec, train)
        mu = np.asarray(spec.mu, dtype=float) if spec.mu is not None else train.values.mean(axis=0)
        if spec.sigma is not None:
            sigma = np.asarray(spec.sigma, dtype=float)
        else:
            centered = train.values - train.values.mean(axis=0)
            sigma = centered.T @ centered / max(train.n_rows - 1, 1)
        try:
            self._mvn = MvnSpec(mu, sigma)
        except CholeskyFailure as exc:
            raise DegenerateCovariance(str(exc)) from None
        self._plans: dict[int, tuple[np.ndarray, np.ndarray, MvnSpec]] = {}
        self._lock = threading.Lock()

    def _plan(self, s: Coalition) -> tuple[np.ndarray, np.ndarray, MvnSpec]:
        plan = self._plans.get(s.mask)
        if plan is not None:
            return plan
        with self._lock:
            plan = self._plans.get(s.mask)
            if plan is None:
                base, coef, cov = conditional_affine(self._mvn, list(s.members))
                try:
                    noise = MvnSpec(np.zeros(len(base)), cov)
                except CholeskyFailure as exc:
                    raise DegenerateCovariance(str(exc)) from None
                plan = (base, coef, noise)
                self._plans[s.mask] = plan
        return plan

    def _conditional_rows(self, s, x_star, k, rng):
        base, coef, noise = self._plan(s)
        members = list(s.members)
        mean = base + coef @ x_star[members]
        draws = mean + rng.standard_normal((k, noise.dim)) @ noise.chol.T
        rows = np.empty((k, self.schema.m))
        rest = list(s.complement().members)
        rows[:, rest] = draws
        if members:
            rows[:, members] = x_star[members]
        return rows
