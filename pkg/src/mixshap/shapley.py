"""Shapley values from full coalition enumeration.

Two solvers over the same contribution vector: the direct weighted sum
over coalitions, and a kernel-weighted least squares fit whose two
boundary rows (empty and full coalition) are enforced as exact equality
constraints by elimination. On full enumeration both agree to float
precision, and the WLS result satisfies the efficiency identity
phi0 + sum(phi) = v(full) exactly by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NonFiniteContribution, NotAPartition, SingularSystem
from .tabular import Coalition, enumerate_coalitions

# Surrogate weight reported for the empty and full coalitions. The
# solver pins those rows exactly instead of weighting them, so this
# constant only matters to callers assembling their own systems.
LARGE_COALITION_WEIGHT = 1e6

EFFICIENCY_TOL = 1e-8

__all__ = [
    "ContributionVector",
    "ShapleyResult",
    "shapley_kernel_weight",
    "shapley_direct",
    "kernel_shap_solve",
    "group_shapley",
    "LARGE_COALITION_WEIGHT",
    "EFFICIENCY_TOL",
]


@dataclass(frozen=True)
class ContributionVector:
    """v(S) for every coalition, indexed by ascending bitmask."""

    m: int
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.shape != (1 << self.m,):
            raise ValueError(
                f"need 2^{self.m} = {1 << self.m} contributions, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise NonFiniteContribution("contribution vector has NaN or inf entries")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def value(self, coalition: Coalition) -> float:
        return float(self.values[coalition.mask])

    @property
    def v_empty(self) -> float:
        return float(self.values[0])

    @property
    def v_full(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class ShapleyResult:
    """phi0 plus one value per feature; predicted is v(full)."""

    phi0: float
    phi: np.ndarray
    predicted: float
    x_star: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))

    @property
    def efficiency_gap(self) -> float:
        return float(self.phi0 + self.phi.sum() - self.predicted)


def shapley_kernel_weight(m: int, s: int) -> float:
    """Kernel SHAP weight for a coalition of size s among m features.

    Interior sizes get (m-1) / (C(m,s) * s * (m-s)); the boundary sizes
    0 and m get the large finite surrogate standing in for the infinite
    weight of the two exact constraints.
    """
    if not 0 <= s <= m:
        raise ValueError(f"coalition size {s} outside 0..{m}")
    if s == 0 or s == m:
        return LARGE_COALITION_WEIGHT
    return (m - 1) / (math.comb(m, s) * s * (m - s))


def _popcounts(m: int) -> np.ndarray:
    return np.bitwise_count(np.arange(1 << m, dtype=np.uint32)).astype(np.int64)


def shapley_direct(v: ContributionVector) -> ShapleyResult:
    """Exact Shapley values by the weighted sum over all coalitions.

    phi_j = sum over S not containing j of
            |S|! (m - |S| - 1)! / m! * (v(S + j) - v(S)).
    """
    m = v.m
    values = v.values
    if m == 0:
        return ShapleyResult(phi0=values[0], phi=np.empty(0), predicted=values[0])
    sizes = _popcounts(m)
    fact = [math.factorial(k) for k in range(m + 1)]
    size_weight = np.array(
        [fact[s] * fact[m - s - 1] / fact[m] for s in range(m)], dtype=float
    )
    masks = np.arange(1 << m, dtype=np.int64)
    phi = np.empty(m)
    for j in range(m):
        without = masks[(masks >> j) & 1 == 0]
        gains = values[without | (1 << j)] - values[without]
        phi[j] = float(np.dot(size_weight[sizes[without]], gains))
    return ShapleyResult(phi0=float(values[0]), phi=phi, predicted=float(values[-1]))


def kernel_shap_solve(v: ContributionVector) -> ShapleyResult:
    """Shapley values as the solution of the kernel-weighted least
    squares problem over all coalition rows.

    The boundary rows pin phi0 = v(empty) and phi0 + sum(phi) = v(full)
    exactly; the remaining coordinates solve the interior WLS after
    eliminating those two constraints. With full enumeration this
    reproduces shapley_direct to float precision.
    """
    m = v.m
    values = v.values
    if m == 0:
        return ShapleyResult(phi0=float(values[0]), phi=np.empty(0), predicted=float(values[0]))
    phi0 = float(values[0])
    total = float(values[-1]) - phi0
    if m == 1:
        return ShapleyResult(phi0=phi0, phi=np.array([total]), predicted=float(values[-1]))

    sizes = _popcounts(m)
    interior = np.flatnonzero((sizes > 0) & (sizes < m))
    z = (interior[:, None] >> np.arange(m)[None, :]) & 1  # (rows, m) membership
    weights = np.array([shapley_kernel_weight(m, int(s)) for s in sizes[interior]])

    # eliminate phi0 and the last coordinate:
    #   phi_last = total - sum(others), target shifts accordingly
    last = z[:, -1].astype(float)
    design = z[:, :-1].astype(float) - last[:, None]
    target = values[interior] - phi0 - last * total
    wd = design * weights[:, None]
    gram = wd.T @ design
    rhs = wd.T @ target
    try:
        head = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        head, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
        if not np.all(np.isfinite(head)):
            raise SingularSystem(
                f"kernel system for m={m} is singular and has no finite solution"
            ) from None
    phi = np.empty(m)
    phi[:-1] = head
    phi[-1] = total - head.sum()
    return ShapleyResult(phi0=phi0, phi=phi, predicted=float(values[-1]))


def group_shapley(
    result: ShapleyResult, groups: Sequence[Sequence[int]]
) -> tuple[np.ndarray, np.ndarray]:
    """Sum Shapley values over disjoint feature groups and rank them.

    Groups must partition 0..m-1. Rank 1 marks the largest absolute
    group value; ties resolve to the lower group index, so an all-zero
    result ranks groups in index order.
    """
    m = result.phi.shape[0]
    seen: set[int] = set()
    for group in groups:
        for j in group:
            if not 0 <= j < m or j in seen:
                raise NotAPartition(
                    f"feature {j} repeated or out of range in groups {groups!r}"
                )
            seen.add(j)
    if len(seen) != m:
        missing = sorted(set(range(m)) - seen)
        raise NotAPartition(f"features {missing} missing from groups")
    values = np.array([result.phi[list(group)].sum() for group in groups])
    order = sorted(range(len(groups)), key=lambda g: (-abs(values[g]), g))
    ranks = np.empty(len(groups), dtype=int)
    for position, g in enumerate(order, start=1):
        ranks[g] = position
    return values, ranks
