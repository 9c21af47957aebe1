"""Multivariate normal utilities: conditioning, sampling, rectangle
probabilities, and 1-D adaptive quadrature.

Rectangle probabilities P(lower < X <= upper) use separation of
variables after a Cholesky factorization of the correlation matrix:
dimensions 1-3 integrate the transformed integrand with deterministic
Gauss-Legendre tensor rules, dimensions 4-12 with scrambled Sobol
points averaged over independently scrambled replicates whose spread
gives the reported error estimate. A batch entry point amortizes the
transform across many boxes sharing one covariance, which is what the
exact oracle needs when it tabulates a full cut-off grid.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .errors import (
    CholeskyFailure,
    MaxSubdivisionsExceeded,
    NonPDCovariance,
    SingularBlock,
)

__all__ = [
    "MvnSpec",
    "Rectangle",
    "RectProb",
    "equicorrelation",
    "conditional_mvn",
    "conditional_affine",
    "sample_mvn",
    "mvn_rectangle_prob",
    "mvn_rectangle_prob_batch",
    "integrate_1d",
    "integrate_1d_vec",
]

# beyond this many standard deviations Phi is 0 or 1 to double precision
_TAIL_CLIP = 37.0
_UNIT_EPS = 1e-15

MAX_RECTANGLE_DIM = 12
QMC_SHIFTS = 20
_QMC_BASE_SEED = 0x9E3779B9  # fixed so probabilities are pure functions of their inputs


@dataclass(frozen=True)
class MvnSpec:
    """Mean vector and positive definite covariance, validated once."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        d = mu.shape[0]
        if mu.ndim != 1 or not np.all(np.isfinite(mu)):
            raise ValueError("mu must be a finite 1-D vector")
        if sigma.shape != (d, d) or not np.all(np.isfinite(sigma)):
            raise ValueError(f"sigma must be finite with shape ({d}, {d})")
        if np.max(np.abs(sigma - sigma.T)) > 1e-12:
            raise ValueError("sigma is not symmetric within 1e-12")
        sigma = (sigma + sigma.T) / 2.0
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise CholeskyFailure(
                "sigma is not positive definite (Cholesky failed)"
            ) from None
        mu = mu.copy()
        mu.setflags(write=False)
        sigma.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of sigma."""
        return self._chol

    def marginal(self, indices: Sequence[int]) -> "MvnSpec":
        idx = list(indices)
        return MvnSpec(self.mu[idx], self.sigma[np.ix_(idx, idx)])


class Rectangle(NamedTuple):
    """Axis-aligned box; +-inf bounds are allowed, lower < upper per axis."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def make(cls, lower, upper) -> "Rectangle":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("rectangle bounds must be 1-D and equally long")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("rectangle bounds must not be NaN")
        if np.any(lo >= hi):
            raise ValueError("rectangle needs lower < upper on every axis")
        return cls(lo, hi)


class RectProb(NamedTuple):
    value: float
    error: float
    converged: bool


def equicorrelation(m: int, rho: float) -> np.ndarray:
    """Correlation matrix with constant off-diagonal rho.

    Positive definiteness requires rho > -1/(m-1) and rho < 1.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    lo = -1.0 / (m - 1) if m > 1 else -1.0
    if not (lo < rho < 1.0):
        raise NonPDCovariance(
            f"equicorrelation with m={m} needs rho in ({lo:.4g}, 1), got {rho}"
        )
    out = np.full((m, m), rho)
    np.fill_diagonal(out, 1.0)
    return out


def conditional_affine(
    spec: MvnSpec, given: Sequence[int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine form of Gaussian conditioning on the ``given`` coordinates.

    Returns (base, coef, cov) with conditional mean base + coef @ x_given
    and constant conditional covariance cov over the remaining
    coordinates, in their original relative order.
    """
    given = list(given)
    rest = [j for j in range(spec.dim) if j not in given]
    if len(set(given)) != len(given):
        raise ValueError("given indices must be distinct")
    if not given:
        return spec.mu.copy(), np.zeros((spec.dim, 0)), spec.sigma.copy()
    s_gg = spec.sigma[np.ix_(given, given)]
    s_rg = spec.sigma[np.ix_(rest, given)]
    try:
        # coef = Sigma_rg Sigma_gg^-1, via a solve on the symmetric block
        coef = np.linalg.solve(s_gg, s_rg.T).T
    except np.linalg.LinAlgError:
        raise SingularBlock(
            f"conditioning block {given} is singular"
        ) from None
    cov = spec.sigma[np.ix_(rest, rest)] - coef @ s_rg.T
    cov = (cov + cov.T) / 2.0
    base = spec.mu[rest] - coef @ spec.mu[given]
    return base, coef, cov


def conditional_mvn(
    spec: MvnSpec, given: Sequence[int], values: Sequence[float]
) -> MvnSpec:
    """Distribution of the remaining coordinates given exact values for
    the ``given`` ones."""
    values = np.asarray(values, dtype=float)
    given = list(given)
    if values.shape != (len(given),):
        raise ValueError("one conditioning value per given index required")
    base, coef, cov = conditional_affine(spec, given)
    return MvnSpec(base + coef @ values, cov)


def sample_mvn(spec: MvnSpec, k: int, rng: np.random.Generator) -> np.ndarray:
    """k rows drawn from the distribution, shape (k, d)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    z = rng.standard_normal((k, spec.dim))
    return spec.mu + z @ spec.chol.T


# ---------------------------------------------------------------------------
# rectangle probabilities


def _standardize(
    spec: MvnSpec, lowers: np.ndarray, uppers: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sd = np.sqrt(np.diag(spec.sigma))
    corr = spec.sigma / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    lo = np.clip((lowers - spec.mu) / sd, -_TAIL_CLIP, _TAIL_CLIP)
    hi = np.clip((uppers - spec.mu) / sd, -_TAIL_CLIP, _TAIL_CLIP)
    return corr, lo, hi


def _genz_order(corr: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Integration order: most restrictive axis first."""
    width = ndtr(hi) - ndtr(lo)
    return np.argsort(width, kind="stable")


def _sov_transform(
    chol: np.ndarray, lo: np.ndarray, hi: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Separation-of-variables integrand for boxes sharing one factor.

    chol: (d, d) lower factor of the correlation matrix.
    lo, hi: (B, d) standardized limits.
    u: (n, d-1) points in the open unit cube.
    Returns f values with shape (B, n); their mean over the unit cube is
    the rectangle probability of each box.
    """
    boxes, d = lo.shape
    n = u.shape[0]
    dlo = ndtr(lo[:, [0]] / chol[0, 0])  # (B, 1)
    dhi = ndtr(hi[:, [0]] / chol[0, 0])
    f = np.broadcast_to(dhi - dlo, (boxes, n)).copy()
    if d == 1:
        return f
    y = np.empty((boxes, n, d - 1))
    dlo = np.broadcast_to(dlo, (boxes, n)).copy()
    dhi = np.broadcast_to(dhi, (boxes, n)).copy()
    for i in range(1, d):
        q = dlo + u[None, :, i - 1] * (dhi - dlo)
        np.clip(q, _UNIT_EPS, 1.0 - _UNIT_EPS, out=q)
        y[:, :, i - 1] = ndtri(q)
        shift = np.einsum("j,bnj->bn", chol[i, :i], y[:, :, :i])
        dlo = ndtr((lo[:, [i]] - shift) / chol[i, i])
        dhi = ndtr((hi[:, [i]] - shift) / chol[i, i])
        f *= dhi - dlo
    return f


def _gl_unit_nodes(n: int, dims: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on [0,1]^dims: (points, weights)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    if dims == 1:
        return x[:, None], w
    grids = np.meshgrid(*([x] * dims), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.ones(points.shape[0])
    mesh_w = np.meshgrid(*([w] * dims), indexing="ij")
    for g in mesh_w:
        weights *= g.ravel()
    return points, weights


def _rect_deterministic(
    chol: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """d in {2, 3}: two tensor rules, difference as the error estimate."""
    d = lo.shape[1]
    orders = (48, 96) if d == 2 else (24, 40)
    estimates = []
    for n in orders:
        pts, wts = _gl_unit_nodes(n, d - 1)
        f = _sov_transform(chol, lo, hi, pts)
        estimates.append(f @ wts)
    err = np.abs(estimates[1] - estimates[0]) + 1e-15
    return np.clip(estimates[1], 0.0, 1.0), err


def _qmc_points(d: int, n_log2: int, seed_seq: np.random.SeedSequence) -> list[np.ndarray]:
    """QMC_SHIFTS independently scrambled Sobol streams of 2^n_log2 points."""
    children = seed_seq.spawn(QMC_SHIFTS)
    out = []
    for child in children:
        sob = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(child))
        out.append(sob.random(2**n_log2))
    return out


def _rect_qmc(
    chol: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    accuracy: float,
    seed_material: tuple[int, ...],
) -> tuple[np.ndarray, np.ndarray]:
    """d >= 4 (or stubborn d <= 3 boxes): randomized QMC with escalation."""
    d = lo.shape[1]
    boxes = lo.shape[0]
    values = np.zeros(boxes)
    errors = np.full(boxes, np.inf)
    for n_log2 in (9, 11, 13):
        seed_seq = np.random.SeedSequence((*seed_material, n_log2))
        shift_means = np.empty((QMC_SHIFTS, boxes))
        for s, pts in enumerate(_qmc_points(d - 1, n_log2, seed_seq)):
            shift_means[s] = _sov_transform(chol, lo, hi, pts).mean(axis=1)
        values = shift_means.mean(axis=0)
        sem = shift_means.std(axis=0, ddof=1) / math.sqrt(QMC_SHIFTS)
        errors = 3.0 * sem
        if np.all(errors <= accuracy):
            break
    return np.clip(values, 0.0, 1.0), errors


def mvn_rectangle_prob(
    spec: MvnSpec,
    rect: Rectangle,
    accuracy: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> RectProb:
    """P(lower < X <= upper) with an error estimate.

    Deterministic quadrature decides d <= 3; higher dimensions use
    randomized QMC whose replicate spread gives the error (3 standard
    errors over the scrambles). When the target accuracy is not reached
    the best estimate comes back with converged=False rather than an
    exception. Pass rng to re-randomize the scrambling; by default a
    fixed internal seed makes the result a pure function of the inputs.
    """
    rect = Rectangle.make(rect.lower, rect.upper)
    d = rect.lower.shape[0]
    if d != spec.dim:
        raise ValueError(f"rectangle dim {d} != distribution dim {spec.dim}")
    if d > MAX_RECTANGLE_DIM:
        raise ValueError(
            f"rectangle probabilities support d <= {MAX_RECTANGLE_DIM}, got {d}"
        )
    corr, lo, hi = _standardize(spec, rect.lower[None, :], rect.upper[None, :])
    if d == 1:
        p = float(ndtr(hi[0, 0]) - ndtr(lo[0, 0]))
        return RectProb(max(p, 0.0), 1e-15, True)
    order = _genz_order(corr, lo[0], hi[0])
    corr = corr[np.ix_(order, order)]
    lo, hi = lo[:, order], hi[:, order]
    chol = _chol_correlation(corr)
    if d <= 3:
        values, errors = _rect_deterministic(chol, lo, hi)
        if errors[0] <= accuracy:
            return RectProb(float(values[0]), float(errors[0]), True)
    seed_material = _seed_material(rng)
    values, errors = _rect_qmc(chol, lo, hi, accuracy, seed_material)
    return RectProb(float(values[0]), float(errors[0]), bool(errors[0] <= accuracy))


def mvn_rectangle_prob_batch(
    spec: MvnSpec,
    lowers: np.ndarray,
    uppers: np.ndarray,
    accuracy: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Probabilities for many boxes under one covariance.

    Returns (values, errors, converged). The batch path shares a single
    Cholesky factor in natural axis order; boxes whose error estimate
    misses the target are retried one at a time with per-box axis
    reordering before being flagged.
    """
    lowers = np.atleast_2d(np.asarray(lowers, dtype=float))
    uppers = np.atleast_2d(np.asarray(uppers, dtype=float))
    if lowers.shape != uppers.shape or lowers.shape[1] != spec.dim:
        raise ValueError("batch bounds must share shape (B, dim)")
    if np.any(lowers >= uppers):
        raise ValueError("batch rectangles need lower < upper everywhere")
    d = spec.dim
    if d > MAX_RECTANGLE_DIM:
        raise ValueError(
            f"rectangle probabilities support d <= {MAX_RECTANGLE_DIM}, got {d}"
        )
    boxes = lowers.shape[0]
    corr, lo, hi = _standardize(spec, lowers, uppers)
    if d == 1:
        values = np.maximum(ndtr(hi[:, 0]) - ndtr(lo[:, 0]), 0.0)
        return values, np.full(boxes, 1e-15), np.ones(boxes, dtype=bool)
    chol = _chol_correlation(corr)
    values = np.empty(boxes)
    errors = np.empty(boxes)
    chunk = max(1, int(2_000_000 // max(1, 2**11)))
    for start in range(0, boxes, chunk):
        sl = slice(start, min(start + chunk, boxes))
        if d <= 3:
            values[sl], errors[sl] = _rect_deterministic(chol, lo[sl], hi[sl])
        else:
            values[sl], errors[sl] = _rect_qmc(
                chol, lo[sl], hi[sl], accuracy, (*_seed_material(rng), start)
            )
    stubborn = np.flatnonzero(errors > accuracy)
    for i in stubborn:
        result = mvn_rectangle_prob(
            spec, Rectangle.make(lowers[i], uppers[i]), accuracy, rng
        )
        values[i], errors[i] = result.value, result.error
    return values, errors, errors <= accuracy


def _chol_correlation(corr: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        # nudge just enough to factor near-singular correlations
        bumped = corr + 1e-12 * np.eye(corr.shape[0])
        try:
            return np.linalg.cholesky(bumped)
        except np.linalg.LinAlgError:
            raise CholeskyFailure(
                "correlation matrix is not positive definite"
            ) from None


def _seed_material(rng: np.random.Generator | None) -> tuple[int, ...]:
    if rng is None:
        return (_QMC_BASE_SEED,)
    return (_QMC_BASE_SEED, int(rng.integers(0, 2**31 - 1)))


# ---------------------------------------------------------------------------
# adaptive Gauss-Kronrod quadrature

# 15-point Kronrod extension of the 7-point Gauss rule on [-1, 1]
_XK = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0, 0.207784955007898, 0.405845151377397,
    0.586087235467691, 0.741531185599394, 0.864864423359769,
    0.949107912342759, 0.991455371120813,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529,
])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
])
_GAUSS_SLICE = slice(1, 15, 2)


def _gk15(f_vec: Callable[[np.ndarray], np.ndarray], a: float, b: float):
    half = (b - a) / 2.0
    mid = (b + a) / 2.0
    values = np.asarray(f_vec(mid + half * _XK), dtype=float)
    if values.shape[0] != 15:
        raise ValueError("vector integrand must return one row per node")
    i_k = half * np.tensordot(_WK, values, axes=(0, 0))
    i_g = half * np.tensordot(_WG, values[_GAUSS_SLICE], axes=(0, 0))
    err = float(np.max(np.abs(np.atleast_1d(i_k - i_g))))
    return i_k, err


def integrate_1d_vec(
    f: Callable[[np.ndarray], np.ndarray],
    lower: float,
    upper: float,
    tol: float = 1e-8,
    limit: int = 200,
) -> np.ndarray:
    """Adaptive Gauss-Kronrod for a vector-valued integrand.

    f maps an array of n points to shape (n,) or (n, c); all components
    are driven below tol (absolute, per component) together. Infinite
    bounds are folded to a finite interval by the substitution x=tan(t).
    Raises MaxSubdivisionsExceeded when the interval budget runs out; the
    exception carries the best estimate.
    """
    if not lower < upper:
        raise ValueError(f"need lower < upper, got [{lower}, {upper}]")
    g = f
    a, b = float(lower), float(upper)
    if math.isinf(a) or math.isinf(b):
        a_t = math.atan(a) if not math.isinf(a) else (-math.pi / 2 if a < 0 else math.pi / 2)
        b_t = math.atan(b) if not math.isinf(b) else (math.pi / 2 if b > 0 else -math.pi / 2)

        def g(t, _inner=f):
            x = np.tan(t)
            jac = 1.0 + x * x
            vals = np.asarray(_inner(x), dtype=float)
            return vals * (jac if vals.ndim == 1 else jac[:, None])

        a, b = a_t, b_t

    estimate, err = _gk15(g, a, b)
    segments = [(-err, 0, a, b, estimate)]
    counter = 1
    total_err = err
    while total_err > tol:
        if len(segments) >= limit:
            total = sum(seg[4] for seg in segments)
            raise MaxSubdivisionsExceeded(
                f"quadrature error {total_err:.3e} > tol {tol:.3e} "
                f"after {len(segments)} segments",
                estimate=total,
            )
        neg_err, _, sa, sb, _ = heapq.heappop(segments)
        mid = (sa + sb) / 2.0
        left, err_l = _gk15(g, sa, mid)
        right, err_r = _gk15(g, mid, sb)
        heapq.heappush(segments, (-err_l, counter, sa, mid, left))
        counter += 1
        heapq.heappush(segments, (-err_r, counter, mid, sb, right))
        counter += 1
        total_err += err_l + err_r - (-neg_err)
    return sum(seg[4] for seg in segments)


def integrate_1d(
    f: Callable[[float], float],
    lower: float,
    upper: float,
    tol: float = 1e-8,
    limit: int = 200,
) -> float:
    """Adaptive Gauss-Kronrod integral of a scalar function.

    Same engine as integrate_1d_vec; the callable is evaluated pointwise
    so it does not need to accept arrays.
    """

    def batched(xs: np.ndarray) -> np.ndarray:
        return np.array([f(float(x)) for x in xs])

    return float(integrate_1d_vec(batched, lower, upper, tol=tol, limit=limit))
