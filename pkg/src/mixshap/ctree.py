"""Conditional inference trees for mixed predictors and responses.

Each node tests the global null "response independent of every
predictor" through standardized linear statistics T = g(x)' h(y):
g is the identity for continuous predictors and a full indicator block
for categorical ones, h concatenates the same encodings over the
response columns. T is centered and standardized by its permutation
mean and covariance, which factorizes as B (predictor side) times
Vh (response side), so the quadratic form is evaluated in the two
eigenbases without forming the Kronecker product.

The chi-squared reference for the quadratic form uses the full
dimension of T, not the covariance rank. For continuous data the two
coincide and the test is calibrated; indicator blocks carry redundant
coordinates, which makes the categorical tests deliberately
conservative: with dependence absent the fitted trees collapse to the
root with high probability instead of chasing permutation noise, while
real dependence still produces statistics far beyond either reference.

Splitting picks the feature with the smallest partial p-value
(Bonferroni over the tested predictors for the global decision), then
the cut point maximizing the standardized two-sample statistic of the
response between the candidate sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from .errors import EmptyLeaf, RowMisalignment
from .rng import keyed_rng
from .tabular import FeatureSchema, MixedTable

RANK_TOL = 1e-10

__all__ = [
    "CtreeConfig",
    "SplitRule",
    "CtreeNode",
    "CtreeModel",
    "independence_test",
    "fit_ctree",
]


@dataclass(frozen=True)
class CtreeConfig:
    """alpha: split when the Bonferroni-adjusted global p falls below it.
    min_node: smallest admissible child size (the root itself may stay
    smaller when it never splits). test: 'asymptotic' or 'montecarlo'."""

    alpha: float = 0.5
    min_node: int = 7
    max_depth: int | None = None
    test: str = "asymptotic"
    n_permutations: int = 9999

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.min_node < 1:
            raise ValueError("min_node must be >= 1")
        if self.test not in ("asymptotic", "montecarlo"):
            raise ValueError(f"unknown test kind {self.test!r}")
        if self.n_permutations < 99:
            raise ValueError("n_permutations must be >= 99")


@dataclass(frozen=True)
class SplitRule:
    """Binary routing rule on one predictor column.

    Continuous: x <= threshold goes left. Categorical: levels in
    left_levels go left, other seen levels go right, and levels never
    seen in training follow the larger child.
    """

    feature: int
    threshold: float | None = None
    left_levels: frozenset[int] | None = None
    seen_levels: frozenset[int] | None = None

    @property
    def is_categorical(self) -> bool:
        return self.left_levels is not None


@dataclass
class CtreeNode:
    node_id: int
    depth: int
    n_rows: int
    p_value: float | None = None
    split: SplitRule | None = None
    left: "CtreeNode | None" = None
    right: "CtreeNode | None" = None
    rows: np.ndarray | None = None  # training row indices, leaves only

    @property
    def is_leaf(self) -> bool:
        return self.split is None


@dataclass(frozen=True)
class CtreeModel:
    root: CtreeNode
    config: CtreeConfig
    predictor_schema: FeatureSchema
    n_train: int

    def leaves(self) -> list[CtreeNode]:
        out: list[CtreeNode] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend([node.right, node.left])
        return out

    @property
    def n_nodes(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += 1
            if not node.is_leaf:
                stack.extend([node.left, node.right])
        return count

    @property
    def depth(self) -> int:
        best = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            best = max(best, node.depth)
            if not node.is_leaf:
                stack.extend([node.left, node.right])
        return best

    @property
    def is_root_only(self) -> bool:
        return self.root.is_leaf

    def route(self, x: Sequence[float]) -> CtreeNode:
        """Walk a predictor-row down to its leaf."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.predictor_schema.m,):
            raise RowMisalignment(
                f"expected {self.predictor_schema.m} predictor values, got {x.shape}"
            )
        node = self.root
        while not node.is_leaf:
            rule = node.split
            value = x[rule.feature]
            if rule.is_categorical:
                level = int(round(value))
                if level in rule.left_levels:
                    node = node.left
                elif level in rule.seen_levels:
                    node = node.right
                else:
                    # unseen level: follow the larger child
                    node = node.left if node.left.n_rows >= node.right.n_rows else node.right
            else:
                node = node.left if value <= rule.threshold else node.right
        if node.rows is None or len(node.rows) == 0:
            raise EmptyLeaf(f"leaf {node.node_id} has no training rows")
        return node

    def to_dict(self) -> dict:
        def encode(node: CtreeNode) -> dict:
            out: dict = {
                "id": node.node_id,
                "depth": node.depth,
                "n": int(node.n_rows),
                "p_value": node.p_value,
            }
            if node.is_leaf:
                out["rows"] = [int(i) for i in node.rows]
            else:
                rule = node.split
                encoded = {"feature": rule.feature,
                           "name": self.predictor_schema.names[rule.feature]}
                if rule.is_categorical:
                    encoded["left_levels"] = sorted(rule.left_levels)
                    encoded["seen_levels"] = sorted(rule.seen_levels)
                else:
                    encoded["threshold"] = rule.threshold
                out["split"] = encoded
                out["left"] = encode(node.left)
                out["right"] = encode(node.right)
            return out

        return {
            "config": {
                "alpha": self.config.alpha,
                "min_node": self.config.min_node,
                "max_depth": self.config.max_depth,
                "test": self.config.test,
            },
            "n_train": self.n_train,
            "predictors": list(self.predictor_schema.names),
            "root": encode(self.root),
        }

    @classmethod
    def from_dict(cls, payload: dict, predictor_schema: FeatureSchema) -> "CtreeModel":
        cfg = payload.get("config", {})
        config = CtreeConfig(
            alpha=cfg.get("alpha", 0.5),
            min_node=cfg.get("min_node", 7),
            max_depth=cfg.get("max_depth"),
            test=cfg.get("test", "asymptotic"),
        )

        def decode(entry: dict) -> CtreeNode:
            node = CtreeNode(
                node_id=entry["id"],
                depth=entry["depth"],
                n_rows=entry["n"],
                p_value=entry.get("p_value"),
            )
            if "split" in entry:
                rule = entry["split"]
                if "threshold" in rule:
                    node.split = SplitRule(rule["feature"], threshold=rule["threshold"])
                else:
                    node.split = SplitRule(
                        rule["feature"],
                        left_levels=frozenset(rule["left_levels"]),
                        seen_levels=frozenset(rule["seen_levels"]),
                    )
                node.left = decode(entry["left"])
                node.right = decode(entry["right"])
            else:
                node.rows = np.asarray(entry["rows"], dtype=np.intp)
            return node

        return cls(decode(payload["root"]), config, predictor_schema, payload["n_train"])


# ---------------------------------------------------------------------------
# influence encodings and the standardized statistic


def _influence_columns(values: np.ndarray, n_levels: int | None) -> np.ndarray:
    """Identity for continuous, full indicator block for categorical."""
    if n_levels is None:
        return values[:, None].astype(float)
    codes = values.astype(int)
    out = np.zeros((values.shape[0], n_levels))
    out[np.arange(values.shape[0]), codes - 1] = 1.0
    return out


def _influence_matrix(table: MixedTable) -> np.ndarray:
    blocks = []
    for j, spec in enumerate(table.schema.features):
        blocks.append(
            _influence_columns(
                table.values[:, j], spec.n_levels if spec.is_categorical else None
            )
        )
    return np.concatenate(blocks, axis=1)


@dataclass
class _ResponseContext:
    """Node-local response summaries shared by all predictor tests."""

    h: np.ndarray               # (n, qh) influence rows at the node
    hbar: np.ndarray
    eigvals: np.ndarray         # eigh of Vh, ascending
    eigvecs: np.ndarray
    keep: np.ndarray            # eigenvalue indices above the rank tolerance

    @classmethod
    def build(cls, h: np.ndarray) -> "_ResponseContext":
        hbar = h.mean(axis=0)
        centered = h - hbar
        vh = centered.T @ centered / h.shape[0]
        eigvals, eigvecs = np.linalg.eigh(vh)
        top = eigvals[-1] if eigvals.size else 0.0
        keep = np.flatnonzero(eigvals > max(top, 0.0) * RANK_TOL) if top > 0 else np.array([], dtype=int)
        return cls(h, hbar, eigvals, eigvecs, keep)

    @property
    def degenerate(self) -> bool:
        return self.keep.size == 0

    def whitener(self) -> np.ndarray:
        """Columns W with Vh^+ = W W'."""
        return self.eigvecs[:, self.keep] / np.sqrt(self.eigvals[self.keep])


def _predictor_statistic(
    g: np.ndarray, ctx: _ResponseContext
) -> tuple[float, int]:
    """Quadratic form and its reference dimension for one predictor."""
    n = g.shape[0]
    gsum = g.sum(axis=0)
    gsq = g.T @ g
    b = (n / (n - 1.0)) * gsq - np.outer(gsum, gsum) / (n - 1.0)
    b = (b + b.T) / 2.0
    lam_b, u_b = np.linalg.eigh(b)
    top = lam_b[-1] if lam_b.size else 0.0
    dim = g.shape[1] * ctx.h.shape[1]
    if top <= 0.0 or ctx.degenerate:
        return 0.0, dim
    keep_b = np.flatnonzero(lam_b > top * RANK_TOL)
    t_stat = g.T @ ctx.h - np.outer(gsum, ctx.hbar)
    d = u_b[:, keep_b].T @ t_stat @ ctx.eigvecs[:, ctx.keep]
    qf = float(np.sum(d**2 / np.outer(lam_b[keep_b], ctx.eigvals[ctx.keep])))
    return qf, dim


def _asymptotic_p(qf: float, dim: int) -> float:
    return float(chi2.sf(qf, dim))


def independence_test(
    x: np.ndarray,
    y: MixedTable | np.ndarray,
    x_levels: int | None = None,
    y_levels: Sequence[int | None] | None = None,
    test: str = "asymptotic",
    n_permutations: int = 9999,
    rng: np.random.Generator | None = None,
) -> float:
    """p-value for the null "x independent of the response block y".

    x is one feature column (pass x_levels for categorical codes 1..L).
    y is a MixedTable, or a plain array with y_levels marking which
    columns are categorical (None entries are continuous). The
    asymptotic p-value comes from the chi-squared reference described in
    the module docstring; test='montecarlo' instead permutes x
    n_permutations times and reports the rank of the observed statistic.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a single column")
    if isinstance(y, MixedTable):
        if y.n_rows != x.shape[0]:
            raise RowMisalignment(f"x has {x.shape[0]} rows, y has {y.n_rows}")
        h = _influence_matrix(y)
    else:
        y_arr = np.asarray(y, dtype=float)
        if y_arr.ndim == 1:
            y_arr = y_arr[:, None]
        if y_arr.shape[0] != x.shape[0]:
            raise RowMisalignment(f"x has {x.shape[0]} rows, y has {y_arr.shape[0]}")
        levels = list(y_levels) if y_levels is not None else [None] * y_arr.shape[1]
        if len(levels) != y_arr.shape[1]:
            raise ValueError("y_levels must give one entry per response column")
        h = np.concatenate(
            [_influence_columns(y_arr[:, k], levels[k]) for k in range(y_arr.shape[1])],
            axis=1,
        )
    if x.shape[0] < 2:
        return 1.0
    ctx = _ResponseContext.build(h)
    g = _influence_columns(x, x_levels)
    qf, dim = _predictor_statistic(g, ctx)
    if test == "asymptotic":
        return _asymptotic_p(qf, dim)
    if test != "montecarlo":
        raise ValueError(f"unknown test kind {test!r}")
    if ctx.degenerate:
        return 1.0
    rng = rng if rng is not None else keyed_rng("ctree-montecarlo")
    exceed = 0
    for _ in range(n_permutations):
        perm = rng.permutation(x.shape[0])
        qf_perm, _ = _predictor_statistic(g[perm], ctx)
        if qf_perm >= qf:
            exceed += 1
    return (1.0 + exceed) / (n_permutations + 1.0)


# ---------------------------------------------------------------------------
# fitting


def _two_sample_stats(
    c_left: np.ndarray, counts: np.ndarray, n: int, ctx: _ResponseContext
) -> np.ndarray:
    """Standardized statistic for candidate left-groups.

    c_left: (cands, qh) influence sums over each candidate left side,
    counts: rows on the left. Covariance of the binary-g statistic is
    Vh * count * (n - count) / (n - 1), so the whitened squared norm
    divided by that scalar is the quadratic form.
    """
    w = ctx.whitener()
    centered = c_left - np.outer(counts, ctx.hbar)
    proj = centered @ w
    scale = counts * (n - counts) / (n - 1.0)
    return np.einsum("ij,ij->i", proj, proj) / scale


def _best_continuous_split(
    x: np.ndarray, ctx: _ResponseContext, min_node: int
) -> tuple[float, float] | None:
    """(threshold, statistic) or None when no admissible cut exists."""
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    hs = ctx.h[order]
    boundaries = np.flatnonzero(xs[:-1] < xs[1:])  # cut after sorted index b
    if boundaries.size == 0:
        return None
    counts = boundaries + 1
    ok = (counts >= min_node) & (n - counts >= min_node)
    if not np.any(ok):
        return None
    boundaries = boundaries[ok]
    counts = counts[ok]
    prefix = np.cumsum(hs, axis=0)
    stats = _two_sample_stats(prefix[boundaries], counts, n, ctx)
    best = int(np.argmax(stats))
    b = boundaries[best]
    threshold = (xs[b] + xs[b + 1]) / 2.0
    return float(threshold), float(stats[best])


_MAX_ENUMERATED_LEVELS = 10


def _best_categorical_split(
    x: np.ndarray, ctx: _ResponseContext, min_node: int
) -> tuple[frozenset[int], frozenset[int], float] | None:
    """(left_levels, seen_levels, statistic) or None."""
    n = x.shape[0]
    codes = x.astype(int)
    seen = np.unique(codes)
    if seen.size < 2:
        return None
    level_sums = np.zeros((seen.size, ctx.h.shape[1]))
    level_counts = np.zeros(seen.size)
    for k, level in enumerate(seen):
        mask = codes == level
        level_sums[k] = ctx.h[mask].sum(axis=0)
        level_counts[k] = mask.sum()

    if seen.size <= _MAX_ENUMERATED_LEVELS:
        # enumerate all distinct two-set partitions, first level pinned left
        n_masks = 1 << (seen.size - 1)
        masks = np.arange(n_masks - 1)
        member = ((masks[:, None] >> np.arange(seen.size - 1)[None, :]) & 1).astype(float)
        member = np.concatenate([np.ones((masks.size, 1)), member], axis=1)
    else:
        # too many levels: order them by the leading response score and
        # scan contiguous prefixes
        scores = (level_sums / level_counts[:, None]) @ ctx.whitener()[:, -1:]
        order = np.argsort(scores[:, 0], kind="stable")
        member = np.zeros((seen.size - 1, seen.size))
        for k in range(seen.size - 1):
            member[k, order[: k + 1]] = 1.0
    counts = member @ level_counts
    ok = (counts >= min_node) & (n - counts >= min_node)
    if not np.any(ok):
        return None
    member = member[ok]
    counts = counts[ok]
    stats = _two_sample_stats(member @ level_sums, counts, n, ctx)
    best = int(np.argmax(stats))
    left = frozenset(int(seen[k]) for k in np.flatnonzero(member[best] > 0.5))
    return left, frozenset(int(s) for s in seen), float(stats[best])


def fit_ctree(
    predictors: MixedTable, response: MixedTable, config: CtreeConfig | None = None
) -> CtreeModel:
    """Grow a conditional inference tree of response on predictors.

    Recursion stops when the Bonferroni-adjusted global p-value reaches
    alpha, when no admissible split satisfies min_node on both sides,
    or at max_depth.
    """
    config = config or CtreeConfig()
    if predictors.n_rows != response.n_rows:
        raise RowMisalignment(
            f"predictors have {predictors.n_rows} rows, response has {response.n_rows}"
        )
    n = predictors.n_rows
    if n == 0:
        raise EmptyLeaf("cannot fit a tree on an empty table")
    pred_levels = [
        spec.n_levels if spec.is_categorical else None
        for spec in predictors.schema.features
    ]
    g_all = [
        _influence_columns(predictors.values[:, j], pred_levels[j])
        for j in range(predictors.m)
    ]
    h_all = _influence_matrix(response)
    mc_rng = keyed_rng("ctree-montecarlo") if config.test == "montecarlo" else None

    counter = [0]

    def next_id() -> int:
        counter[0] += 1
        return counter[0] - 1

    def grow(rows: np.ndarray, depth: int) -> CtreeNode:
        node = CtreeNode(node_id=next_id(), depth=depth, n_rows=rows.size)
        splittable = (
            rows.size >= 2 * config.min_node
            and rows.size >= 2
            and (config.max_depth is None or depth < config.max_depth)
        )
        if not splittable:
            node.rows = rows
            return node
        ctx = _ResponseContext.build(h_all[rows])
        p_values = np.ones(predictors.m)
        if not ctx.degenerate:
            for j in range(predictors.m):
                qf, dim = _predictor_statistic(g_all[j][rows], ctx)
                if config.test == "montecarlo":
                    p_values[j] = _montecarlo_p(
                        g_all[j][rows], ctx, qf, config.n_permutations, mc_rng
                    )
                else:
                    p_values[j] = _asymptotic_p(qf, dim)
        global_p = min(1.0, predictors.m * float(p_values.min()))
        node.p_value = global_p
        if global_p >= config.alpha:
            node.rows = rows
            return node
        j_star = int(np.argmin(p_values))
        x_node = predictors.values[rows, j_star]
        if pred_levels[j_star] is None:
            found = _best_continuous_split(x_node, ctx, config.min_node)
            if found is None:
                node.rows = rows
                return node
            threshold, _ = found
            rule = SplitRule(j_star, threshold=threshold)
            go_left = x_node <= threshold
        else:
            found = _best_categorical_split(x_node, ctx, config.min_node)
            if found is None:
                node.rows = rows
                return node
            left_levels, seen_levels, _ = found
            rule = SplitRule(j_star, left_levels=left_levels, seen_levels=seen_levels)
            go_left = np.isin(x_node.astype(int), sorted(left_levels))
        node.split = rule
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return node

    root = grow(np.arange(n, dtype=np.intp), 0)
    return CtreeModel(root, config, predictors.schema, n)


def _montecarlo_p(
    g: np.ndarray,
    ctx: _ResponseContext,
    observed: float,
    n_permutations: int,
    rng: np.random.Generator,
) -> float:
    exceed = 0
    for _ in range(n_permutations):
        perm = rng.permutation(g.shape[0])
        qf, _ = _predictor_statistic(g[perm], ctx)
        if qf >= observed:
            exceed += 1
    return (1.0 + exceed) / (n_permutations + 1.0)
