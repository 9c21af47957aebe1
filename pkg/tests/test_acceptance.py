"""Acceptance suite: ten numbered criteria, one test per criterion.

Every threshold below is part of the package's published contract.
Seeds are fixed in this file ahead of time and the outcome is asserted
as drawn; a criterion that fails is a finding, not a retry candidate.
Run with ``pytest -v`` to get one verdict line per criterion; add
``-s`` for the measured numbers behind each verdict.
"""

import itertools
import math
import time

import numpy as np

from mixshap.ctree import CtreeConfig, fit_ctree
from mixshap.gaussian import (
    MvnSpec,
    Rectangle,
    conditional_mvn,
    equicorrelation,
    mvn_rectangle_prob,
    sample_mvn,
)
from mixshap.oracle import MixedOracle, ThresholdGaussianSpec
from mixshap.rng import keyed_rng
from mixshap.shapley import ContributionVector, kernel_shap_solve, shapley_direct
from mixshap.simlab import (
    ExperimentSpec,
    MethodSpec,
    make_response_and_model,
    run_experiment,
)
from mixshap.tabular import Coalition, FeatureSchema, FeatureSpec, MixedTable


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"CRITERION {num:02d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def _cat_spec(m: int, rho: float, l: int, cutoffs, seed: int, t: int, methods,
              n_train: int = 1000, alpha: float = 0.5) -> ExperimentSpec:
    return ExperimentSpec(
        m=m, n_cat=m, n_cont=0, rho=rho, l=l, cutoffs=tuple(cutoffs),
        n_train=n_train, t=t, methods=tuple(MethodSpec(n) for n in methods),
        seed=seed, noise_sd=0.1, alpha=alpha,
    )


def test_criterion_01_solver_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for m in range(1, 11):
        for _ in range(100):
            cv = ContributionVector(m, rng.normal(size=2**m))
            diff = np.abs(kernel_shap_solve(cv).phi - shapley_direct(cv).phi)
            worst = max(worst, float(diff.max()))

    # axiom suites, 260 randomized cases each, both solvers per case
    cases = 0
    axiom_worst = {"efficiency": 0.0, "symmetry": 0.0, "dummy": 0.0, "linearity": 0.0}
    for case in range(260):
        m = int(rng.integers(2, 9))
        g = rng.normal(size=2**m)

        v = ContributionVector(m, g)
        for res in (kernel_shap_solve(v), shapley_direct(v)):
            gap = abs(res.phi0 + res.phi.sum() - g[-1]) + abs(res.phi0 - g[0])
            axiom_worst["efficiency"] = max(axiom_worst["efficiency"], float(gap))

        # features 0 and 1 interchangeable by construction
        sym_vals = np.array(
            [g[(mask & ~3) | ((mask & 1) + ((mask >> 1) & 1))] for mask in range(2**m)]
        )
        v = ContributionVector(m, sym_vals)
        for res in (kernel_shap_solve(v), shapley_direct(v)):
            axiom_worst["symmetry"] = max(
                axiom_worst["symmetry"], float(abs(res.phi[0] - res.phi[1]))
            )

        # the top feature never changes the value
        dead = m - 1
        dummy_vals = np.array([g[mask & ~(1 << dead)] for mask in range(2**m)])
        v = ContributionVector(m, dummy_vals)
        for res in (kernel_shap_solve(v), shapley_direct(v)):
            axiom_worst["dummy"] = max(axiom_worst["dummy"], float(abs(res.phi[dead])))

        h = rng.normal(size=2**m)
        a, b = rng.normal(), rng.normal()
        for solve in (kernel_shap_solve, shapley_direct):
            lhs = solve(ContributionVector(m, a * g + b * h)).phi
            rhs = a * solve(ContributionVector(m, g)).phi + b * solve(
                ContributionVector(m, h)
            ).phi
            axiom_worst["linearity"] = max(
                axiom_worst["linearity"], float(np.abs(lhs - rhs).max())
            )
        cases += 4

    elapsed = time.perf_counter() - start
    ok = (
        worst < 1e-8
        and cases >= 1000
        and axiom_worst["efficiency"] < 1e-8
        and axiom_worst["symmetry"] < 1e-8
        and axiom_worst["dummy"] < 1e-8
        and axiom_worst["linearity"] < 1e-7
        and elapsed < 60.0
    )
    _verdict(
        1, ok,
        f"solver agreement {worst:.2e} (tol 1e-8), {cases} axiom cases, "
        f"worst per axiom {axiom_worst}, {elapsed:.1f}s (< 60s)",
    )


def test_criterion_02_rho_zero_degeneracy():
    root_only_seeds = 0
    mismatches = 0
    for seed in range(50):
        spec = _cat_spec(3, 0.0, 3, (0.0, 1.0), seed, 27, ("independence", "ctree"))
        out = run_experiment(spec, threads=1)
        assert out.error is None, out.error
        ct, ind = out.methods["ctree"], out.methods["independence"]
        if ct.details["root_only_trees"] == ct.details["fitted_trees"]:
            root_only_seeds += 1
            if not (np.array_equal(ct.phi, ind.phi) and np.array_equal(ct.phi0, ind.phi0)):
                mismatches += 1
    ok = root_only_seeds >= 45 and mismatches == 0
    _verdict(
        2, ok,
        f"root-only in {root_only_seeds}/50 seeds (need >= 45), "
        f"{mismatches} equality violations among them",
    )


def test_criterion_03_dependence_advantage():
    start = time.perf_counter()
    lines = []
    ordered = True
    high_rho_ratio_ok = True
    for m, t in ((3, 27), (4, 81)):
        for rho in (0.3, 0.5, 0.8, 0.9):
            ind, ct = [], []
            for seed in range(5):
                spec = _cat_spec(m, rho, 3, (0.0, 1.0), seed, t, ("independence", "ctree"))
                out = run_experiment(spec, threads=1)
                assert out.error is None, out.error
                ind.append(out.methods["independence"].mae)
                ct.append(out.methods["ctree"].mae)
            mi, mc = float(np.median(ind)), float(np.median(ct))
            ordered &= mc < mi
            if rho >= 0.8:
                high_rho_ratio_ok &= mi / mc > 2.0
            lines.append(f"M{m} rho{rho}: {mi:.4f}/{mc:.4f} r={mi / mc:.1f}")
    elapsed = time.perf_counter() - start
    ok = ordered and high_rho_ratio_ok and elapsed < 1800.0
    _verdict(3, ok, f"{'; '.join(lines)}; {elapsed:.0f}s (< 1800s)")


def test_criterion_04_larger_dimension_ordering():
    start = time.perf_counter()
    spec = _cat_spec(
        7, 0.5, 5, (-0.5, -0.25, 0.0, 1.0), 0, 2000, ("independence", "ctree")
    )
    out = run_experiment(spec, threads=1)
    assert out.error is None, out.error
    mi = out.methods["independence"].mae
    mc = out.methods["ctree"].mae
    elapsed = time.perf_counter() - start
    ok = mc < mi and mi / mc > 2.0
    _verdict(
        4, ok,
        f"M=7 L=5 top-2000: independence {mi:.4f} vs ctree {mc:.4f}, "
        f"ratio {mi / mc:.2f} (> 2), {elapsed:.0f}s",
    )


def _mc_contribution(spec, predict, s, x_star, n, rng, chunk=1_000_000):
    """Brute-force v(S): exact conditioning on continuous members,
    rejection on the categorical members' level boxes."""
    x_star = np.asarray(x_star, dtype=float)
    ks = [j for j in s.members if spec.cutoffs[j] is None]
    cs = [j for j in s.members if spec.cutoffs[j] is not None]
    rest = [j for j in range(spec.m) if j not in ks]
    cond = conditional_mvn(spec.mvn, ks, x_star[ks]) if ks else spec.mvn
    count, total, sumsq = 0, 0.0, 0.0
    for off in range(0, n, chunk):
        size = min(chunk, n - off)
        z = np.empty((size, spec.m))
        z[:, rest] = sample_mvn(cond, size, rng)
        if ks:
            z[:, ks] = x_star[ks]
        rows = spec.digitize(z)
        keep = np.ones(size, dtype=bool)
        for j in cs:
            keep &= rows[:, j] == x_star[j]
        vals = np.asarray(predict(rows[keep]), dtype=float)
        count += vals.size
        total += vals.sum()
        sumsq += float(vals @ vals)
    mean = total / count
    var = (sumsq - count * mean * mean) / (count - 1)
    return mean, math.sqrt(var / count), count


def test_criterion_05_mixed_oracle_validity():
    start = time.perf_counter()
    gen = ThresholdGaussianSpec.equicorrelated(4, 0.5, (-0.5, 0.0, 1.0), 2)
    es = ExperimentSpec(
        m=4, n_cat=2, n_cont=2, rho=0.5, l=4, cutoffs=(-0.5, 0.0, 1.0),
        n_train=1000, t=20, methods=(MethodSpec("ctree"),),
        seed=0, noise_sd=0.1, alpha=0.5,
    )
    train = gen.sample(1000, keyed_rng(0, "mixed-oracle-train"))
    _, fitted = make_response_and_model(train, es, keyed_rng(0, "mixed-oracle-model"))
    oracle = MixedOracle(gen, fitted)

    probe_rng = np.random.default_rng(20260816)
    xs = gen.sample(20, keyed_rng(0, "mixed-oracle-probes"))
    worst_z = 0.0
    min_kept = None
    for i in range(20):
        mask = int(probe_rng.integers(1, 2**4 - 1))  # proper non-empty
        s = Coalition(mask, 4)
        x = xs.values[i]
        exact = oracle.contribution(s, x)
        mc, se, kept = _mc_contribution(
            gen, fitted.predict, s, x, 10_000_000, probe_rng
        )
        worst_z = max(worst_z, abs(exact - mc) / se)
        min_kept = kept if min_kept is None else min(min_kept, kept)

    eff_worst = 0.0
    for i in range(20):
        res = oracle.true_shapley(xs.values[i])
        eff_worst = max(eff_worst, abs(res.efficiency_gap))

    elapsed = time.perf_counter() - start
    ok = worst_z < 3.0 and eff_worst < 1e-5
    _verdict(
        5, ok,
        f"20 probes at 1e7 draws: worst |z| {worst_z:.2f} (< 3), min kept "
        f"{min_kept}, efficiency gap {eff_worst:.2e} (< 1e-5), {elapsed:.0f}s",
    )


def test_criterion_06_mixed_estimator_ordering():
    start = time.perf_counter()
    ind, ct = [], []
    for seed in range(3):
        spec = ExperimentSpec(
            m=4, n_cat=2, n_cont=2, rho=0.9, l=4, cutoffs=(-0.5, 0.0, 1.0),
            n_train=1000, t=500,
            methods=(MethodSpec("independence"), MethodSpec("ctree")),
            seed=seed, noise_sd=0.1, alpha=0.5,
        )
        out = run_experiment(spec, threads=1)
        assert out.error is None, out.error
        ind.append(out.methods["independence"].mae)
        ct.append(out.methods["ctree"].mae)
    mi, mc = float(np.median(ind)), float(np.median(ct))
    elapsed = time.perf_counter() - start
    ok = mc < mi and mi / mc > 3.0
    _verdict(
        6, ok,
        f"rho=0.9 T=500 medians: independence {mi:.4f} vs ctree {mc:.4f}, "
        f"ratio {mi / mc:.2f} (> 3), {elapsed:.0f}s",
    )


def test_criterion_07_onehot_cost():
    spec = ExperimentSpec(
        m=3, n_cat=3, n_cont=0, rho=0.5, l=3, cutoffs=(0.0, 1.0),
        n_train=1000, t=27,
        methods=(MethodSpec("ctree"), MethodSpec("ctree_onehot")),
        seed=0, noise_sd=0.1, alpha=0.5,
    )
    out = run_experiment(spec, threads=1)
    assert out.error is None, out.error
    base = out.methods["ctree"].explain_seconds_per_obs
    onehot = out.methods["ctree_onehot"].explain_seconds_per_obs
    ratio = onehot / base
    _verdict(
        7, ratio > 2.0,
        f"explain time per obs: onehot {onehot * 1e3:.2f}ms vs ctree "
        f"{base * 1e3:.2f}ms, ratio {ratio:.1f} (> 2)",
    )


def test_criterion_08_gaussian_unit_oracles():
    spec2 = MvnSpec(np.zeros(2), equicorrelation(2, 0.5))
    orthant = mvn_rectangle_prob(spec2, Rectangle.make([0.0, 0.0], [np.inf, np.inf]))
    orthant_err = abs(orthant.value - 1.0 / 3.0)

    # partitions built from random interior cuts must carry total mass 1
    rng = np.random.default_rng(8)
    partition_err = 0.0
    for d in range(2, 7):
        rho = 0.4 if d % 2 == 0 else -1.0 / (d + 1)
        spec = MvnSpec(np.zeros(d), equicorrelation(d, rho))
        n_cuts = 2 if d <= 3 else 1
        edges = [
            np.concatenate(([-np.inf], np.sort(rng.normal(size=n_cuts)), [np.inf]))
            for _ in range(d)
        ]
        total = 0.0
        for combo in itertools.product(*(range(n_cuts + 1) for _ in range(d))):
            lo = np.array([edges[j][c] for j, c in enumerate(combo)])
            hi = np.array([edges[j][c + 1] for j, c in enumerate(combo)])
            total += mvn_rectangle_prob(spec, Rectangle.make(lo, hi)).value
        partition_err = max(partition_err, abs(total - 1.0))

    # bivariate conditionals agree with the closed form to the last bit
    exact = True
    for rho, x1 in ((0.5, 0.3), (-0.43, 1.7), (0.9, -2.25)):
        cspec = MvnSpec(np.zeros(2), np.array([[1.0, rho], [rho, 1.0]]))
        cond = conditional_mvn(cspec, [0], [x1])
        exact &= cond.mu[0] == rho * x1 and cond.sigma[0, 0] == 1.0 - rho * rho
    mu = np.array([1.0, -2.0])
    s1, s2, r = 1.5, 0.7, -0.43
    sig = np.array([[s1 * s1, r * s1 * s2], [r * s1 * s2, s2 * s2]])
    cond = conditional_mvn(MvnSpec(mu, sig), [0], [0.9])
    exact &= cond.mu[0] == mu[1] + r * s2 / s1 * (0.9 - mu[0])
    exact &= cond.sigma[0, 0] == s2 * s2 * (1.0 - r * r)

    ok = orthant_err < 1e-5 and partition_err < 1e-4 and exact
    _verdict(
        8, ok,
        f"orthant error {orthant_err:.2e} (< 1e-5), worst partition gap "
        f"{partition_err:.2e} (< 1e-4), conditionals exact: {exact}",
    )


def test_criterion_09_ctree_calibration():
    cfg = CtreeConfig(alpha=0.05, min_node=7)
    x_schema = FeatureSchema((FeatureSpec("p1"),))
    y_schema = FeatureSchema((FeatureSpec("r"),))
    rejections = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        x = MixedTable(x_schema, rng.standard_normal((1000, 1)))
        y = MixedTable(y_schema, rng.standard_normal((1000, 1)))
        rejections += not fit_ctree(x, y, cfg).root.is_leaf

    x3_schema = FeatureSchema(tuple(FeatureSpec(f"p{j}") for j in (1, 2, 3)))
    correct = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        cols = rng.standard_normal((1000, 3))
        x = MixedTable(x3_schema, cols)
        y = MixedTable(y_schema, cols[:, [0]].copy())
        root = fit_ctree(x, y, cfg).root
        correct += (not root.is_leaf) and root.split.feature == 0

    rate = rejections / 200.0
    ok = 0.02 <= rate <= 0.10 and correct == 50
    _verdict(
        9, ok,
        f"independence rejection rate {rate:.3f} (in [0.02, 0.10]), "
        f"correct first split {correct}/50 (need 50)",
    )


def test_criterion_10_determinism(tmp_path):
    import json

    from mixshap.cli import main

    sim_cfg = {
        "experiments": [
            {
                "m": 3, "l": 3, "cutoffs": [0.0, 1.0], "rho": [0.0, 0.8],
                "n_train": 400, "t": 27,
                "methods": ["independence", "ctree"], "seed": [0, 1],
            }
        ]
    }
    cfg_path = tmp_path / "sim.json"
    cfg_path.write_text(json.dumps(sim_cfg))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(
            ["simulate", "--config", str(cfg_path), "--out", str(out), "--threads", "1"]
        )
        assert code == 0
        outs.append(out)
    sim_same = all(
        (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
        for f in ("results.csv", "plot.tsv")
    )

    orc_cfg = {
        "m": 2, "l": 2, "cutoffs": [0.0], "rho": 0.5, "t": 4,
        "n_train": 300, "seed": 0,
        "model": {
            "intercept": 0.5,
            "categorical": {"x1": {"2": 1.0}, "x2": {"2": -0.7}},
            "continuous": {},
        },
        "methods": ["independence", "ctree"],
    }
    cfg_path = tmp_path / "orc.json"
    cfg_path.write_text(json.dumps(orc_cfg))
    oruns = []
    for name in ("oa", "ob"):
        out = tmp_path / name
        code = main(
            ["oracle-compare", "--config", str(cfg_path),
             "--out", str(out), "--threads", "1"]
        )
        assert code == 0
        oruns.append(out)
    orc_same = all(
        (oruns[0] / f).read_bytes() == (oruns[1] / f).read_bytes()
        for f in ("oracle_truth.csv", "oracle_errors.csv", "oracle_mae.csv")
    )

    _verdict(
        10, sim_same and orc_same,
        f"simulate CSVs byte-identical: {sim_same}; "
        f"oracle-compare CSVs byte-identical: {orc_same}",
    )
