"""Command-line front end.

Three subcommands: ``simulate`` runs experiment grids from a config
file, ``explain`` attributes a linear model's predictions over a CSV of
observations, and ``oracle-compare`` scores estimators against exact
Shapley values on threshold-Gaussian data. All content lives in JSON
configs; flags only point at files, override the seed, and set the
worker count. Exit codes: 0 success, 1 fatal, 2 partial (some method
failed while others produced output).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import MixshapError
from .linmodel import LinearModelSpec, load_model
from .oracle import (
    CategoricalOracle,
    MixedOracle,
    ThresholdGaussianSpec,
    weighted_mae,
    write_truth_csv,
)
from .reporting import (
    mae_bar_figure,
    render_figures,
    render_table,
    write_plot_tsv,
    write_results_csv,
    write_results_json,
    write_timings_csv,
)
from .rng import keyed_rng
from .shapley import group_shapley
from .simlab import (
    ExperimentSpec,
    MethodSpec,
    explain_test_set,
    run_grid,
)
from .tabular import load_schema, read_csv_table

__all__ = ["main"]


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _load_config(path: str) -> dict:
    with open(path) as handle:
        cfg = json.load(handle)
    if not isinstance(cfg, dict):
        raise ValueError("config root must be a JSON object")
    return cfg


def _as_list(value) -> list:
    return list(value) if isinstance(value, list) else [value]


def _method_specs(raw) -> tuple[MethodSpec, ...]:
    specs = []
    for item in raw:
        if isinstance(item, str):
            specs.append(MethodSpec(item))
        else:
            specs.append(MethodSpec(item["name"], item.get("k")))
    return tuple(specs)


def _expand_experiments(cfg: dict, seed_override: int | None) -> list[ExperimentSpec]:
    entries = cfg.get("experiments")
    if not isinstance(entries, list):
        raise ValueError('config needs an "experiments" list')
    specs: list[ExperimentSpec] = []
    for entry in entries:
        rhos = _as_list(entry.get("rho", 0.0))
        seeds = [seed_override] if seed_override is not None else _as_list(entry.get("seed", 0))
        for rho in rhos:
            for seed in seeds:
                specs.append(
                    ExperimentSpec(
                        m=entry["m"],
                        n_cat=entry.get("n_cat", entry["m"]),
                        n_cont=entry.get("n_cont", 0),
                        rho=float(rho),
                        l=entry.get("l"),
                        cutoffs=tuple(entry.get("cutoffs", ())),
                        n_train=entry.get("n_train", 1000),
                        t=entry.get("t", 2000),
                        methods=_method_specs(
                            entry.get("methods", ["independence", "ctree"])
                        ),
                        seed=int(seed),
                        noise_sd=entry.get("noise_sd", 0.1),
                        alpha=entry.get("alpha", 0.5),
                    )
                )
    return specs


def _cmd_simulate(cfg: dict, out: Path, seed: int | None, threads: int) -> int:
    specs = _expand_experiments(cfg, seed)
    if not specs:
        _warn("empty experiment grid; nothing to do")
    if cfg.get("timing"):
        if threads > 1:
            _warn("timing mode pins the worker count to 1")
        threads = 1
    results = run_grid(specs, threads=threads)

    write_results_csv(results, out / "results.csv")
    write_timings_csv(results, out / "timings.csv")
    write_results_json(results, out / "results.json")
    write_plot_tsv(results, out / "plot.tsv")
    table = render_table(results)
    (out / "table.txt").write_text(table)
    sys.stdout.write(table)
    render_figures(results, out)

    partial = False
    for res in results:
        if res.failed:
            _warn(f"cell {res.spec.cell} seed {res.spec.seed} failed: {res.error}")
            partial = True
        else:
            for name, mr in res.methods.items():
                if mr.failed:
                    _warn(
                        f"method {name} failed on {res.spec.cell} seed "
                        f"{res.spec.seed}: {mr.error}"
                    )
                    partial = True
    return 2 if partial else 0


def _single_method(cfg: dict) -> MethodSpec:
    raw = cfg.get("method", "ctree")
    if isinstance(raw, str):
        raw = {"name": raw}
    return MethodSpec(raw["name"], raw.get("k", cfg.get("k")))


def _load_model_cfg(cfg: dict, schema) -> LinearModelSpec:
    model = cfg.get("model")
    if model is None:
        raise ValueError('config needs a "model" (path or inline object)')
    return load_model(model, schema)


def _cmd_explain(cfg: dict, out: Path, seed: int | None, threads: int) -> int:
    schema = load_schema(cfg["schema"])
    model = _load_model_cfg(cfg, schema)
    train = read_csv_table(cfg["train_csv"], schema)
    test = read_csv_table(cfg["test_csv"], schema)
    ms = _single_method(cfg)
    seed = seed if seed is not None else int(cfg.get("seed", 0))
    alpha = float(cfg.get("alpha", 0.5))

    res = explain_test_set(ms, train, model, test, seed=seed, alpha=alpha, threads=threads)
    preds = model.predict(test.values)
    gaps = res.phi0 + res.phi.sum(axis=1) - preds

    import csv

    with open(out / "explanations.csv", "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["row_index", "prediction", "phi0"]
            + [f"phi_{name}" for name in schema.names]
            + ["efficiency_gap"]
        )
        for i in range(test.n_rows):
            writer.writerow(
                [i, repr(float(preds[i])), repr(float(res.phi0[i]))]
                + [repr(float(v)) for v in res.phi[i]]
                + [repr(float(gaps[i]))]
            )

    groups_cfg = cfg.get("groups")
    if groups_cfg:
        names = list(groups_cfg)
        index = {n: j for j, n in enumerate(schema.names)}
        groups = [[index[f] for f in groups_cfg[g]] for g in names]
        from .shapley import ShapleyResult

        with open(out / "grouped.csv", "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(
                ["row_index"]
                + [f"phi_{g}" for g in names]
                + [f"rank_{g}" for g in names]
            )
            for i in range(test.n_rows):
                sr = ShapleyResult(float(res.phi0[i]), res.phi[i], float(preds[i]))
                values, ranks = group_shapley(sr, groups)
                writer.writerow(
                    [i]
                    + [repr(float(v)) for v in values]
                    + [int(r) for r in ranks]
                )

    mean_abs = np.abs(res.phi).mean(axis=0)
    mae_bar_figure(
        list(schema.names), mean_abs.tolist(), out / "phi_magnitude.png",
        "mean |phi| per feature",
    )
    return 0


def _generative_from_cfg(cfg: dict) -> ThresholdGaussianSpec:
    m = int(cfg["m"])
    n_cat = int(cfg.get("n_cat", m))
    return ThresholdGaussianSpec.equicorrelated(
        m, float(cfg.get("rho", 0.0)), tuple(cfg.get("cutoffs", ())), n_cat
    )


def _cmd_oracle_compare(cfg: dict, out: Path, seed: int | None, threads: int) -> int:
    generative = _generative_from_cfg(cfg)
    schema = generative.schema
    model = _load_model_cfg(cfg, schema)
    seed = seed if seed is not None else int(cfg.get("seed", 0))
    t = int(cfg.get("t", 2000))
    n_train = int(cfg.get("n_train", 1000))
    alpha = float(cfg.get("alpha", 0.5))

    if all(c is not None for c in generative.cutoffs):
        oracle = CategoricalOracle(generative, model.predict)
        test, weights = oracle.test_combinations(t)
        truth = [oracle.true_shapley(test.row(i)) for i in range(test.n_rows)]
    else:
        test = generative.sample(t, keyed_rng(seed, "test"))
        weights = np.full(test.n_rows, 1.0 / test.n_rows)
        moracle = MixedOracle(generative, model)
        truth = [moracle.true_shapley(test.row(i)) for i in range(test.n_rows)]
    true_phi = np.vstack([res.phi for res in truth])
    write_truth_csv(out / "oracle_truth.csv", test, truth)

    train = generative.sample(n_train, keyed_rng(seed, "train"))
    raw_methods = cfg.get("methods", ["independence", "ctree"])

    import csv

    labels: list[str] = []
    maes: list[float] = []
    partial = False
    with open(out / "oracle_errors.csv", "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["method", "row_index", "weight"]
            + [f"abs_err_{name}" for name in schema.names]
        )
        for raw in raw_methods:
            name = raw if isinstance(raw, str) else raw["name"]
            if name == "oracle":
                est = true_phi  # self-comparison baseline
            else:
                ms = MethodSpec(name, None if isinstance(raw, str) else raw.get("k"))
                try:
                    mres = explain_test_set(
                        ms, train, model, test, seed=seed, alpha=alpha, threads=threads
                    )
                except MixshapError as exc:
                    _warn(f"method {name} failed: {type(exc).__name__}: {exc}")
                    partial = True
                    continue
                est = mres.phi
            errs = np.abs(true_phi - est)
            for i in range(test.n_rows):
                writer.writerow(
                    [name, i, repr(float(weights[i]))]
                    + [repr(float(v)) for v in errs[i]]
                )
            labels.append(name)
            maes.append(weighted_mae(true_phi, est, weights))

    with open(out / "oracle_mae.csv", "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["method", "weighted_mae"])
        for label, mae in zip(labels, maes):
            writer.writerow([label, repr(float(mae))])
            print(f"{label}: weighted MAE {mae:.6f}")

    if labels:
        mae_bar_figure(labels, maes, out / "oracle_mae.png", "estimator MAE vs oracle")
    if not labels:
        return _fail("every method failed")
    return 2 if partial else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mixshap",
        description="Shapley value experiments and explanations for dependent mixed data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "run an experiment grid from a config file"),
        ("explain", "explain model predictions for rows of a CSV"),
        ("oracle-compare", "score estimators against exact Shapley values"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        p.add_argument(
            "--threads", type=int, default=None,
            help="worker count (default: available cores)",
        )
        p.add_argument("--out", default=".", help="output directory")

    args = parser.parse_args(argv)
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if threads < 1:
        return _fail(f"--threads must be >= 1, got {threads}")

    try:
        cfg = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = {
            "simulate": _cmd_simulate,
            "explain": _cmd_explain,
            "oracle-compare": _cmd_oracle_compare,
        }[args.command]
        return handler(cfg, out, args.seed, threads)
    except (MixshapError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
