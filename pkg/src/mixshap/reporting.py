"""Experiment output: delimited files, an aligned text table, figures.

Result CSVs carry no timings or timestamps, so a rerun with the same
config and seed reproduces them byte for byte; wall-clock numbers go to
a separate timings file and the JSON metadata. Floats are written with
repr, the shortest round-trip form.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import json
from pathlib import Path

import numpy as np

from ._version import __version__
from .simlab import ExperimentResult

__all__ = [
    "write_results_csv",
    "write_timings_csv",
    "write_results_json",
    "render_table",
    "write_plot_tsv",
    "render_figures",
    "mae_bar_figure",
]

_RESULT_COLUMNS = (
    "cell", "m", "l", "n_cat", "n_cont", "rho", "n_train", "t", "seed",
    "alpha", "noise_sd", "method", "k", "mae", "error",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _open_writer(path):
    handle = open(path, "w", newline="")
    return handle, csv.writer(handle, lineterminator="\n")


def write_results_csv(results: list[ExperimentResult], path) -> None:
    """One row per cell and method; deterministic for a fixed config."""
    handle, writer = _open_writer(path)
    with handle:
        writer.writerow(_RESULT_COLUMNS)
        for res in results:
            spec = res.spec
            base = [
                spec.cell, spec.m, _fmt(spec.l), spec.n_cat, spec.n_cont,
                _fmt(spec.rho), spec.n_train, spec.t, spec.seed,
                _fmt(spec.alpha), _fmt(spec.noise_sd),
            ]
            if res.failed:
                writer.writerow(base + ["", "", "", res.error])
                continue
            for ms in spec.methods:
                mr = res.methods[ms.name]
                writer.writerow(
                    base
                    + [ms.name, ms.resolved_k, _fmt(mr.mae), _fmt(mr.error)]
                )


def write_timings_csv(results: list[ExperimentResult], path) -> None:
    """Wall-clock numbers, kept out of the reproducible results file."""
    handle, writer = _open_writer(path)
    with handle:
        writer.writerow(
            ("cell", "seed", "method", "fit_seconds", "explain_seconds_per_obs")
        )
        for res in results:
            if res.failed:
                continue
            for ms in res.spec.methods:
                mr = res.methods[ms.name]
                writer.writerow(
                    (
                        res.spec.cell, res.spec.seed, ms.name,
                        _fmt(mr.fit_seconds), _fmt(mr.explain_seconds_per_obs),
                    )
                )


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON-serializable: {type(value).__name__}")


def write_results_json(results: list[ExperimentResult], path, timestamp=None) -> None:
    """Full metadata: spec echo, per-method numbers, version, timestamp."""
    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    payload = {
        "version": __version__,
        "timestamp": timestamp,
        "results": [],
    }
    for res in results:
        entry = {
            "spec": dataclasses.asdict(res.spec),
            "error": res.error,
            "methods": {},
        }
        if not res.failed:
            for name, mr in res.methods.items():
                entry["methods"][name] = {
                    "k": mr.method.resolved_k,
                    "mae": mr.mae,
                    "fit_seconds": mr.fit_seconds,
                    "explain_seconds_per_obs": mr.explain_seconds_per_obs,
                    "error": mr.error,
                    "details": mr.details,
                }
        payload["results"].append(entry)
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, default=_jsonable)
        handle.write("\n")


def _method_names(results: list[ExperimentResult]) -> list[str]:
    names: list[str] = []
    for res in results:
        for ms in res.spec.methods:
            if ms.name not in names:
                names.append(ms.name)
    return names


def render_table(results: list[ExperimentResult]) -> str:
    """Aligned MAE table, one row per cell run, per-row minimum starred."""
    names = _method_names(results)
    header = ["cell", "seed"] + names
    rows: list[list[str]] = []
    for res in results:
        row = [res.spec.cell, str(res.spec.seed)]
        if res.failed:
            rows.append(row + ["failed"] * len(names))
            continue
        maes = {
            n: res.methods[n].mae
            for n in names
            if n in res.methods and res.methods[n].mae is not None
        }
        best = min(maes.values()) if maes else None
        for n in names:
            if n not in res.methods:
                row.append("-")
            elif res.methods[n].failed:
                row.append("failed")
            else:
                mark = "*" if res.methods[n].mae == best else ""
                row.append(f"{res.methods[n].mae:.4f}{mark}")
        rows.append(row)
    widths = [
        max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
        for i in range(len(header))
    ]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def _series(results: list[ExperimentResult]):
    """Median MAE per (group, method) over seeds, keyed by rho.

    The group is the cell identity with rho and seed stripped, so one
    series traces a method across the dependence grid.
    """
    names = _method_names(results)
    groups: dict[tuple, dict[float, dict[str, list[float]]]] = {}
    for res in results:
        if res.failed:
            continue
        spec = res.spec
        gkey = (spec.m, spec.l, spec.n_cat, spec.n_cont, spec.n_train, spec.t)
        by_rho = groups.setdefault(gkey, {})
        cell = by_rho.setdefault(spec.rho, {})
        for name, mr in res.methods.items():
            if mr.mae is not None:
                cell.setdefault(name, []).append(mr.mae)
    return names, groups


def _group_label(gkey: tuple) -> str:
    m, l, n_cat, n_cont, n_train, t = gkey
    bits = [f"M{m}"]
    if n_cat:
        bits.append(f"L{l}")
    if n_cont:
        bits.append(f"cont{n_cont}")
    return "_".join(bits)


def write_plot_tsv(results: list[ExperimentResult], path) -> None:
    """Plot-ready series: rho on x, median MAE per method as columns."""
    names, groups = _series(results)
    handle, writer = _open_writer(path)
    writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
    with handle:
        writer.writerow(["group", "rho"] + names)
        for gkey in groups:
            label = _group_label(gkey)
            for rho in sorted(groups[gkey]):
                row = [label, _fmt(rho)]
                for n in names:
                    vals = groups[gkey][rho].get(n)
                    row.append(_fmt(float(np.median(vals))) if vals else "")
                writer.writerow(row)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_figures(results: list[ExperimentResult], out_dir) -> list[Path]:
    """MAE-versus-rho lines per cell group, plus an explain-time chart."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plt = _pyplot()
    paths: list[Path] = []

    names, groups = _series(results)
    for gkey, by_rho in groups.items():
        label = _group_label(gkey)
        rhos = sorted(by_rho)
        fig, ax = plt.subplots(figsize=(6, 4))
        for n in names:
            ys = [
                float(np.median(by_rho[r][n])) if n in by_rho[r] else np.nan
                for r in rhos
            ]
            if np.all(np.isnan(ys)):
                continue
            ax.plot(rhos, ys, marker="o", label=n)
        ax.set_xlabel("rho")
        ax.set_ylabel("weighted MAE")
        ax.set_yscale("log")
        ax.set_title(label)
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"mae_vs_rho_{label}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    timed = [
        (f"{res.spec.cell}/s{res.spec.seed}", name, mr.explain_seconds_per_obs)
        for res in results
        if not res.failed
        for name, mr in res.methods.items()
        if mr.explain_seconds_per_obs is not None
    ]
    if timed:
        fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(timed)), 4))
        xs = np.arange(len(timed))
        ax.bar(xs, [t[2] for t in timed])
        ax.set_xticks(xs)
        ax.set_xticklabels([f"{c}\n{n}" for c, n, _ in timed], fontsize=7, rotation=90)
        ax.set_ylabel("explain seconds per observation")
        ax.set_yscale("log")
        fig.tight_layout()
        path = out_dir / "explain_times.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def mae_bar_figure(labels: list[str], maes: list[float], path, title: str) -> Path:
    """Single bar chart; the oracle comparison path uses it."""
    plt = _pyplot()
    path = Path(path)
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    xs = np.arange(len(labels))
    ax.bar(xs, maes)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels)
    ax.set_ylabel("weighted MAE")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
