"""End-to-end runs of the command-line front end.

Each test drives ``main`` with a config written to a temp directory and
inspects the files it leaves behind. Exit codes are part of the
contract: 0 clean, 1 fatal, 2 partial.
"""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from mixshap.cli import main
from mixshap.linmodel import load_model
from mixshap.tabular import FeatureSchema, FeatureSpec, MixedTable, write_csv_table


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


def write_json(path, payload) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SIMULATE_CFG = {
    "experiments": [
        {
            "m": 2,
            "l": 2,
            "cutoffs": [0.0],
            "rho": 0.0,
            "n_train": 200,
            "t": 4,
            "methods": [{"name": "independence", "k": 100}],
            "seed": 0,
        }
    ]
}


class TestSimulate:
    def test_writes_report_bundle(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", SIMULATE_CFG)
        out = tmp_path / "out"
        code = run_cli("simulate", "--config", cfg, "--out", out, "--threads", 1)
        assert code == 0
        for name in ("results.csv", "timings.csv", "results.json", "plot.tsv", "table.txt"):
            assert (out / name).exists(), name
        assert list(out.glob("*.png")), "expected at least one figure"
        rows = read_rows(out / "results.csv")
        assert rows and rows[0]["method"] == "independence"
        assert float(rows[0]["mae"]) >= 0.0

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", SIMULATE_CFG)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("simulate", "--config", cfg, "--out", out_a, "--threads", 1) == 0
        assert run_cli("simulate", "--config", cfg, "--out", out_b, "--threads", 2) == 0
        for name in ("results.csv", "plot.tsv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_seed_override_changes_results(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", SIMULATE_CFG)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_cli("simulate", "--config", cfg, "--out", out_a, "--threads", 1) == 0
        code = run_cli(
            "simulate", "--config", cfg, "--out", out_b, "--threads", 1, "--seed", 7
        )
        assert code == 0
        assert (out_a / "results.csv").read_bytes() != (out_b / "results.csv").read_bytes()

    def test_timing_mode_pins_threads(self, tmp_path, capsys):
        payload = dict(SIMULATE_CFG, timing=True)
        cfg = write_json(tmp_path / "cfg.json", payload)
        out = tmp_path / "out"
        code = run_cli("simulate", "--config", cfg, "--out", out, "--threads", 4)
        assert code == 0
        assert "pins the worker count to 1" in capsys.readouterr().err

    def test_missing_experiments_key_is_fatal(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", {"seed": 0})
        code = run_cli("simulate", "--config", cfg, "--out", tmp_path / "out")
        assert code == 1
        assert "error:" in capsys.readouterr().err


@pytest.fixture
def explain_setup(tmp_path):
    """Schema, model, and CSV fixtures for the explain subcommand."""
    schema = FeatureSchema(
        (
            FeatureSpec("age", levels=("young", "mid", "old")),
            FeatureSpec("income"),
        )
    )
    rng = np.random.default_rng(42)
    def draw(n):
        codes = rng.integers(1, 4, size=n).astype(float)
        cont = rng.normal(size=n)
        return MixedTable(schema, np.column_stack([codes, cont]))

    train, test = draw(300), draw(8)
    write_csv_table(tmp_path / "train.csv", train)
    write_csv_table(tmp_path / "test.csv", test)
    model = {
        "intercept": 1.5,
        "categorical": {"age": {"mid": 0.8, "old": -1.2}},
        "continuous": {"income": 2.0},
    }
    cfg = {
        "schema": write_json(tmp_path / "schema.json", schema.to_dict()),
        "model": model,
        "train_csv": str(tmp_path / "train.csv"),
        "test_csv": str(tmp_path / "test.csv"),
        "method": {"name": "independence", "k": 200},
        "seed": 3,
    }
    return schema, model, test, cfg


class TestExplain:
    def test_explanations_csv_layout(self, tmp_path, explain_setup):
        schema, model_payload, test, cfg = explain_setup
        out = tmp_path / "out"
        code = run_cli(
            "explain", "--config", write_json(tmp_path / "cfg.json", cfg),
            "--out", out, "--threads", 1,
        )
        assert code == 0
        rows = read_rows(out / "explanations.csv")
        assert len(rows) == test.n_rows
        assert list(rows[0]) == [
            "row_index", "prediction", "phi0", "phi_age", "phi_income", "efficiency_gap",
        ]
        model = load_model(model_payload, schema)
        preds = model.predict(test.values)
        for i, row in enumerate(rows):
            assert float(row["prediction"]) == preds[i]
            assert abs(float(row["efficiency_gap"])) < 1e-8
        assert (out / "phi_magnitude.png").stat().st_size > 0

    def test_constant_model_gets_zero_phi(self, tmp_path, explain_setup):
        schema, _, test, cfg = explain_setup
        cfg = dict(cfg)
        cfg["model"] = {
            "intercept": 4.0,
            "categorical": {"age": {"mid": 0.0, "old": 0.0}},
            "continuous": {"income": 0.0},
        }
        out = tmp_path / "out"
        code = run_cli(
            "explain", "--config", write_json(tmp_path / "cfg.json", cfg), "--out", out
        )
        assert code == 0
        for row in read_rows(out / "explanations.csv"):
            assert float(row["phi0"]) == 4.0
            assert abs(float(row["phi_age"])) < 1e-10
            assert abs(float(row["phi_income"])) < 1e-10

    def test_grouped_ranks_are_permutations(self, tmp_path, explain_setup):
        _, _, test, cfg = explain_setup
        cfg = dict(cfg, groups={"person": ["age"], "wealth": ["income"]})
        out = tmp_path / "out"
        code = run_cli(
            "explain", "--config", write_json(tmp_path / "cfg.json", cfg), "--out", out
        )
        assert code == 0
        rows = read_rows(out / "grouped.csv")
        assert len(rows) == test.n_rows
        assert list(rows[0]) == [
            "row_index", "phi_person", "phi_wealth", "rank_person", "rank_wealth",
        ]
        for exp, grp in zip(read_rows(out / "explanations.csv"), rows):
            assert float(grp["phi_person"]) == float(exp["phi_age"])
            assert float(grp["phi_wealth"]) == float(exp["phi_income"])
            assert {int(grp["rank_person"]), int(grp["rank_wealth"])} == {1, 2}

    def test_missing_model_is_fatal(self, tmp_path, explain_setup, capsys):
        _, _, _, cfg = explain_setup
        cfg = {k: v for k, v in cfg.items() if k != "model"}
        code = run_cli(
            "explain", "--config", write_json(tmp_path / "cfg.json", cfg),
            "--out", tmp_path / "out",
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err


ORACLE_MODEL = {
    "intercept": 0.5,
    "categorical": {"x1": {"2": 1.0}, "x2": {"2": -0.7}},
    "continuous": {},
}

ORACLE_CFG = {
    "m": 2,
    "l": 2,
    "cutoffs": [0.0],
    "rho": 0.5,
    "t": 4,
    "n_train": 300,
    "seed": 0,
    "model": ORACLE_MODEL,
    "methods": ["oracle", "independence"],
}


class TestOracleCompare:
    def test_oracle_scores_itself_at_zero(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", ORACLE_CFG)
        out = tmp_path / "out"
        code = run_cli("oracle-compare", "--config", cfg, "--out", out, "--threads", 1)
        assert code == 0
        maes = {r["method"]: float(r["weighted_mae"]) for r in read_rows(out / "oracle_mae.csv")}
        assert maes["oracle"] == 0.0
        assert maes["independence"] > 0.0
        assert "oracle: weighted MAE 0.000000" in capsys.readouterr().out
        truth = read_rows(out / "oracle_truth.csv")
        assert len(truth) == 4
        assert list(truth[0]) == ["x1", "x2", "prediction", "phi0", "phi_x1", "phi_x2"]
        errors = read_rows(out / "oracle_errors.csv")
        assert {r["method"] for r in errors} == {"oracle", "independence"}
        assert (out / "oracle_mae.png").exists()

    def test_failing_method_yields_partial_exit(self, tmp_path, capsys):
        # two training rows leave the one-hot covariance singular
        payload = dict(ORACLE_CFG, methods=["independence", "gaussian"], n_train=2)
        cfg = write_json(tmp_path / "cfg.json", payload)
        out = tmp_path / "out"
        code = run_cli("oracle-compare", "--config", cfg, "--out", out, "--threads", 1)
        assert code == 2
        assert "gaussian failed" in capsys.readouterr().err
        maes = read_rows(out / "oracle_mae.csv")
        assert [r["method"] for r in maes] == ["independence"]

    def test_all_methods_failing_is_fatal(self, tmp_path, capsys):
        payload = dict(ORACLE_CFG, methods=["gaussian"], n_train=2)
        cfg = write_json(tmp_path / "cfg.json", payload)
        code = run_cli("oracle-compare", "--config", cfg, "--out", tmp_path / "out")
        assert code == 1
        assert "every method failed" in capsys.readouterr().err


def test_bundled_simulate_configs_expand():
    from mixshap.cli import _expand_experiments, _load_config

    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("table3_small.json", "mixed_small.json", "all_methods_small.json"):
        cfg = _load_config(str(root / name))
        specs = _expand_experiments(cfg, None)
        assert specs, name


def test_bundled_rho_sweep_orders_methods(tmp_path):
    # the shipped rho sweep must show ctree beating independence once
    # features actually correlate, on every (cell, seed) row
    cfg = Path(__file__).resolve().parents[1] / "configs" / "table3_small.json"
    out = tmp_path / "out"
    assert run_cli("simulate", "--config", cfg, "--out", out, "--threads", 2) == 0
    by_row = {}
    for row in read_rows(out / "results.csv"):
        by_row.setdefault((row["cell"], row["seed"]), {})[row["method"]] = float(row["mae"])
    assert len(by_row) == 15
    for (cell, _), maes in by_row.items():
        rho = float(cell.split("rho")[1])
        if rho >= 0.3:
            assert maes["ctree"] < maes["independence"], cell


def test_bundled_oracle_config_parses():
    from mixshap.cli import _generative_from_cfg, _load_config

    root = Path(__file__).resolve().parents[1] / "configs"
    cfg = _load_config(str(root / "oracle_compare_small.json"))
    gen = _generative_from_cfg(cfg)
    assert gen.schema.names
    assert "model" in cfg


class TestMainErrors:
    def test_malformed_json_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        code = run_cli("simulate", "--config", cfg, "--out", tmp_path / "out")
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        code = run_cli("simulate", "--config", tmp_path / "absent.json")
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_nonpositive_threads(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", SIMULATE_CFG)
        code = run_cli("simulate", "--config", cfg, "--threads", 0)
        assert code == 1
        assert "--threads" in capsys.readouterr().err
