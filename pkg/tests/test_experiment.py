import csv
import io
import json

import numpy as np
import pytest
import yaml

from hetero_mia import experiment as ex
from hetero_mia.cli import main
from hetero_mia.errors import ConfigError

from conftest import CONFIGS, SCHEMAS

SITES = str(CONFIGS / "synthetic_sites.yaml")


def small_config(**over):
    raw = {
        "name": "tiny",
        "dataset": {"name": "Sites", "synthetic": SITES, "synthetic_seed": 0},
        "split": {"strategy": "natural", "roles": {"target": ["A"], "attacker": ["B"], "third": ["C"]}},
        "challenge": {"per_side": None, "rho": [0.0, 1.0]},
        "model": {"hidden": [8]},
        "fl": {"clients": 2, "rounds": 2, "local_epochs": 1, "lr": 0.05, "batch_size": 16},
        "attack": {"classifier": {"hidden": [4], "epochs": 5}},
        "repeats": 10,
        "seed": 3,
    }
    raw.update(over)
    return raw


def write_config(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


@pytest.fixture(scope="module")
def report():
    return ex.run_experiment(ex.config_from_dict(small_config()), write=False)


def test_bookkeeping(report):
    assert len(report.runs) == 10
    assert sum(len(r.results) for r in report.runs) == 20
    assert len(report.heterogeneities()) == 10
    assert all(r.status == "ok" for r in report.runs)


def test_aggregates_recomputable(report):
    for rho in report.rhos:
        acc = [r.results[rho]["accuracy"] for r in report.runs]
        agg = report.aggregates()[f"{rho:g}"]
        assert abs(agg["accuracy_mean"] - np.mean(acc)) <= 1e-12
        assert abs(agg["accuracy_std"] - np.std(acc)) <= 1e-12
        assert agg["n_runs"] == 10


def test_results_consistent(report):
    for run in report.runs:
        for res in run.results.values():
            assert res["tp"] + res["fp"] + res["tn"] + res["fn"] == res["total"] == 2 * run.per_side
            assert res["accuracy"] == (res["tp"] + res["tn"]) / res["total"]


def test_run_independence(report):
    shorter = ex.run_experiment(ex.config_from_dict(small_config(repeats=3)), write=False)
    for a, b in zip(shorter.runs, report.runs[:3]):
        assert a.to_dict() == b.to_dict()


def test_workers_do_not_change_results(report):
    para = ex.run_experiment(ex.config_from_dict(small_config(repeats=4, workers=2)), write=False)
    assert [r.to_dict() for r in para.runs] == [r.to_dict() for r in report.runs[:4]]


def test_failed_runs_recorded():
    # per_side larger than any pool: every run fails at challenge construction
    cfg = ex.config_from_dict(small_config(repeats=2, challenge={"per_side": 10_000, "rho": [0.0]}))
    with pytest.raises(RuntimeError, match="all 2 runs failed"):
        ex.run_experiment(cfg, write=False)
    rec = ex.run_repeat(cfg, 0)
    assert rec.status == "failed" and "pool" in rec.error


def test_table_formats(report, tmp_path):
    md = ex.emit_table(report, "markdown")
    lines = md.strip().splitlines()
    assert lines[0].startswith("| Dataset") and len(lines) == 2 + len(report.rhos)

    text = ex.emit_table(report, "csv", tmp_path / "t.csv")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert (tmp_path / "t.csv").read_text() == text
    for row, agg in zip(rows, report.aggregates().values()):
        assert float(row["accuracy_mean"]) == round(100 * agg["accuracy_mean"], 2)
        assert float(row["accuracy_std"]) == round(100 * agg["accuracy_std"], 2)
        assert float(row["heterogeneity"]) == float(f"{agg['heterogeneity_mean']:.2e}")
        assert int(row["n_runs"]) == agg["n_runs"]
        assert row["splitting"] == "natural" and row["dataset"] == "Sites"

    payload = json.loads(ex.emit_table(report, "json"))
    assert payload["configs"][0]["config"]["resolved"]["repeats"] == 10
    assert payload["configs"][0]["config"]["raw"]["fl"]["clients"] == 2
    with pytest.raises(ValueError, match="unknown table format"):
        ex.emit_table(report, "xlsx")


def test_outputs_written_and_reproducible(tmp_path):
    raw = small_config(repeats=2)
    a = ex.run_experiment(ex.config_from_dict(raw | {"output_dir": str(tmp_path / "a")}))
    ex.run_experiment(ex.config_from_dict(raw | {"output_dir": str(tmp_path / "b")}))
    for name in ("report.json", "table.csv", "table.md"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run = tmp_path / "a" / "runs" / "000"
    assert {p.name for p in run.iterdir()} >= {"manifest.json", "split.json", "attack.json", "scores.csv", "snapshots"}
    assert len(list((run / "snapshots").glob("round_*.json"))) == 2
    assert json.loads((tmp_path / "a" / "timings.json").read_text())["per_repeat_seconds"]
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["n_runs"] == 2 and "timings" not in report
    assert a.to_dict()["aggregates"] == report["aggregates"]


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="rho"):
        ex.config_from_dict(small_config(challenge={"rho": [1.5]}))
    with pytest.raises(ConfigError, match="repeats"):
        ex.config_from_dict(small_config(repeats=0))
    with pytest.raises(ConfigError, match="does not exist"):
        ex.config_from_dict(small_config(dataset={"path": "missing.csv", "schema": str(SCHEMAS / "heart.yaml")}))
    with pytest.raises(ConfigError, match="third"):
        ex.config_from_dict(small_config(split={"strategy": "uniform", "sizes": [0.4, 0.4, 0.2]}))


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.yaml")):
        raw = yaml.safe_load(path.read_text())
        if "split" not in raw:
            continue
        try:
            cfg = ex.load_config(path)
        except ConfigError as exc:
            # real-data configs need data/*.csv from scripts/fetch_data.py
            assert "does not exist" in str(exc) and "data" in str(exc)
            continue
        assert cfg.repeats >= 10


# --------------------------------------------------------------------------- CLI


def test_cli_run_experiment(tmp_path, capsys):
    cfg = write_config(tmp_path, small_config(repeats=2))
    assert main(["run-experiment", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert "| Dataset" in capsys.readouterr().out
    assert (tmp_path / "out" / "report.json").exists()


def test_cli_exit_codes(tmp_path):
    assert main(["run-experiment", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 1
    bad = write_config(tmp_path, small_config(repeats=0), "bad.yaml")
    assert main(["run-experiment", "--config", str(bad), "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["run-experiment"])
    assert exc.value.code == 1

    csv_path = tmp_path / "broken.csv"
    csv_path.write_text("x0,x1,x2,x3,x4,x5,label,group\n1,2,3,4,5,oops,0,A\n")
    assert main(["metric", "--a", str(csv_path), "--b", str(csv_path), "--schema", str(CONFIGS / "synthetic_sites_schema.yaml")]) == 2

    failing = write_config(tmp_path, small_config(repeats=1, challenge={"per_side": 10_000, "rho": [0.0]}), "fail.yaml")
    assert main(["run-experiment", "--config", str(failing), "--out", str(tmp_path / "f")]) == 3
    assert main(["attack", "--config", str(failing)]) == 3


def test_cli_synth_and_metric(tmp_path, capsys):
    out = tmp_path / "sites.csv"
    assert main(["synth", "--config", SITES, "--out", str(out), "--seed", "1"]) == 0
    rows = list(csv.DictReader(out.open()))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path, group in ((a, "A"), (b, "B")):
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=rows[0].keys())
            w.writeheader()
            w.writerows(r for r in rows if r["group"] == group)
    capsys.readouterr()
    schema = str(CONFIGS / "synthetic_sites_schema.yaml")
    assert main(["metric", "--a", str(a), "--b", str(b), "--schema", schema]) == 0
    captured = capsys.readouterr()
    rep = json.loads(captured.out)
    assert rep["average"] > 0 and "heterogeneity D" in captured.err
    assert main(["metric", "--a", str(a), "--b", str(a), "--schema", schema, "--out", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text())["average"] <= 1e-9


def test_cli_split_and_attack(tmp_path, capsys):
    cfg = write_config(tmp_path, small_config(repeats=1))
    assert main(["split", "--plan", str(cfg), "--out", str(tmp_path / "split.json")]) == 0
    sp = json.loads((tmp_path / "split.json").read_text())
    assert set(sp) >= {"attacker_idx", "target_idx", "nonmember_pool_same_idx", "nonmember_pool_third_idx"}
    assert not set(sp["attacker_idx"]) & set(sp["target_idx"])

    assert main(["attack", "--config", str(cfg), "--out", str(tmp_path / "atk"), "--scores-csv", str(tmp_path / "s.csv")]) == 0
    res = json.loads((tmp_path / "atk" / "attack.json").read_text())
    assert len(res["results"]) == 2 and "config" in res["results"][0]
    assert len(list(csv.DictReader((tmp_path / "s.csv").open()))) == 2 * 2 * res["results"][0]["total"] // 2

    assert main(["metric", "--config", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["average"] > 0
