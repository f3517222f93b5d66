import csv
import json
import logging
import time

import numpy as np
import pytest

from nrgcn.cli import main, monotone_decreasing, run_bench
from nrgcn.datasets import make_synthetic
from nrgcn.experiment import ExperimentConfig, get_tensor
from nrgcn.graph import row_normalize
from nrgcn.sampler import MUL_PLAN, SamplingPlan

from conftest import tiny_bundle


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def workspace(tmp_path):
    assert main(["synth", str(tmp_path / "data"), "--nodes", "120", "--features", "24", "--seed", "3"]) == 0
    cfg = {
        "bundle": "data",
        "plan": [{"P": 1, "S": 2, "L": 3}, {"P": 2, "S": 2, "L": 4}],
        "model": {"hidden": 16, "max_epochs": 6, "patience": 10, "batch_size": 32},
        "seeds": {"sampling": 1, "init": 2, "training": 3},
        "num_seeds": 2,
        "attack": {"mode": "evasion", "T": [0, 1]},
        "p2_values": [1, 2],
    }
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg))
    return tmp_path, path


def test_config_resolves_bundle_relative_to_file(workspace):
    root, path = workspace
    cfg = ExperimentConfig.from_json(path)
    assert cfg.bundle == str((root / "data").resolve())
    assert cfg.plan.layer(2).L == 4
    assert cfg.train_config(1).seed == 4 and cfg.train_config(1).init_seed == 3
    assert cfg.seeds_for(1)["sampling"] == 2


@pytest.mark.parametrize("bad", [{"nope": 1}, {"model": {"hiden": 3}}])
def test_config_rejects_unknown_keys(bad):
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict(bad)


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict({"plan": [{"P": 1, "S": 1, "L": 2}], "exact_hop": True,
                                      "model": {"hidden": 8}, "num_seeds": 3})
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.plan == cfg.plan and again.num_seeds == 3 and again.train_config(0) == cfg.train_config(0)


def test_attack_specs_expand_grid():
    cfg = ExperimentConfig(attack={"mode": ["evasion", "poisoning"], "T": [1, 2]})
    assert [(s.mode, s.T) for s in cfg.attack_specs()] == [("evasion", 1), ("evasion", 2),
                                                            ("poisoning", 1), ("poisoning", 2)]


def test_precompute_twice_hits_cache(workspace, capsys):
    root, path = workspace
    out = root / "runs"
    assert main(["precompute", "--config", str(path), "--out", str(out)]) == 0
    first = capsys.readouterr().out
    assert main(["precompute", "--config", str(path), "--out", str(out)]) == 0
    second = capsys.readouterr().out
    assert "True" not in first
    assert second.count("True") == 2
    assert len(list((out / "cache").glob("*.nrgc"))) == 2


def test_corrupt_cache_rebuilds_with_warning(tmp_path, caplog):
    b = tiny_bundle()
    t1, info = get_tensor(b.graph, b.features, MUL_PLAN, 0, cache_dir=tmp_path)
    path = info["path"]
    with open(path, "r+b") as fh:
        fh.seek(0)
        fh.write(b"JUNK")
    with caplog.at_level(logging.WARNING):
        t2, info2 = get_tensor(b.graph, b.features, MUL_PLAN, 0, cache_dir=tmp_path)
    assert not info2["cache_hit"]
    assert "rebuilding" in caplog.text
    assert np.array_equal(t1.values, t2.values)
    _, info3 = get_tensor(b.graph, b.features, MUL_PLAN, 0, cache_dir=tmp_path)
    assert info3["cache_hit"]


def test_train_writes_history_and_reports(workspace):
    root, path = workspace
    out = root / "runs"
    assert main(["train", "--config", str(path), "--out", str(out), "--deterministic"]) == 0
    for run in range(2):
        report = json.loads((out / f"seed{run}" / "report.json").read_text())
        rows = read_csv(out / f"seed{run}" / "history.csv")
        assert len(rows) == len(report["history"])
        assert [int(r["epoch"]) for r in rows] == list(range(1, len(rows) + 1))
        assert list(rows[0])[:5] == ["epoch", "train_loss", "val_acc", "test_acc", "epoch_seconds"]
        assert (out / f"seed{run}" / "model.nrgm").is_file()
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["runs"]) == 2
    assert len(read_csv(out / "summary.csv")) == 2


def _strip_timing(report):
    report = dict(report)
    report.pop("timings")
    report["history"] = [{k: v for k, v in h.items() if k != "epoch_seconds"} for h in report["history"]]
    return report


def test_fixed_seed_reports_identical(workspace):
    root, path = workspace
    reports = []
    for name in ("a", "b"):
        out = root / name
        assert main(["train", "--config", str(path), "--out", str(out), "--seed", "7", "--num-seeds", "1",
                     "--deterministic"]) == 0
        reports.append(json.loads((out / "seed0" / "report.json").read_text()))
    a, b = (_strip_timing(r) for r in reports)
    a["config"].pop("out"), b["config"].pop("out"), a["config"].pop("cache_dir"), b["config"].pop("cache_dir")
    assert a == b
    assert reports[0]["seeds"] == {"sampling": 7, "init": 7, "training": 7}


def test_flag_overrides(workspace):
    root, path = workspace
    out = root / "o"
    assert main(["train", "--config", str(path), "--out", str(out), "--num-seeds", "1", "--epochs", "2"]) == 0
    report = json.loads((out / "seed0" / "report.json").read_text())
    assert len(report["history"]) == 2
    assert report["config"]["model"]["max_epochs"] == 2


def test_eval_reads_checkpoint(workspace, capsys):
    root, path = workspace
    out = root / "runs"
    main(["train", "--config", str(path), "--out", str(out), "--num-seeds", "1"])
    capsys.readouterr()
    assert main(["eval", "--config", str(path), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "test" in text and "val" in text


def test_attack_zero_budget_equals_clean(workspace):
    root, path = workspace
    out = root / "atk"
    assert main(["attack", "--config", str(path), "--out", str(out), "--num-seeds", "1", "--deterministic"]) == 0
    rows = read_csv(out / "attack.csv")
    assert [int(r["T"]) for r in rows] == [0, 1]
    assert (out / "edits-evasion-T0.txt").read_text() == ""
    assert (out / "edits-evasion-T1.txt").read_text().startswith("DEL ")
    clean = root / "clean"
    main(["train", "--config", str(path), "--out", str(clean), "--num-seeds", "1", "--deterministic"])
    report = json.loads((clean / "seed0" / "report.json").read_text())
    assert float(rows[0]["mean_accuracy"]) == pytest.approx(report["test_acc"], abs=1e-12)


def test_sweep_one_row_per_value(workspace):
    root, path = workspace
    out = root / "sw"
    assert main(["sweep-p2", "--config", str(path), "--out", str(out), "--num-seeds", "1", "--p2", "1", "2", "3"]) == 0
    rows = read_csv(out / "p2_sweep.csv")
    assert [int(r["P_2"]) for r in rows] == [1, 2, 3]
    assert list(rows[0]) == ["P_2", "mean_accuracy", "std"]


def test_missing_bundle_is_reported(tmp_path, capsys):
    assert main(["train", "--bundle", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_monotone_decreasing():
    assert monotone_decreasing([0.8, 0.7, 0.6])
    assert monotone_decreasing([0.8, 0.7, 0.703, 0.6])
    assert not monotone_decreasing([0.8, 0.7, 0.71, 0.6])
    assert not monotone_decreasing([0.8, 0.802, 0.7, 0.703])


def test_bench_smoke_is_fast(tmp_path):
    t0 = time.perf_counter()
    assert main(["bench", "--synthetic", "100", "--features", "32", "--epochs", "3", "--out", str(tmp_path)]) == 0
    assert time.perf_counter() - t0 < 10
    res = json.loads((tmp_path / "bench.json").read_text())
    assert res["num_nodes"] == 100
    assert len(read_csv(tmp_path / "bench.csv")) >= 7


@pytest.fixture(scope="module")
def bench_result():
    # wide neighborhoods so L is not clamped by small localized sets
    b = make_synthetic(num_nodes=1500, feature_dim=1000, avg_degree=60, seed=0)
    b.features = row_normalize(b.features)
    plan = SamplingPlan(((1, 5, 8), (2, 5, 12)))
    return run_bench(b, plan, epochs=15, hidden=64, repeats=7, backends=["cython"] if _has_cython() else None)


def _has_cython():
    from nrgcn import _backend

    return "cython" in _backend.available()


def test_bench_doubling_L_doubles_aggregation(bench_result):
    assert bench_result["member_ratio"] == pytest.approx(2.0, abs=0.05)
    assert 1.5 <= bench_result["doubling_ratio"] <= 2.5


def test_bench_epoch_time_independent_of_L(bench_result):
    assert bench_result["epoch_time_change"] < 0.2
