import csv
import json

import pytest

from divrank.checkpoint import file_hash
from divrank.cli import EXIT_CODES, main

MARKET = {"n_listings": 300, "cluster_count": 30, "n_searches": 300}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = {
        "seed": 1,
        "market": MARKET,
        "base_train": {"epochs": 2},
        "sim_train": {"epochs": 2},
    }
    (root / "cfg.json").write_text(json.dumps(cfg))
    c = str(root / "cfg.json")
    assert main(["simulate", "--config", c, "--out", str(root / "sim")]) == 0
    logs = str(root / "sim" / "logs.jsonl")
    assert main(["train-base", "--config", c, "--logs", logs, "--out", str(root / "base.json")]) == 0
    assert main(["train-sim", "--config", c, "--logs", logs, "--base", str(root / "base.json"),
                 "--out", str(root / "sim.json")]) == 0
    return root


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("divrank-error ")
    return err[0]


def test_simulate_outputs_and_manifest(workspace):
    out = workspace / "sim"
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seeds"] == [1]
    assert str(out / "logs.jsonl") in man["outputs"]
    assert len((out / "logs.jsonl").read_text().splitlines()) == MARKET["n_searches"]
    assert (out / "ground_truth.jsonl").exists()


def test_simulate_byte_identical(workspace, tmp_path):
    c = str(workspace / "cfg.json")
    assert main(["simulate", "--config", c, "--out", str(tmp_path / "again")]) == 0
    for name in ("logs.jsonl", "ground_truth.jsonl", "schemas.json"):
        assert (tmp_path / "again" / name).read_bytes() == (workspace / "sim" / name).read_bytes()


def test_seed_precedence(workspace, tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"market": MARKET, "simulate": {"n_searches": 20}}))
    monkeypatch.setenv("DIVRANK_SEED", "1")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "env")]) == 0
    assert main(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "env" / "logs.jsonl").read_bytes() == (tmp_path / "flag" / "logs.jsonl").read_bytes()
    assert main(["simulate", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other" / "logs.jsonl").read_bytes() != (tmp_path / "flag" / "logs.jsonl").read_bytes()


def test_zero_searches(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"market": {**MARKET, "n_searches": 0}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "logs.jsonl").read_text() == ""
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["n_searches"] == 0 and man["command"] == "simulate"


def test_missing_config_field_named(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3}))
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_CODES["config"]
    assert "market" in error_line(capsys)


def test_unknown_field_named(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"market": {**MARKET, "n_listngs": 5}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CODES["config"]
    assert "n_listngs" in error_line(capsys)


def test_set_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"market": MARKET}))
    assert main(["simulate", "--config", str(cfg), "--set", "simulate.n_searches=7", "--out", str(tmp_path / "o")]) == 0
    assert len((tmp_path / "o" / "logs.jsonl").read_text().splitlines()) == 7


def test_similarity_manifest_records_base_hash(workspace):
    man = json.loads((workspace / "sim.json.manifest.json").read_text())
    assert man["checkpoints"]["base"] == file_hash(workspace / "base.json")
    doc = json.loads((workspace / "sim.json").read_text())
    assert doc["meta"]["base_checkpoint"] == file_hash(workspace / "base.json")
    bman = json.loads((workspace / "base.json.manifest.json").read_text())
    assert "final_validation_loss" in json.loads((workspace / "base.json").read_text())["meta"]
    assert bman["losses"]["train"]


def test_similarity_without_base(workspace, tmp_path, capsys):
    code = main(["train-sim", "--config", str(workspace / "cfg.json"), "--logs", str(workspace / "sim" / "logs.jsonl"),
                 "--out", str(tmp_path / "s.json")])
    assert code == EXIT_CODES["model"]
    assert "base" in error_line(capsys)


def test_train_rerun_identical_hash(workspace, tmp_path):
    c = str(workspace / "cfg.json")
    logs = str(workspace / "sim" / "logs.jsonl")
    assert main(["train-base", "--config", c, "--logs", logs, "--out", str(tmp_path / "b.json")]) == 0
    assert file_hash(tmp_path / "b.json") == file_hash(workspace / "base.json")


def test_zero_examples(workspace, tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["train-base", "--logs", str(empty), "--out", str(tmp_path / "b.json")]) == EXIT_CODES["input"]
    error_line(capsys)


def test_evaluate_rows(workspace, tmp_path):
    args = ["evaluate", "--config", str(workspace / "cfg.json"), "--logs", str(workspace / "sim" / "logs.jsonl"),
            "--base", str(workspace / "base.json"), "--sim", str(workspace / "sim.json"),
            "--ground-truth", str(workspace / "sim" / "ground_truth.jsonl")]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    rows = read_csv(tmp_path / "a.csv")
    variants = {r["experiment"] for r in rows}
    assert "algorithm1" in variants and any(v.startswith("algorithm2") for v in variants)
    assert len({r["input_hash"] for r in rows}) == 1
    assert {"ndcg", "expected_bookings", "price_variance_top8", "geo_redundancy_top8"} <= {r["metric"] for r in rows}
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    assert main(args + ["--lam", "0", "--convention", "algorithm2_literal", "--out", str(tmp_path / "zero.csv")]) == 0
    rows = read_csv(tmp_path / "zero.csv")
    a1 = {r["metric"]: r["value"] for r in rows if r["experiment"] == "algorithm1"}
    a2 = {r["metric"]: r["value"] for r in rows if r["experiment"] != "algorithm1"}
    assert a1 == a2


def test_rerank_writes_ledger(workspace, tmp_path):
    out = tmp_path / "ranked.jsonl"
    assert main(["rerank", "--logs", str(workspace / "sim" / "logs.jsonl"), "--base", str(workspace / "base.json"),
                 "--sim", str(workspace / "sim.json"), "--lam", "1/3", "--out", str(out)]) == 0
    ranked = [json.loads(line) for line in out.read_text().splitlines()]
    ledger = [json.loads(line) for line in (tmp_path / "ranked.jsonl.ledger.jsonl").read_text().splitlines()]
    assert len(ranked) == len(ledger) == MARKET["n_searches"]
    rec = ledger[0]
    for p, terms in enumerate(rec["penalties"]):
        rebuilt = rec["base_logits"][p] - sum(w * s for _, w, s in terms)
        assert rebuilt == pytest.approx(rec["final_logits"][p], abs=1e-12)
    assert (tmp_path / "ranked.jsonl.manifest.json").exists()


def test_sweep(workspace, tmp_path):
    common = ["sweep-lambda", "--logs", str(workspace / "sim" / "logs.jsonl"), "--base", str(workspace / "base.json"),
              "--sim", str(workspace / "sim.json")]
    assert main(common + ["--grid", "1/3", "--out", str(tmp_path / "one.csv")]) == 0
    rows = read_csv(tmp_path / "one.csv")
    assert [r["seed"] for r in rows] == ["0", "mean", "argmax"]
    assert main(common + ["--out", str(tmp_path / "full.csv")]) == 0
    rows = read_csv(tmp_path / "full.csv")
    lams = [float(r["lambda"]) for r in rows if r["seed"] == "0"]
    assert 1 / 3 in lams and len(lams) == 5
    assert main(common + ["--out", str(tmp_path / "again.csv")]) == 0
    assert (tmp_path / "full.csv").read_bytes() == (tmp_path / "again.csv").read_bytes()


def test_sweep_empty_grid(workspace, tmp_path, capsys):
    code = main(["sweep-lambda", "--logs", str(workspace / "sim" / "logs.jsonl"), "--base", str(workspace / "base.json"),
                 "--sim", str(workspace / "sim.json"), "--grid", "", "--out", str(tmp_path / "x.csv")])
    assert code == EXIT_CODES["config"]
    assert "empty" in error_line(capsys)


def test_schema_mismatch_exit(workspace, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"market": {**MARKET, "descriptor_dim": 2, "n_searches": 5}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    code = main(["evaluate", "--logs", str(tmp_path / "o" / "logs.jsonl"), "--base", str(workspace / "base.json"),
                 "--out", str(tmp_path / "e.csv")])
    assert code == EXIT_CODES["schema"]
    assert error_line(capsys).startswith("divrank-error schema:")


def test_usage_errors(capsys):
    assert main([]) == EXIT_CODES["usage"]
    error_line(capsys)
    assert main(["simulate", "--out", "x"]) == EXIT_CODES["usage"]
    error_line(capsys)


def test_report_small(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "market": {"n_listings": 300, "cluster_count": 30},
        "base_train": {"epochs": 1}, "sim_train": {"epochs": 1},
        "pipeline": {"n_train": 300, "n_sim_train": 300, "n_heldout": 100, "n_eval": 100, "sweep_grid": [0, "1/3"]},
    }))
    assert main(["report", "--config", str(cfg), "--seeds", "0,1", "--null-control", "--out", str(tmp_path / "r")]) == 0
    rows = read_csv(tmp_path / "r" / "report.csv")
    assert {r["market"] for r in rows} == {"clustered", "null"}
    assert "realized_bookings" in (tmp_path / "r" / "summary.txt").read_text()
    man = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert man["seeds"] == [0, 1]
