import csv
import subprocess
import sys

import pytest

from dotin.cli import build_parser, main
from dotin.config import CONFIG_KEYS
from dotin.graphs import parse_tu_dataset

SMALL = ["--hidden", "8", "--n-layers", "2", "--epochs", "2", "--patience", "0", "--folds", "2",
         "--graphs-per-class", "4", "--n-min", "8", "--n-max", "10", "--batch-size", "4"]


def _rows(path):
    return list(csv.DictReader(open(path)))


@pytest.fixture
def trained(tmp_path):
    rc = main(["train", *SMALL, "--alpha", "0.5", "--tasks", "cls,ged", "--runs-dir", str(tmp_path), "--name", "a"])
    assert rc == 0
    return tmp_path / "a"


class TestTrain:
    def test_outputs(self, trained):
        for f in ("config.cfg", "report.csv", "checkpoint.bin"):
            assert (trained / f).is_file()
        assert any(r["fold"] == "mean" for r in _rows(trained / "report.csv"))

    def test_repeat_run_identical(self, trained, tmp_path):
        main(["train", *SMALL, "--alpha", "0.5", "--tasks", "cls,ged", "--runs-dir", str(tmp_path), "--name", "b"])
        for f in ("config.cfg", "report.csv", "checkpoint.bin"):
            assert (trained / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_config_file_and_fingerprint_dir(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("hidden = 8\nn_layers = 2\nepochs = 1\npatience = 0\nfolds = 2\ngraphs_per_class = 3\nn_min = 8\nn_max = 9\n")
        assert main(["train", "--config", str(cfg), "--runs-dir", str(tmp_path / "runs")]) == 0
        (run,) = (tmp_path / "runs").iterdir()
        assert len(run.name) == 12


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert main(["fly"]) == 2

    def test_unknown_flag(self, capsys):
        assert main(["train", "--bogus", "1"]) == 2

    def test_bad_value(self, tmp_path, capsys):
        assert main(["train", "--hidden", "x", "--runs-dir", str(tmp_path)]) == 3
        assert "config error" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "none.cfg"), "--runs-dir", str(tmp_path)]) == 3

    def test_bad_checkpoint(self, tmp_path, capsys):
        (tmp_path / "x.bin").write_bytes(b"garbage!")
        assert main(["eval", "--checkpoint", str(tmp_path / "x.bin"), "--runs-dir", str(tmp_path)]) == 1

    def test_analyze_needs_an_action(self, trained, tmp_path, capsys):
        assert main(["analyze", "--checkpoint", str(trained / "checkpoint.bin"), "--runs-dir", str(tmp_path)]) == 3


class TestCommands:
    def test_eval_uses_checkpoint_config(self, trained, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(trained / "checkpoint.bin"), "--runs-dir", str(tmp_path), "--name", "e"]) == 0
        metrics = {r["metric"] for r in _rows(tmp_path / "e" / "eval.csv")}
        assert {"accuracy", "triplet_accuracy", "pair_auc"} <= metrics

    def test_bench_records(self, tmp_path, capsys):
        rc = main(["bench", *SMALL, "--epochs", "1", "--ratios", "0,0.5,0.9", "--runs-dir", str(tmp_path), "--name", "b"])
        assert rc == 0
        rows = _rows(tmp_path / "b" / "bench.csv")
        assert len(rows) == 1 + 2 * 3
        assert [r["strategy"] for r in rows] == ["none"] + ["dotin", "random", "none"] * 2
        flops = {float(r["drop_ratio"]): int(r["flops_per_batch"]) for r in rows if r["strategy"] == "dotin"}
        assert flops[0.9] < flops[0.5]

    def test_analyze_csvs(self, trained, tmp_path, capsys):
        rc = main(["analyze", "--checkpoint", str(trained / "checkpoint.bin"), "--export-attentiveness", "--drop-plans",
                   "--limit", "3", "--runs-dir", str(tmp_path), "--name", "an"])
        assert rc == 0
        rows = _rows(tmp_path / "an" / "attentiveness.csv")
        per_graph = {}
        for r in rows:
            per_graph.setdefault(r["graph"], []).append(int(r["rank_task1"]))
        assert len(per_graph) == 3
        for ranks in per_graph.values():
            assert sorted(ranks) == list(range(1, len(ranks) + 1))
        assert _rows(tmp_path / "an" / "drop_plans.csv")

    def test_analyze_rank_export_needs_two_tasks(self, tmp_path, capsys):
        main(["train", *SMALL, "--runs-dir", str(tmp_path), "--name", "one"])
        rc = main(["analyze", "--checkpoint", str(tmp_path / "one" / "checkpoint.bin"), "--export-attentiveness",
                   "--runs-dir", str(tmp_path)])
        assert rc == 1

    def test_make_data_round_trip(self, tmp_path, capsys):
        assert main(["make-data", "--graphs-per-class", "3", "--n-min", "8", "--n-max", "9", "--out", str(tmp_path / "d")]) == 0
        gset = parse_tu_dataset(tmp_path / "d", "SYNTH")
        assert len(gset) == 6
        assert len(_rows(tmp_path / "d" / "summary.csv")) == 6


def test_help_lists_every_key():
    text = build_parser()._subparsers._group_actions[0].choices["train"].format_help()
    for key in CONFIG_KEYS:
        assert "--" + key.replace("_", "-") in text


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "dotin.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "make-data" in out.stdout
