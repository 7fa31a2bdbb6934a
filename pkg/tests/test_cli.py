"""
Tests for the `bia` command line.
"""

import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from cli.main import app

runner = CliRunner()


@pytest.fixture
def base_args(tmp_path):
    """Options pointing every stage at a temporary workspace with a small corpus."""
    overrides = {
        "paths.work_dir": tmp_path / "work",
        "paths.synth_dir": tmp_path / "data",
        "paths.transactions": tmp_path / "data" / "transactions.csv",
        "synth.n_users": 60,
        "synth.n_categories": 5,
        "synth.items_per_category": 3,
        "synth.horizon_days": 120,
        "synth.mean_gap_days": 10,
        "synth.category_participation": 0.8,
        "split.history_days": 110,
        "train.epochs": 5,
        "train.batch_size": 64,
        "ic.grid_step": 0.5,
        "eval.ks": "3,10",
    }
    args = []
    for key, value in overrides.items():
        args += ["--set", f"{key}={value}"]
    return args


def invoke(base_args, *command):
    return runner.invoke(app, [*base_args, *command])


class TestStages:
    """Test suite for running the stage chain."""

    def test_full_chain(self, tmp_path, base_args):
        """Test every stage in order on a small synthetic corpus."""
        for stage in ["synth", "ingest", "split", "featurize", "train", "score", "recommend", "evaluate", "importance"]:
            result = invoke(base_args, stage)
            assert result.exit_code == 0, result.output
            assert f"✅ {stage} done" in result.output

        work = tmp_path / "work"
        assert (work / "recommend" / "recommendations.csv").exists()
        assert (work / "evaluate" / "metrics.csv").exists()
        assert "PCIC" in (work / "evaluate" / "table.txt").read_text(encoding="utf-8")
        tuned = (work / "model" / "ic_tuned.conf").read_text(encoding="utf-8")
        assert tuned.startswith("ic.alpha = ")

        manifest = json.loads((work / "manifest.json").read_text(encoding="utf-8"))
        assert set(manifest["stages"]) == {
            "synth",
            "ingest",
            "split",
            "featurize",
            "train",
            "score",
            "recommend",
            "evaluate",
            "importance",
        }
        assert manifest["stages"]["featurize"]["version"] == "pcic-features-v1"

    def test_label_window_report(self, tmp_path, base_args):
        """`eval.label_windows` adds a PC comparison per window to the evaluate outputs."""
        for stage in ["synth", "ingest", "split", "featurize"]:
            assert invoke(base_args, stage).exit_code == 0
        result = invoke(base_args, "--set", "eval.label_windows=7,1", "evaluate")
        assert result.exit_code == 0, result.output
        assert "label-window sensitivity" in result.output
        table = pd.read_csv(tmp_path / "work" / "evaluate" / "sensitivity.csv")
        pc = table[(table["algorithm"] == "PC") & (table["segment"] == "all")]
        assert set(pc["label_window_days"]) == {7, 1}

    def test_train_before_featurize(self, base_args):
        """Test that a stage run too early names the missing stage."""
        result = invoke(base_args, "train")
        assert result.exit_code == 2
        assert "featurize" in result.output

    def test_label_window_flag_reaches_manifest(self, tmp_path, base_args):
        """Test the --label-window-days shortcut."""
        assert invoke(base_args, "synth").exit_code == 0
        assert invoke(base_args, "ingest").exit_code == 0
        result = runner.invoke(app, [*base_args, "--label-window-days", "1", "split"])
        assert result.exit_code == 0, result.output
        manifest = json.loads((tmp_path / "work" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["config"]["split"]["label_window_days"] == 1

    def test_manifest_replays_config(self, tmp_path, base_args):
        """Test replaying a run from its manifest."""
        assert invoke(base_args, "synth").exit_code == 0
        manifest = tmp_path / "work" / "manifest.json"
        first = (tmp_path / "data" / "transactions.csv").read_bytes()
        (tmp_path / "data" / "transactions.csv").unlink()
        result = runner.invoke(app, ["--config", str(manifest), "synth"])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "data" / "transactions.csv").read_bytes() == first


class TestOptions:
    """Test suite for config handling at the command line."""

    def test_unknown_key(self, base_args):
        """Test rejection of an unknown config key."""
        result = invoke(base_args, "--set", "split.window=3", "keys")
        assert result.exit_code != 0

    def test_bad_override_reported(self):
        """Test the error line for an invalid override."""
        result = runner.invoke(app, ["--set", "train.epochs=0", "keys"])
        assert result.exit_code == 1
        assert "❌ Error" in result.output

    def test_keys_lists_defaults(self):
        """Test the key listing."""
        result = runner.invoke(app, ["keys"])
        assert result.exit_code == 0
        assert "split.label_window_days = 7" in result.output
