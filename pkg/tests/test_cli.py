"""Exit codes, argument handling, and logging behaviour of the lsm command."""

import json

import pytest

from lsm.cli import main

TINY_SCENE = {"size": [32, 32], "n_landslides": 6, "informative_bands": 2,
              "total_bands": 8, "correlation_length": 4.0, "seed": 5}


def write_config(path, out_dir, **overrides):
    doc = {
        "paths": {"out_dir": str(out_dir)},
        "scene": dict(TINY_SCENE),
        "sampling": {"window": 5},
        "training": {"max_epochs": 2, "patience": 2},
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return str(path)


class TestExitCodes:
    def test_success_returns_zero(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", tmp_path / "out")
        assert main(["synth", "--config", cfg]) == 0
        assert (tmp_path / "out" / "scene" / "scene.json").exists()

    def test_unknown_config_key_returns_two(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sampel": {}}))
        assert main(["synth", "--config", str(cfg)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file_returns_two(self, tmp_path):
        assert main(["synth", "--config", str(tmp_path / "absent.json")]) == 2

    def test_malformed_json_returns_two(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{broken")
        assert main(["synth", "--config", str(cfg)]) == 2

    def test_missing_prerequisite_returns_three(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", tmp_path / "out")
        assert main(["evaluate", "--config", cfg]) == 3
        assert "sample" in capsys.readouterr().err

    def test_unknown_stage_rejected_by_parser(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", tmp_path / "out")
        with pytest.raises(SystemExit):
            main(["deploy", "--config", cfg])


class TestFlags:
    def test_seed_flag_changes_the_scene(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", tmp_path / "a")
        assert main(["synth", "--config", cfg, "--seed", "1",
                     "--out", str(tmp_path / "s1")]) == 0
        assert main(["synth", "--config", cfg, "--seed", "2",
                     "--out", str(tmp_path / "s2")]) == 0
        assert main(["synth", "--config", cfg, "--seed", "1",
                     "--out", str(tmp_path / "s1b")]) == 0
        inv = {k: (tmp_path / k / "scene" / "inventory.csv").read_bytes()
               for k in ("s1", "s2", "s1b")}
        assert inv["s1"] != inv["s2"]
        assert inv["s1"] == inv["s1b"]

    def test_out_flag_redirects_artifacts(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", tmp_path / "configured")
        assert main(["synth", "--config", cfg, "--out",
                     str(tmp_path / "actual")]) == 0
        assert (tmp_path / "actual" / "scene" / "scene.json").exists()
        assert not (tmp_path / "configured").exists()

    def test_logs_go_to_stderr_only(self, tmp_path, capsys, caplog):
        cfg = write_config(tmp_path / "c.json", tmp_path / "out")
        assert main(["synth", "--config", cfg]) == 0
        captured = capsys.readouterr()
        assert captured.out == ""
