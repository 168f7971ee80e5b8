#!/usr/bin/env python3
"""Tests for the command-line front end and its exit codes."""

import json

import pytest

from cli import arguments_for, build_parser, main
from conftest import SMOKE_CONFIG, write_run
from fretal.config import OUTPUT_ROOT_ENV


class TestParser:
    def test_flags_become_overrides(self):
        namespace = build_parser().parse_args(
            [
                "adapt",
                "--target", "tint",
                "--source", "blend",
                "--temperature", "4",
                "--methods", "FT", "KD",
                "--set", "adaptation.loss.rho1=0.5",
                "--set", "adaptation.store_refresh=batch",
            ]
        )
        args = arguments_for(namespace)
        assert args["target"] == "tint" and args["source"] == "blend"
        assert args["overrides"] == {
            "adaptation.loss.temperature": 4.0,
            "methods": ["FT", "KD"],
            "adaptation.loss.rho1": 0.5,
            "adaptation.store_refresh": "batch",
        }
        assert "temperature" not in args

    def test_train_teacher_requires_source(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["train-teacher"])

    def test_unknown_method_is_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["adapt", "--target", "tint", "--method", "SGD"])


class TestExitCodes:
    def test_report_prints_tables(self, tmp_path, capsys):
        write_run(tmp_path)
        assert main(["report", "--config", SMOKE_CONFIG, "--out", str(tmp_path), "--check"]) == 0
        out = capsys.readouterr().out
        assert "blend -> tint" in out
        assert "acceptance:" not in out

    def test_report_check_failure(self, tmp_path, capsys):
        write_run(tmp_path, fretal_avg=0.70)
        assert main(["report", "--config", SMOKE_CONFIG, "--run-dir", str(tmp_path), "--check"]) == 4

    def test_report_without_check_lists_failures(self, tmp_path, capsys):
        write_run(tmp_path, fretal_avg=0.70)
        assert main(["report", "--config", SMOKE_CONFIG, "--out", str(tmp_path)]) == 0
        assert "acceptance:" in capsys.readouterr().out

    def test_missing_config_file(self, tmp_path):
        assert main(["zero-shot", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 1

    def test_malformed_override(self, tmp_path):
        assert main(["zero-shot", "--config", SMOKE_CONFIG, "--set", "no-equals-sign"]) == 1

    def test_missing_checkpoint(self, tmp_path):
        code = main(
            [
                "evaluate",
                "--config", SMOKE_CONFIG,
                "--out", str(tmp_path),
                "--checkpoint", str(tmp_path / "absent.pt"),
                "--domain", "blend",
            ]
        )
        assert code == 2

    def test_protocol_violation(self, tmp_path):
        common = ["--config", SMOKE_CONFIG, "--out", str(tmp_path)]
        assert main(["train-teacher", *common, "--source", "blend"]) == 0
        assert main(["adapt", *common, "--source", "blend", "--target", "blend"]) == 3

    def test_output_root_from_environment(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        write_run(tmp_path)
        assert main(["report", "--config", SMOKE_CONFIG]) == 0
        assert "FReTAL" in capsys.readouterr().out

    def test_json_output(self, tmp_path, capsys):
        assert main(["generate-data", "--config", SMOKE_CONFIG, "--out", str(tmp_path), "--domains", "tint"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert list(result["domains"]) == ["tint"]
