"""Tests for argument parsing, config merging and the command exit codes."""
import argparse
import json
import logging
from pathlib import Path

import pytest
import yaml
from pydantic import ValidationError

from src.cli import (
    build_parser,
    eval_config_from_args,
    main,
    merge_config,
    parse_size,
    train_config_from_args,
)
from src.config.settings import Settings
from src.enums import ExitCode
from src.logging_config import JSONFormatter, get_logger

EXAMPLES = Path(__file__).resolve().parent.parent / "src" / "config" / "examples"
TINY_DATA = ["--size", "8x8", "--patch", "4", "--max-text-len", "6", "--log-level", "ERROR"]


# ── Parsing helpers ──────────────────────────────────────────────────────


class TestParsing:
    def test_parse_size(self):
        """"32x24" parses to (32, 24)."""
        assert parse_size("32x24") == (32, 24)

    @pytest.mark.parametrize("text", ["32", "0x8", "axb"])
    def test_parse_size_rejects(self, text):
        """Malformed or non-positive sizes are refused."""
        with pytest.raises(argparse.ArgumentTypeError):
            parse_size(text)

    def test_merge_precedence(self):
        """Flags override the config file, which overrides defaults."""
        merged = merge_config({"base_lr": 1.0, "epochs": 5}, {"lr": 2.0, "epochs": 7},
                              {"lr": 3.0, "epochs": None}, {"lr": "base_lr"})
        assert merged == {"base_lr": 3.0, "epochs": 7}

    def test_config_file_feeds_train_config(self, tmp_path):
        """YAML keys named like flags land on TrainConfig fields."""
        path = tmp_path / "run.yml"
        path.write_text(yaml.safe_dump({"lr": 0.002, "mask-ratio": 0.5, "epochs": 4}))
        args = build_parser().parse_args(["pretrain", "--bundle", "b", "--out", "o",
                                          "--config", str(path), "--epochs", "6"])
        cfg = train_config_from_args(args)
        assert (cfg.base_lr, cfg.mask_ratio, cfg.epochs) == (0.002, 0.5, 6)

    def test_example_configs_load(self):
        """The shipped example files validate against their configs."""
        parser = build_parser()
        for name in ("pretrain_desk.yml", "pretrain_smoke.yml"):
            args = parser.parse_args(["pretrain", "--bundle", "b", "--out", "o",
                                      "--config", str(EXAMPLES / name)])
            assert train_config_from_args(args).variant.value == "maskedclip"
        args = parser.parse_args(["eval", "--checkpoint", "c", "--bundle", "b", "--out", "o",
                                  "--config", str(EXAMPLES / "eval_label_scarce.yml")])
        assert eval_config_from_args(args).label_fraction == 0.1


# ── Exit codes ───────────────────────────────────────────────────────────


class TestExitCodes:
    def test_help(self, capsys):
        """--help exits cleanly."""
        assert main(["--help"]) == 0
        assert "gen-data" in capsys.readouterr().out

    def test_missing_required_flag(self, capsys):
        """gen-data without --out is a usage error."""
        assert main(["gen-data", "--paired", "4"]) == ExitCode.USAGE

    def test_bad_class_count(self, tmp_path, capsys):
        """--classes 1 is a usage error."""
        code = main(["gen-data", "--paired", "4", "--classes", "1",
                     "--out", str(tmp_path / "b.mcdb")] + TINY_DATA)
        assert code == ExitCode.USAGE

    def test_bad_label_fraction(self, tmp_path, capsys):
        """--label-fraction 1.1 is rejected before any file is read."""
        code = main(["eval", "--checkpoint", str(tmp_path / "c"), "--bundle", str(tmp_path / "b"),
                     "--out", str(tmp_path / "r.yml"), "--label-fraction", "1.1",
                     "--log-level", "ERROR"])
        assert code == ExitCode.USAGE

    def test_missing_bundle_is_io_error(self, tmp_path, capsys):
        """A missing input bundle maps to the I/O exit code."""
        code = main(["pretrain", "--bundle", str(tmp_path / "none.mcdb"),
                     "--out", str(tmp_path / "run"), "--model", "tiny", "--log-level", "ERROR"])
        assert code == ExitCode.IO

    def test_corrupt_bundle_is_io_error(self, tmp_path, capsys):
        """A file with the wrong magic maps to the I/O exit code."""
        path = tmp_path / "junk.mcdb"
        path.write_bytes(b"JUNK" + bytes(64))
        code = main(["pretrain", "--bundle", str(path), "--out", str(tmp_path / "run"),
                     "--model", "tiny", "--log-level", "ERROR"])
        assert code == ExitCode.IO

    def test_label_sweep_fraction_bounds(self, tmp_path, capsys):
        """Sweep fractions outside (0, 1] are a usage error."""
        code = main(["label-sweep", "--checkpoint", "c", "--bundle", "b",
                     "--out", str(tmp_path), "--fractions", "0.5,1.5", "--log-level", "ERROR"])
        assert code == ExitCode.USAGE


# ── Commands ─────────────────────────────────────────────────────────────


class TestCommands:
    def test_gen_data_is_reproducible(self, tmp_path, capsys):
        """Two runs with one seed write byte-identical bundles and a manifest."""
        paths = [tmp_path / "a.mcdb", tmp_path / "b.mcdb"]
        for path in paths:
            assert main(["gen-data", "--paired", "6", "--unpaired", "2", "--classes", "2",
                         "--seed", "4", "--out", str(path)] + TINY_DATA) == ExitCode.OK
        assert paths[0].read_bytes() == paths[1].read_bytes()
        manifest = yaml.safe_load((tmp_path / "a.mcdb.manifest.yml").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["config"]["seed"] == 4

    def test_losscheck_passes(self, capsys):
        """losscheck prints a report and exits 0."""
        assert main(["losscheck", "--log-level", "ERROR"]) == ExitCode.OK
        assert "PASS" in capsys.readouterr().out

    def test_gradcheck_fault_fails(self, capsys):
        """gradcheck --inject-fault reports failure with exit code 1."""
        code = main(["gradcheck", "--coords", "1", "--inject-fault", "--log-level", "ERROR"])
        assert code == ExitCode.VERIFICATION_FAILED
        assert "FAIL" in capsys.readouterr().out

    def test_gradcheck_coords_bound(self, capsys):
        """--coords 0 is a usage error."""
        assert main(["gradcheck", "--coords", "0", "--log-level", "ERROR"]) == ExitCode.USAGE

    def test_gradcheck_model_choice(self):
        """gradcheck runs the tiny model by default and accepts --model desk."""
        parser = build_parser()
        assert parser.parse_args(["gradcheck"]).model == "tiny"
        assert parser.parse_args(["gradcheck", "--model", "desk"]).model == "desk"
        with pytest.raises(SystemExit):
            parser.parse_args(["gradcheck", "--model", "huge"])


# ── Settings and logging ─────────────────────────────────────────────────


class TestSettingsAndLogging:
    def test_env_overrides(self, monkeypatch):
        """MASKEDCLIP_* variables reach Settings."""
        monkeypatch.setenv("MASKEDCLIP_LOG_LEVEL", "DEBUG")
        monkeypatch.setenv("MASKEDCLIP_LOG_FORMAT", "text")
        settings = Settings()
        assert (settings.log_level, settings.log_format) == ("DEBUG", "text")

    def test_bad_format_rejected(self, monkeypatch):
        """Only json and text formats are accepted."""
        monkeypatch.setenv("MASKEDCLIP_LOG_FORMAT", "xml")
        with pytest.raises(ValidationError):
            Settings()

    def test_json_record_carries_extras(self):
        """JSON lines hold the message and the structured extras."""
        record = logging.LogRecord("maskedclip.trainer", logging.INFO, __file__, 1,
                                   "step %d", (3,), None)
        record.step = 3
        record.variant = "mae_only"
        entry = json.loads(JSONFormatter().format(record))
        assert entry["message"] == "step 3"
        assert (entry["step"], entry["variant"]) == (3, "mae_only")
        assert "epoch" not in entry

    def test_logger_namespace(self):
        """Module loggers live under the maskedclip namespace."""
        assert get_logger("cli").name == "maskedclip.cli"
