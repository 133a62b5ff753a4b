"""Command-line tests for the exporter."""

import os

import pytest

from export_glue.cli import main


class TestExportCommand:
    def test_desk_export_writes_three_artifacts(self, tmp_path, capsys):
        out_dir = tmp_path / "bundle"
        code = main(["export", "--arch", "desk-cnn", "--epochs", "1",
                     "--out", str(out_dir)])
        captured = capsys.readouterr()
        assert code == 0
        for name in ("model.onnx", "manifest.json", "parity.bin"):
            assert (out_dir / name).exists()
            assert name in captured.out

    def test_unknown_arch_exits_three(self, tmp_path, capsys):
        code = main(["export", "--arch", "resnet999",
                     "--out", str(tmp_path)])
        assert code == 3
        assert "resnet999" in capsys.readouterr().err

    def test_missing_out_flag_exits_two(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["export", "--arch", "desk-cnn"])
        assert excinfo.value.code == 2

    def test_weights_flag_forwarded(self, tmp_path, capsys):
        # A bogus weights path must surface as an error, proving the flag
        # reaches the loader.
        with pytest.raises((FileNotFoundError, OSError)):
            main(["export", "--arch", "resnet18",
                  "--weights", str(tmp_path / "none.pt"),
                  "--out", str(tmp_path)])
