"""End-to-end command-line tests: subcommand pipelines, argument
handling, and the exit-code contract (0 ok, 2 usage, 3 model contract,
4 data, 5 no match)."""

import csv
import json
import os
import shutil

import pytest

from xexplain import cli
from xexplain.cli import main
from xexplain.errors import NoMatchError


@pytest.fixture(scope="module")
def workspace(desk_model_path, desk_manifest_path, digit_paths,
              tmp_path_factory):
    """Image directory plus a CLI-built index over it."""
    root = tmp_path_factory.mktemp("cli")
    image_dir = root / "imgs"
    image_dir.mkdir()
    for path in digit_paths[:12]:
        shutil.copy(path, image_dir / os.path.basename(path))
    index_path = root / "small.idx"
    code = main(["build-index", "--model", desk_model_path,
                 "--manifest", desk_manifest_path, str(image_dir),
                 "--out", str(index_path)])
    assert code == 0
    return {
        "model": desk_model_path,
        "manifest": desk_manifest_path,
        "image_dir": image_dir,
        "index": index_path,
        "images": sorted(str(p) for p in image_dir.iterdir()),
    }


def model_args(workspace):
    return ["--model", workspace["model"], "--manifest", workspace["manifest"]]


class TestBuildIndex:
    def test_reports_count_and_dimension(self, workspace, capsys,
                                         desk_model_path, desk_manifest_path,
                                         tmp_path):
        out = tmp_path / "rebuilt.idx"
        code = main(["build-index", "--model", desk_model_path,
                     "--manifest", desk_manifest_path,
                     *workspace["images"][:3], "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        assert "indexed 3 images at dimension 32" in captured.out
        assert out.exists()

    def test_directory_input_skips_non_images(self, workspace, tmp_path,
                                              capsys):
        mixed = tmp_path / "mixed"
        mixed.mkdir()
        shutil.copy(workspace["images"][0], mixed / "a.png")
        (mixed / "notes.txt").write_text("not an image\n")
        code = main(["build-index", *model_args(workspace), str(mixed),
                     "--out", str(tmp_path / "one.idx")])
        assert code == 0
        assert "indexed 1 images" in capsys.readouterr().out

    def test_empty_directory_is_data_error(self, workspace, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["build-index", *model_args(workspace), str(empty),
                     "--out", str(tmp_path / "x.idx")])
        assert code == 4
        assert "no input images" in capsys.readouterr().err


@pytest.fixture(scope="module")
def latent_run(workspace, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("latent_out")
    image = workspace["images"][5]
    code = main(["explain", *model_args(workspace),
                 "--index", str(workspace["index"]), "--image", image,
                 "--pool", "6", "--k-features", "2", "--out", str(out_dir)])
    return code, out_dir, image


class TestExplain:

    def test_latent_pipeline_writes_record_and_overlays(self, latent_run):
        code, out_dir, image = latent_run
        assert code == 0
        stem = os.path.splitext(os.path.basename(image))[0]
        record_path = out_dir / f"{stem}.explanation.json"
        with open(record_path) as fh:
            payload = json.load(fh)
        assert payload["method"] == "latent"
        assert len(payload["features"]) == 2
        assert (out_dir / f"{stem}.overlay.png").exists()
        assert (out_dir / f"{stem}.composite.png").exists()
        for rank in (1, 2):
            assert (out_dir / f"{stem}.neighbor-{rank}.png").exists()

    def test_self_image_in_corpus_yields_distance_zero(self, latent_run):
        _, out_dir, image = latent_run
        stem = os.path.splitext(os.path.basename(image))[0]
        with open(out_dir / f"{stem}.explanation.json") as fh:
            payload = json.load(fh)
        best = payload["features"][0]
        assert best["distance"] == 0.0
        assert os.path.basename(best["neighbor_image_path"]) == \
            os.path.basename(image)

    def test_superpixel_pipeline(self, workspace, tmp_path, monkeypatch,
                                 capsys):
        monkeypatch.delenv("XEXPLAIN_CACHE_DIR", raising=False)
        image = workspace["images"][2]
        code = main(["explain", *model_args(workspace),
                     "--index", str(workspace["index"]), "--image", image,
                     "--method", "superpixel", "--saliency", "logit",
                     "--segments", "8", "--pool", "3", "--k-features", "1",
                     "--no-render", "--out", str(tmp_path)])
        assert code == 0
        stem = os.path.splitext(os.path.basename(image))[0]
        with open(tmp_path / f"{stem}.explanation.json") as fh:
            payload = json.load(fh)
        assert payload["method"] == "superpixel"
        assert payload["config"]["beta"] == "inf"
        assert not (tmp_path / f"{stem}.overlay.png").exists()

    @pytest.mark.parametrize("method,saliency", [
        ("latent", "lime"), ("latent", "logit"), ("superpixel", "cam"),
    ])
    def test_method_saliency_mismatch_is_data_error(self, workspace, tmp_path,
                                                    method, saliency, capsys):
        code = main(["explain", *model_args(workspace),
                     "--index", str(workspace["index"]),
                     "--image", workspace["images"][0],
                     "--method", method, "--saliency", saliency,
                     "--out", str(tmp_path)])
        assert code == 4
        assert saliency in capsys.readouterr().err

    def test_missing_image_is_data_error(self, workspace, tmp_path, capsys):
        code = main(["explain", *model_args(workspace),
                     "--index", str(workspace["index"]),
                     "--image", str(tmp_path / "ghost.png"),
                     "--out", str(tmp_path)])
        assert code == 4
        assert "ghost.png" in capsys.readouterr().err

    def test_no_match_exit_code(self, workspace, tmp_path, monkeypatch,
                                capsys):
        def refuse(*args, **kwargs):
            raise NoMatchError("no feasible region under alpha")

        monkeypatch.setattr(cli, "explain_latent", refuse)
        code = main(["explain", *model_args(workspace),
                     "--index", str(workspace["index"]),
                     "--image", workspace["images"][0],
                     "--out", str(tmp_path)])
        assert code == 5
        assert "no match" in capsys.readouterr().err


class TestAblateCommand:
    def test_tiny_run_writes_csv_and_summary(self, workspace, tmp_path,
                                             capsys):
        out = tmp_path / "curves.csv"
        code = main(["ablate", *model_args(workspace),
                     *workspace["images"][:2],
                     "--methods", "cam,random", "--segments", "8",
                     "--mode", "include", "--n-images", "2",
                     "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["method", "segment_count", "mode", "image_id",
                           "logit"]
        assert len(rows) == 1 + 2 * 2
        assert "cam segments=8 include: mean logit" in captured.out
        assert "random segments=8 include" in captured.out

    def test_unknown_method_exits_four(self, workspace, tmp_path, capsys):
        code = main(["ablate", *model_args(workspace),
                     workspace["images"][0], "--methods", "sobel",
                     "--out", str(tmp_path / "c.csv")])
        assert code == 4
        assert "sobel" in capsys.readouterr().err


class TestMaskDatasetCommand:
    def test_full_occlusion_fraction_is_one(self, workspace, tmp_path,
                                            capsys):
        out_dir = tmp_path / "masked"
        code = main(["mask-dataset", *model_args(workspace),
                     *workspace["images"][:2], "--method", "cam",
                     "--full-occlusion", "--out", str(out_dir)])
        captured = capsys.readouterr()
        assert code == 0
        assert "mean occluded fraction 1.000" in captured.out
        with open(out_dir / "manifest.json") as fh:
            manifest = json.load(fh)
        assert len(manifest["entries"]) == 2
        for entry in manifest["entries"]:
            assert entry["occluded_fraction"] == 1.0

    def test_threshold_run(self, workspace, tmp_path, capsys):
        out_dir = tmp_path / "masked"
        code = main(["mask-dataset", *model_args(workspace),
                     workspace["images"][0], "--method", "cam",
                     "--threshold", "1", "--out", str(out_dir)])
        assert code == 0
        with open(out_dir / "manifest.json") as fh:
            manifest = json.load(fh)
        # threshold=1 keeps only the strict-max cell: one 8x8 tile of 64x64.
        assert manifest["entries"][0]["occluded_fraction"] == 64 / 4096


class TestRenderCommand:
    def test_renders_saved_record(self, workspace, tmp_path, capsys):
        record_dir = tmp_path / "rec"
        image = workspace["images"][7]
        assert main(["explain", *model_args(workspace),
                     "--index", str(workspace["index"]), "--image", image,
                     "--k-features", "1", "--no-render",
                     "--out", str(record_dir)]) == 0
        stem = os.path.splitext(os.path.basename(image))[0]
        record_path = record_dir / f"{stem}.explanation.json"
        out_dir = tmp_path / "drawn"
        code = main(["render", "--record", str(record_path),
                     "--manifest", workspace["manifest"],
                     "--out", str(out_dir)])
        captured = capsys.readouterr()
        assert code == 0
        assert (out_dir / f"{stem}.overlay.png").exists()
        assert (out_dir / f"{stem}.composite.png").exists()
        assert "overlay:" in captured.out

    def test_bad_manifest_is_data_error(self, workspace, tmp_path, capsys):
        record_dir = tmp_path / "rec"
        image = workspace["images"][7]
        main(["explain", *model_args(workspace),
              "--index", str(workspace["index"]), "--image", image,
              "--k-features", "1", "--no-render", "--out", str(record_dir)])
        stem = os.path.splitext(os.path.basename(image))[0]
        bad_manifest = tmp_path / "broken.json"
        bad_manifest.write_text("{}")
        code = main(["render",
                     "--record", str(record_dir / f"{stem}.explanation.json"),
                     "--manifest", str(bad_manifest), "--out",
                     str(tmp_path / "o")])
        assert code == 4
        assert "broken.json" in capsys.readouterr().err


class TestUsageErrors:
    def test_missing_required_flag_exits_two(self, workspace, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["explain", "--model", workspace["model"]])
        assert excinfo.value.code == 2
        assert "--manifest" in capsys.readouterr().err

    def test_unknown_subcommand_exits_two(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["disassemble"])
        assert excinfo.value.code == 2

    def test_no_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_non_numeric_alpha_exits_two(self, workspace, tmp_path, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["explain", *model_args(workspace),
                  "--index", str(workspace["index"]),
                  "--image", workspace["images"][0], "--alpha", "strict"])
        assert excinfo.value.code == 2
        assert "expected a number" in capsys.readouterr().err

    def test_alpha_accepts_inf_literal(self, workspace, tmp_path):
        code = main(["explain", *model_args(workspace),
                     "--index", str(workspace["index"]),
                     "--image", workspace["images"][3],
                     "--alpha", "inf", "--pool", "4", "--k-features", "1",
                     "--no-render", "--out", str(tmp_path)])
        assert code == 0

    def test_bad_segment_list_exits_two(self, workspace, tmp_path, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["ablate", *model_args(workspace), workspace["images"][0],
                  "--segments", "9,x", "--out", str(tmp_path / "c.csv")])
        assert excinfo.value.code == 2
        assert "comma-separated" in capsys.readouterr().err

    def test_manifest_contract_violation_exits_three(self, workspace,
                                                     tmp_path, capsys):
        broken = tmp_path / "broken.json"
        with open(workspace["manifest"]) as fh:
            manifest = json.load(fh)
        del manifest["final_layer"]
        broken.write_text(json.dumps(manifest))
        code = main(["explain", "--model", workspace["model"],
                     "--manifest", str(broken),
                     "--index", str(workspace["index"]),
                     "--image", workspace["images"][0],
                     "--out", str(tmp_path)])
        assert code == 3
        assert "model contract" in capsys.readouterr().err

    def test_threads_flag_smoke(self, workspace, tmp_path, capsys):
        code = main(["--threads", "1", "build-index", *model_args(workspace),
                     workspace["images"][0], "--out",
                     str(tmp_path / "t.idx")])
        assert code == 0

    def test_run_wrapper_raises_system_exit(self, monkeypatch):
        monkeypatch.setattr(cli, "main", lambda argv=None: 0)
        with pytest.raises(SystemExit) as excinfo:
            cli.run()
        assert excinfo.value.code == 0
