"""End-to-end explainers, their estimator surface, and the JSON record."""

import json
import math
import os

import numpy as np
import pytest

from xexplain.errors import DataError, FormatError, ModelContractError, ParameterError
from xexplain.explainers import (
    SCHEMA_VERSION,
    ExplanationRecord,
    LatentExplainer,
    SuperpixelExplainer,
    explain_latent,
    explain_superpixel,
    load_record,
    save_record,
)


def sample_record(test_path="test.png", neighbor_path="n.png", alpha=5.0):
    return ExplanationRecord(
        test_image_path=test_path,
        predicted_class=3,
        predicted_class_name="3",
        method="latent",
        config={"alpha": alpha, "pool_size": 50, "k_features": 1,
                "saliency": "cam", "seed": 0},
        features=[{
            "rank": 1, "test_cell": [2, 3], "test_segment": None,
            "test_box": [16, 24, 24, 32], "neighbor_row": 0,
            "neighbor_image_path": neighbor_path, "neighbor_cell": [1, 1],
            "neighbor_segment": None, "neighbor_box": [8, 8, 16, 16],
            "distance": 0.25, "neighbor_saliency": 1.5,
        }],
        timings={"total": 0.1},
        notes=["note"],
    )


class TestExplanationRecord:
    def test_round_trip(self):
        record = sample_record()
        clone = ExplanationRecord.from_dict(record.to_dict())
        assert clone == record

    def test_infinite_thresholds_serialize_as_strings(self):
        record = sample_record(alpha=float("inf"))
        payload = record.to_dict()
        assert payload["config"]["alpha"] == "inf"
        restored = ExplanationRecord.from_dict(payload)
        assert math.isinf(restored.config["alpha"])
        # the JSON itself must be strict (no bare Infinity tokens)
        json.dumps(payload, allow_nan=False)

    def test_unsupported_schema_rejected(self):
        payload = sample_record().to_dict()
        payload["schema"] = 99
        with pytest.raises(FormatError, match="schema"):
            ExplanationRecord.from_dict(payload)

    def test_save_checks_referenced_files(self, tmp_path):
        record = sample_record(test_path=str(tmp_path / "absent.png"))
        with pytest.raises(DataError, match="missing files"):
            save_record(record, tmp_path / "r.json")

    def test_save_load_round_trip(self, tmp_path):
        test_png = tmp_path / "t.png"
        neighbor_png = tmp_path / "n.png"
        for p in (test_png, neighbor_png):
            p.write_bytes(b"\x89PNG\r\n\x1a\n")
        record = sample_record(str(test_png), str(neighbor_png))
        out = tmp_path / "r.json"
        save_record(record, out)
        assert load_record(out) == record

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="record"):
            load_record(tmp_path / "ghost.json")


class TestLatentExplainerSurface:
    def test_get_params_reflects_constructor(self):
        explainer = LatentExplainer(alpha=2.0, pool_size=7, k_features=2,
                                    saliency="fam", seed=4, cache_size=16)
        params = explainer.get_params()
        assert params == {"alpha": 2.0, "pool_size": 7, "k_features": 2,
                          "saliency": "fam", "seed": 4, "cache_size": 16}

    def test_set_params_returns_self(self):
        explainer = LatentExplainer()
        assert explainer.set_params(alpha=3.0) is explainer
        assert explainer.alpha == 3.0

    def test_fit_requires_conv_model(self, linear_bundle, small_index):
        with pytest.raises(ModelContractError, match="conv"):
            LatentExplainer().fit(linear_bundle, small_index)

    def test_fit_rejects_unknown_saliency(self, desk_bundle, small_index):
        with pytest.raises(ParameterError, match="saliency"):
            LatentExplainer(saliency="sobel").fit(desk_bundle, small_index)

    def test_fit_rejects_bad_k(self, desk_bundle, small_index):
        with pytest.raises(ParameterError, match="k_features"):
            LatentExplainer(k_features=0).fit(desk_bundle, small_index)

    def test_explain_requires_fit(self, digit_paths):
        with pytest.raises(ParameterError, match="not fitted"):
            LatentExplainer().explain(digit_paths[0])


class TestSuperpixelExplainerSurface:
    def test_get_params_round_trip(self):
        explainer = SuperpixelExplainer(beta=2.0, segments=12)
        params = explainer.get_params()
        assert params["beta"] == 2.0 and params["segments"] == 12
        clone = SuperpixelExplainer(**params)
        assert clone.get_params() == params

    def test_fit_rejects_unknown_ranking(self, desk_bundle, small_index):
        with pytest.raises(ParameterError, match="test_saliency"):
            SuperpixelExplainer(test_saliency="gradcam").fit(
                desk_bundle, small_index)

    def test_explain_requires_fit(self, digit_paths):
        with pytest.raises(ParameterError, match="not fitted"):
            SuperpixelExplainer().explain(digit_paths[0])


@pytest.fixture(scope="module")
def latent_record(desk_bundle, small_index, digit_paths):
    explainer = LatentExplainer(alpha=5.0, pool_size=8, k_features=3)
    explainer.fit(desk_bundle, small_index)
    return explainer.explain(digit_paths[5])


@pytest.fixture(scope="module")
def superpixel_record(desk_bundle, small_index, digit_paths, tmp_path_factory):
    cache_dir = str(tmp_path_factory.mktemp("segcache"))
    explainer = SuperpixelExplainer(
        beta=1.0, pool_size=4, k_features=2, segments=10,
        test_saliency="logit", cache_dir=cache_dir)
    explainer.fit(desk_bundle, small_index)
    return explainer.explain(digit_paths[9])


class TestLatentExplainEndToEnd:
    @pytest.fixture
    def record(self, latent_record):
        return latent_record

    def test_record_shape(self, record, digit_paths, desk_bundle):
        assert record.method == "latent"
        assert record.schema == SCHEMA_VERSION
        assert record.test_image_path == digit_paths[5]
        assert record.predicted_class_name == \
            desk_bundle.class_names[record.predicted_class]
        assert [f["rank"] for f in record.features] == [1, 2, 3]

    def test_features_reference_pool_images(self, record, digit_paths):
        for feature in record.features:
            assert feature["neighbor_image_path"] in digit_paths[:80]
            assert feature["test_segment"] is None
            assert feature["neighbor_segment"] is None
            assert len(feature["test_cell"]) == 2
            assert len(feature["neighbor_cell"]) == 2
            assert feature["distance"] >= 0.0

    def test_boxes_are_feature_grid_tiles(self, record):
        for feature in record.features:
            for key in ("test_box", "neighbor_box"):
                top, left, bottom, right = feature[key]
                assert bottom - top == 8 and right - left == 8
                assert 0 <= top < bottom <= 64
                assert 0 <= left < right <= 64

    def test_timings_cover_stages(self, record):
        for stage in ("forward", "saliency", "query", "match", "total"):
            assert stage in record.timings
            assert record.timings[stage] >= 0.0
        assert record.timings["total"] >= record.timings["match"]

    def test_record_saves_and_renders_json(self, record, tmp_path):
        out = tmp_path / "record.json"
        save_record(record, out)
        assert load_record(out) == record


class TestSuperpixelExplainEndToEnd:
    @pytest.fixture
    def record(self, superpixel_record):
        return superpixel_record

    def test_record_shape(self, record, digit_paths):
        assert record.method == "superpixel"
        assert record.test_image_path == digit_paths[9]
        assert [f["rank"] for f in record.features] == [1, 2]
        for feature in record.features:
            assert feature["test_cell"] is None
            assert feature["neighbor_cell"] is None
            assert feature["test_segment"] is not None
            assert feature["neighbor_segment"] is not None
            assert feature["test_box"] is not None
            assert feature["neighbor_box"] is not None

    def test_config_captures_hyperparameters(self, record):
        assert record.config["beta"] == 1.0
        assert record.config["segments"] == 10
        assert record.config["test_saliency"] == "logit"

    def test_lime_ranking_variant(self, desk_bundle, small_index, digit_paths):
        record = explain_superpixel(
            desk_bundle, small_index, digit_paths[11], beta=1.0, pool_size=3,
            k_features=1, segments=8, test_saliency="lime", lime_samples=60)
        assert record.config["test_saliency"] == "lime"
        assert len(record.features) == 1


class TestFunctionalWrappers:
    def test_latent_wrapper_matches_estimator(self, desk_bundle, small_index,
                                              digit_paths):
        direct = explain_latent(desk_bundle, small_index, digit_paths[3],
                                alpha=5.0, pool_size=6, k_features=2)
        estimator = LatentExplainer(alpha=5.0, pool_size=6, k_features=2)
        via = estimator.fit(desk_bundle, small_index).explain(digit_paths[3])
        assert direct.features == via.features
        assert direct.config == via.config
        assert direct.predicted_class == via.predicted_class

    def test_wrappers_accept_preprocessed_tensors(self, desk_bundle,
                                                  small_index, digit_paths):
        from xexplain.backend import load_image

        image = load_image(desk_bundle, digit_paths[4])
        record = explain_latent(desk_bundle, small_index, image,
                                pool_size=4, k_features=1)
        assert record.test_image_path == digit_paths[4]
        assert os.path.exists(record.test_image_path)
