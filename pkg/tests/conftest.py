"""Shared fixtures: the committed digit classifier, a PNG corpus rendered
from sklearn's digits dataset, prebuilt latent indexes, and a factory for
tiny non-convolutional models built directly from the graph schema."""

import json
import os

import numpy as np
import pytest
from PIL import Image
from sklearn.datasets import load_digits

from xexplain.backend import load_model
from xexplain.index import build_index
from xexplain.onnx_lite import ValueInfo, make_model, make_node, save_onnx

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures", "desk")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_model_path():
    return os.path.join(FIXTURE_DIR, "model.onnx")


@pytest.fixture(scope="session")
def desk_manifest_path():
    return os.path.join(FIXTURE_DIR, "manifest.json")


@pytest.fixture(scope="session")
def desk_parity_path():
    return os.path.join(FIXTURE_DIR, "parity.bin")


@pytest.fixture(scope="session")
def desk_bundle(desk_model_path, desk_manifest_path):
    return load_model(desk_model_path, desk_manifest_path)


@pytest.fixture(scope="session")
def digit_corpus(tmp_path_factory):
    """All 1797 sklearn digits as 64x64 grayscale PNGs named NNNN_label.png."""
    root = tmp_path_factory.mktemp("digits")
    data = load_digits()
    paths, labels = [], []
    for i, (raw, label) in enumerate(zip(data.images, data.target)):
        gray = np.round(raw / 16.0 * 255.0).astype(np.uint8)
        pil = Image.fromarray(gray, mode="L").resize(
            (64, 64), Image.Resampling.BILINEAR)
        path = root / f"{i:04d}_{label}.png"
        pil.save(path)
        paths.append(str(path))
        labels.append(int(label))
    return {"paths": paths, "labels": labels, "dir": str(root)}


@pytest.fixture(scope="session")
def digit_paths(digit_corpus):
    return digit_corpus["paths"]


@pytest.fixture(scope="session")
def small_index(desk_bundle, digit_paths):
    """Latent index over the first 80 corpus images."""
    return build_index(desk_bundle, digit_paths[:80])


@pytest.fixture(scope="session")
def large_index(desk_bundle, digit_paths):
    """Latent index over the first 500 corpus images (timing tests)."""
    return build_index(desk_bundle, digit_paths[:500])


def build_linear_model(out_dir, *, latent_dim=12, n_classes=4, side=8,
                       trans_b=False, seed=42, decoy=False,
                       output_names=("latent", "logits"),
                       manifest_overrides=None):
    """Write a two-layer perceptron graph (flatten -> gemm -> gemm) plus its
    manifest; logits are exactly linear in the input pixels.

    Returns (model_path, manifest_path, weights_dict) where weights_dict
    holds float32 fc1_w (pixels x latent), fc1_b, fc2_w (latent x classes),
    fc2_b for oracle computations.
    """
    rng = np.random.default_rng(seed)
    n_pixels = side * side
    fc1_w = rng.standard_normal((n_pixels, latent_dim)).astype(np.float32) * 0.2
    fc1_b = rng.standard_normal(latent_dim).astype(np.float32) * 0.1
    fc2_w = rng.standard_normal((latent_dim, n_classes)).astype(np.float32) * 0.5
    fc2_b = rng.standard_normal(n_classes).astype(np.float32) * 0.1

    latent_name, logits_name = output_names
    nodes = [
        make_node("Flatten", ["input"], ["flat"], axis=1),
        make_node("Gemm", ["flat", "fc1_w", "fc1_b"], [latent_name],
                  alpha=1.0, beta=1.0, transA=0, transB=0),
    ]
    stored_fc2 = fc2_w.T.copy() if trans_b else fc2_w
    nodes.append(make_node("Gemm", [latent_name, "fc2_w", "fc2_b"], [logits_name],
                           alpha=1.0, beta=1.0, transA=0,
                           transB=1 if trans_b else 0))
    initializers = {"fc1_w": fc1_w, "fc1_b": fc1_b,
                    "fc2_w": stored_fc2, "fc2_b": fc2_b}
    if decoy:
        initializers["decoy_w"] = rng.standard_normal(
            (latent_dim, n_classes)).astype(np.float32)

    model = make_model(
        nodes=nodes,
        inputs=[ValueInfo("input", 1, ["N", 1, side, side])],
        outputs=[ValueInfo(latent_name, 1, ["N", latent_dim]),
                 ValueInfo(logits_name, 1, ["N", n_classes])],
        initializers=initializers,
        name="linear",
    )
    model_path = os.path.join(str(out_dir), "linear.onnx")
    save_onnx(model, model_path)

    manifest = {
        "input_shape": [1, side, side],
        "mean": [0.0],
        "std": [1.0],
        "class_names": [f"c{i}" for i in range(n_classes)],
        "final_layer": {"weight_initializer": "fc2_w",
                        "bias_initializer": "fc2_b"},
        "pooling": "other",
        "convolutional": False,
    }
    if manifest_overrides:
        manifest.update(manifest_overrides)
    manifest_path = os.path.join(str(out_dir), "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return model_path, manifest_path, {
        "fc1_w": fc1_w, "fc1_b": fc1_b, "fc2_w": fc2_w, "fc2_b": fc2_b,
    }


@pytest.fixture(scope="session")
def linear_model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("linear_model")
    model_path, manifest_path, weights = build_linear_model(out)
    return {"model": model_path, "manifest": manifest_path, "weights": weights,
            "dir": str(out)}


@pytest.fixture(scope="session")
def linear_bundle(linear_model_dir):
    """Non-convolutional bundle whose logits are linear in the pixels."""
    return load_model(linear_model_dir["model"], linear_model_dir["manifest"])
