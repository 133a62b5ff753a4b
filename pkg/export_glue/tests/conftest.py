"""Shared fixtures: one desk-CNN export and one resnet50 export per
session, reused across test modules to keep runtime down."""

import numpy as np
import pytest
import torch
from torch import nn

from export_glue.export import ExportSpec, desk_spec, export_model, resnet_spec


class TinyCNN(nn.Module):
    """Smallest valid source model: two conv layers on 28x28 inputs, a
    pooled latent, and a linear head."""

    def __init__(self, n_classes=3):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 4, 3, padding=1)
        self.conv2 = nn.Conv2d(4, 6, 3, padding=1)
        self.act = nn.ReLU()
        self.fc = nn.Linear(6, n_classes)

    def forward(self, x):
        x = self.act(self.conv1(x))
        conv_features = self.act(self.conv2(x))
        latent = conv_features.mean(dim=(2, 3))
        return conv_features, latent, self.fc(latent)


def tiny_spec(seed=0):
    torch.manual_seed(seed)
    module = TinyCNN().eval()
    return ExportSpec(
        arch="tiny-cnn",
        module=module,
        input_shape=(1, 28, 28),
        mean=[0.5],
        std=[0.5],
        class_names=["a", "b", "c"],
        weight_initializer="fc.weight",
        bias_initializer="fc.bias",
    )


@pytest.fixture(scope="session")
def desk_export(tmp_path_factory):
    """Quickly trained desk CNN (accuracy irrelevant here) exported to a
    session directory."""
    out_dir = tmp_path_factory.mktemp("desk_export")
    spec = desk_spec(seed=0, epochs=2)
    paths = export_model(spec, str(out_dir))
    return spec, paths


@pytest.fixture(scope="session")
def resnet_export(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("resnet_export")
    spec = resnet_spec("resnet50")
    paths = export_model(spec, str(out_dir))
    return spec, paths


@pytest.fixture(scope="session")
def tiny_export(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("tiny_export")
    spec = tiny_spec()
    paths = export_model(spec, str(out_dir))
    return spec, paths


def source_logits(spec, inputs):
    """Reference logits straight from the source framework."""
    spec.module.eval()
    with torch.no_grad():
        outputs = spec.module(torch.from_numpy(np.asarray(inputs)))
    outputs = outputs if isinstance(outputs, tuple) else (outputs,)
    return outputs[-1].numpy()
