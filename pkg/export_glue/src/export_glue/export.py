"""Model export into the engine's interchange contract.

`export_model` writes three artifacts per model:
  * the ONNX graph with outputs named conv_features, latent, logits
    (conv_features omitted for backbones without a spatial feature map);
  * manifest.json describing preprocessing, classes and the final layer;
  * parity.bin, reference logits for 10 inputs so the consuming runtime
    can verify its forward pass (magic XPAR, little-endian: u32 version,
    n, c, h, w, n_classes, then float32 inputs and float32 logits).
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

_PARITY_MAGIC = b"XPAR"
_PARITY_VERSION = 1
_PARITY_HEADER = struct.Struct("<4sIIIIII")


@dataclass
class ExportSpec:
    arch: str
    module: torch.nn.Module
    input_shape: tuple
    mean: list
    std: list
    class_names: list
    weight_initializer: str
    bias_initializer: str
    pooling: str = "gap"
    convolutional: bool = True
    output_names: tuple = ("conv_features", "latent", "logits")
    parity_inputs: np.ndarray | None = None
    extra_manifest: dict = field(default_factory=dict)


class UnsupportedArchitectureError(ValueError):
    """The source model has no final linear layer to decompose."""


def _patch_exporter():
    """torch's TorchScript ONNX path insists on the onnx package for a
    post-processing step that is a no-op for plain aten graphs; skip it."""
    from torch.onnx._internal.torchscript_exporter import onnx_proto_utils

    onnx_proto_utils._add_onnxscript_fn = lambda proto, custom_opsets: proto


def _final_linear(module):
    last = None
    for child in module.modules():
        if isinstance(child, torch.nn.Linear):
            last = child
    if last is None:
        raise UnsupportedArchitectureError(
            "model has no linear layer; the decomposition logits = latent.W + b "
            "needs a final linear head")
    return last


def check_decomposition(spec, example):
    """In-framework sanity check: the declared outputs obey
    logits = latent @ W.T + b before anything is written."""
    spec.module.eval()
    with torch.no_grad():
        outputs = spec.module(example)
    outputs = outputs if isinstance(outputs, tuple) else (outputs,)
    named = dict(zip(spec.output_names, outputs))
    latent, logits = named["latent"], named["logits"]
    final = _final_linear(spec.module)
    recon = latent @ final.weight.T + final.bias
    gap = (logits - recon).abs().max().item()
    if gap > 1e-4:
        raise UnsupportedArchitectureError(
            f"latent/logits outputs disagree with the final linear layer by {gap:.2e}")
    if "conv_features" in named:
        conv = named["conv_features"]
        pooled = conv.mean(dim=(2, 3)) if spec.pooling == "gap" else None
        if pooled is not None and (pooled - latent).abs().max().item() > 1e-4:
            raise UnsupportedArchitectureError(
                "latent is not the global average of conv_features but the "
                "manifest declares gap pooling")


def write_parity(path, inputs, logits):
    inputs = np.ascontiguousarray(inputs, dtype="<f4")
    logits = np.ascontiguousarray(logits, dtype="<f4")
    n, c, h, w = inputs.shape
    header = _PARITY_HEADER.pack(
        _PARITY_MAGIC, _PARITY_VERSION, n, c, h, w, logits.shape[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(inputs.tobytes())
        fh.write(logits.tobytes())


def read_parity(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version, n, c, h, w, n_classes = _PARITY_HEADER.unpack_from(blob, 0)
    if magic != _PARITY_MAGIC or version != _PARITY_VERSION:
        raise ValueError(f"not a parity file: {path}")
    offset = _PARITY_HEADER.size
    count = n * c * h * w
    inputs = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    logits = np.frombuffer(blob, dtype="<f4", offset=offset + count * 4)
    return inputs.reshape(n, c, h, w).copy(), logits.reshape(n, n_classes).copy()


def export_model(spec, out_dir):
    """Write model.onnx, manifest.json and parity.bin; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    spec.module.eval()
    example = torch.zeros((1,) + tuple(spec.input_shape))
    check_decomposition(spec, example)

    _patch_exporter()
    model_path = os.path.join(out_dir, "model.onnx")
    dynamic_axes = {"input": {0: "batch"}}
    dynamic_axes.update({name: {0: "batch"} for name in spec.output_names})
    torch.onnx.export(
        spec.module,
        (example,),
        model_path,
        input_names=["input"],
        output_names=list(spec.output_names),
        dynamic_axes=dynamic_axes,
        dynamo=False,
    )

    manifest = {
        "input_shape": list(spec.input_shape),
        "mean": list(spec.mean),
        "std": list(spec.std),
        "class_names": list(spec.class_names),
        "final_layer": {
            "weight_initializer": spec.weight_initializer,
            "bias_initializer": spec.bias_initializer,
        },
        "pooling": spec.pooling,
        "convolutional": spec.convolutional,
        "arch": spec.arch,
    }
    manifest.update(spec.extra_manifest)
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    if spec.parity_inputs is None:
        rng = np.random.default_rng(0)
        parity_inputs = rng.standard_normal(
            (10,) + tuple(spec.input_shape)).astype(np.float32)
    else:
        parity_inputs = np.asarray(spec.parity_inputs, dtype=np.float32)[:10]
    with torch.no_grad():
        outputs = spec.module(torch.from_numpy(parity_inputs))
    logits = (outputs if isinstance(outputs, tuple) else (outputs,))[-1].numpy()
    parity_path = os.path.join(out_dir, "parity.bin")
    write_parity(parity_path, parity_inputs, logits)

    return {"model": model_path, "manifest": manifest_path, "parity": parity_path}


def _initializer_names(module, linear):
    """Graph initializer names for the final linear layer's parameters
    (torch exports parameters under their state-dict names)."""
    for name, param in module.named_parameters():
        if param is linear.weight:
            weight_name = name
        elif param is linear.bias:
            bias_name = name
    return weight_name, bias_name


def desk_spec(seed=0, epochs=40):
    """Train the committed desk CNN and wrap it for export."""
    from .desk import CLASS_NAMES, INPUT_SIDE, MEAN, STD, digits_corpus, train_desk_model

    model, accuracy = train_desk_model(seed=seed, epochs=epochs)
    linear = _final_linear(model)
    weight_name, bias_name = _initializer_names(model, linear)
    images, _ = digits_corpus()
    parity = ((images[:10, None, :, :] - MEAN) / STD).astype(np.float32)
    return ExportSpec(
        arch="desk-cnn",
        module=model,
        input_shape=(1, INPUT_SIDE, INPUT_SIDE),
        mean=[MEAN],
        std=[STD],
        class_names=CLASS_NAMES,
        weight_initializer=weight_name,
        bias_initializer=bias_name,
        parity_inputs=parity,
        extra_manifest={"train_accuracy": round(accuracy, 4)},
    )


class _ResNetWithOutputs(torch.nn.Module):
    def __init__(self, resnet):
        super().__init__()
        self.resnet = resnet

    def forward(self, x):
        r = self.resnet
        x = r.maxpool(r.relu(r.bn1(r.conv1(x))))
        x = r.layer4(r.layer3(r.layer2(r.layer1(x))))
        conv_features = x
        latent = torch.flatten(r.avgpool(x), 1)
        logits = r.fc(latent)
        return conv_features, latent, logits


def resnet_spec(arch="resnet50", weights_path=None):
    """Wrap a torchvision residual classifier for export. Loads weights
    from a local state-dict file when given; otherwise keeps the default
    initialization (offline environments cannot download pretrained
    weights)."""
    import torchvision.models as models

    factory = getattr(models, arch, None)
    if factory is None:
        raise UnsupportedArchitectureError(f"unknown torchvision architecture {arch!r}")
    resnet = factory(weights=None)
    if weights_path:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        resnet.load_state_dict(state)
    module = _ResNetWithOutputs(resnet.eval())
    weight_name, bias_name = _initializer_names(module, resnet.fc)
    return ExportSpec(
        arch=arch,
        module=module,
        input_shape=(3, 224, 224),
        mean=[0.485, 0.456, 0.406],
        std=[0.229, 0.224, 0.225],
        class_names=[f"class_{i}" for i in range(resnet.fc.out_features)],
        weight_initializer=weight_name,
        bias_initializer=bias_name,
    )
