"""Minimal ONNX support: wire-format codec plus a numpy graph executor.

Covers the operator subset emitted by mainstream exporters for image
classifiers (convolutions, pooling, batch norm, residual adds, linear
heads). Files read and written here are standard ONNX protobuf, compatible
with external tooling.
"""

from .model import (
    Attribute,
    Graph,
    Model,
    Node,
    Tensor,
    ValueInfo,
    load_onnx,
    make_model,
    make_node,
    save_onnx,
)
from .executor import GraphExecutor, UnsupportedOpError

__all__ = [
    "Attribute",
    "Graph",
    "GraphExecutor",
    "Model",
    "Node",
    "Tensor",
    "UnsupportedOpError",
    "ValueInfo",
    "load_onnx",
    "make_model",
    "make_node",
    "save_onnx",
]
