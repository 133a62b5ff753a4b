"""ONNX model schema subset: parse, build, and serialize.

Field numbers follow the official onnx.proto. Tensor payloads are exposed
as numpy arrays; raw_data, float_data, int32_data and int64_data encodings
are all accepted, serialization always emits raw_data.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError
from . import wire

# TensorProto.DataType values we handle
_DTYPES = {
    1: np.float32,
    6: np.int32,
    7: np.int64,
    9: np.bool_,
    11: np.float64,
}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

# AttributeProto.AttributeType
ATTR_FLOAT = 1
ATTR_INT = 2
ATTR_STRING = 3
ATTR_TENSOR = 4
ATTR_FLOATS = 6
ATTR_INTS = 7
ATTR_STRINGS = 8


@dataclass
class Tensor:
    name: str
    array: np.ndarray


@dataclass
class Attribute:
    name: str
    type: int
    value: object


@dataclass
class Node:
    op_type: str
    inputs: list
    outputs: list
    name: str = ""
    attrs: dict = field(default_factory=dict)

    def attr(self, name, default=None):
        a = self.attrs.get(name)
        return default if a is None else a.value


@dataclass
class ValueInfo:
    name: str
    elem_type: int = 1
    dims: list = field(default_factory=list)  # ints, or strings for symbolic dims


@dataclass
class Graph:
    name: str = "graph"
    nodes: list = field(default_factory=list)
    initializers: dict = field(default_factory=dict)  # name -> np.ndarray
    inputs: list = field(default_factory=list)  # ValueInfo
    outputs: list = field(default_factory=list)  # ValueInfo

    def output_names(self):
        return [vi.name for vi in self.outputs]


@dataclass
class Model:
    graph: Graph
    ir_version: int = 7
    opset: int = 13
    producer: str = "xexplain"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _parse_tensor(buf, offset):
    name = ""
    dims = []
    dtype_code = 1
    raw = None
    float_data = []
    int_data = []
    for f, w, v, off in wire.iter_fields(buf, offset):
        if f == 1:
            if w == 2:
                dims.extend(wire.read_packed_varints(v, signed=True))
            else:
                dims.append(wire.read_signed(v))
        elif f == 2:
            dtype_code = v
        elif f == 4:
            if w == 2:
                float_data.extend(np.frombuffer(v, dtype="<f4").tolist())
            else:
                float_data.append(wire.read_fixed32_float(v))
        elif f == 5 or f == 7:
            if w == 2:
                int_data.extend(wire.read_packed_varints(v, signed=True))
            else:
                int_data.append(wire.read_signed(v))
        elif f == 8:
            name = v.decode("utf-8")
        elif f == 9:
            raw = v
        elif f == 13:
            raise FormatError("external tensor data is not supported", offset=off)
    np_dtype = _DTYPES.get(dtype_code)
    if np_dtype is None:
        raise FormatError(f"unsupported tensor data type {dtype_code}", offset=offset)
    shape = tuple(int(d) for d in dims)
    if raw is not None:
        arr = np.frombuffer(bytes(raw), dtype=np.dtype(np_dtype).newbyteorder("<"))
    elif float_data:
        arr = np.array(float_data, dtype=np_dtype)
    elif int_data:
        arr = np.array(int_data, dtype=np_dtype)
    else:
        arr = np.zeros(0, dtype=np_dtype)
    expected = int(np.prod(shape)) if shape else 1
    if arr.size != expected:
        raise FormatError(
            f"tensor '{name}' has {arr.size} elements, shape {shape} wants {expected}",
            offset=offset,
        )
    return Tensor(name=name, array=arr.reshape(shape).astype(np_dtype, copy=False))


def _parse_attribute(buf, offset):
    name = ""
    atype = None
    single = None
    floats = []
    ints = []
    strings = []
    tensor = None
    for f, w, v, off in wire.iter_fields(buf, offset):
        if f == 1:
            name = v.decode("utf-8")
        elif f == 2:
            single = wire.read_fixed32_float(v)
            atype = atype or ATTR_FLOAT
        elif f == 3:
            single = wire.read_signed(v)
            atype = atype or ATTR_INT
        elif f == 4:
            single = bytes(v)
            atype = atype or ATTR_STRING
        elif f == 5:
            tensor = _parse_tensor(v, off)
            atype = atype or ATTR_TENSOR
        elif f == 7:
            if w == 2:
                floats.extend(np.frombuffer(v, dtype="<f4").tolist())
            else:
                floats.append(wire.read_fixed32_float(v))
        elif f == 8:
            if w == 2:
                ints.extend(wire.read_packed_varints(v, signed=True))
            else:
                ints.append(wire.read_signed(v))
        elif f == 9:
            strings.append(bytes(v))
        elif f == 20:
            atype = v
    if atype == ATTR_FLOAT:
        value = float(single)
    elif atype == ATTR_INT:
        value = int(single)
    elif atype == ATTR_STRING:
        value = single.decode("utf-8")
    elif atype == ATTR_TENSOR:
        value = tensor
    elif atype == ATTR_FLOATS or (atype is None and floats):
        value = [float(x) for x in floats]
        atype = ATTR_FLOATS
    elif atype == ATTR_INTS or (atype is None and ints):
        value = [int(x) for x in ints]
        atype = ATTR_INTS
    elif atype == ATTR_STRINGS:
        value = [s.decode("utf-8") for s in strings]
    else:
        # tolerated: attribute kinds we never consume (graphs, sparse tensors)
        value = None
        atype = atype or 0
    return Attribute(name=name, type=atype, value=value)


def _parse_node(buf, offset):
    node = Node(op_type="", inputs=[], outputs=[])
    for f, w, v, off in wire.iter_fields(buf, offset):
        if f == 1:
            node.inputs.append(v.decode("utf-8"))
        elif f == 2:
            node.outputs.append(v.decode("utf-8"))
        elif f == 3:
            node.name = v.decode("utf-8")
        elif f == 4:
            node.op_type = v.decode("utf-8")
        elif f == 5:
            attr = _parse_attribute(v, off)
            node.attrs[attr.name] = attr
    return node


def _parse_shape(buf, offset):
    dims = []
    for f, w, v, off in wire.iter_fields(buf, offset):
        if f == 1:
            dim_value = None
            dim_param = None
            for f2, w2, v2, _ in wire.iter_fields(v, off):
                if f2 == 1:
                    dim_value = wire.read_signed(v2)
                elif f2 == 2:
                    dim_param = v2.decode("utf-8")
            dims.append(dim_value if dim_value is not None else dim_param)
    return dims


def _parse_value_info(buf, offset):
    vi = ValueInfo(name="")
    for f, w, v, off in wire.iter_fields(buf, offset):
        if f == 1:
            vi.name = v.decode("utf-8")
        elif f == 2:
            for f2, w2, v2, off2 in wire.iter_fields(v, off):
                if f2 == 1:  # tensor_type
                    for f3, w3, v3, off3 in wire.iter_fields(v2, off2):
                        if f3 == 1:
                            vi.elem_type = v3
                        elif f3 == 2:
                            vi.dims = _parse_shape(v3, off3)
    return vi


def _parse_graph(buf, offset):
    graph = Graph()
    for f, w, v, off in wire.iter_fields(buf, offset):
        if f == 1:
            graph.nodes.append(_parse_node(v, off))
        elif f == 2:
            graph.name = v.decode("utf-8")
        elif f == 5:
            tensor = _parse_tensor(v, off)
            graph.initializers[tensor.name] = tensor.array
        elif f == 11:
            graph.inputs.append(_parse_value_info(v, off))
        elif f == 12:
            graph.outputs.append(_parse_value_info(v, off))
    return graph


def parse_model(data):
    if not data:
        raise FormatError("empty model file", offset=0)
    model = Model(graph=Graph())
    saw_graph = False
    for f, w, v, off in wire.iter_fields(bytes(data)):
        if f == 1:
            model.ir_version = int(v)
        elif f == 2:
            model.producer = v.decode("utf-8")
        elif f == 7:
            model.graph = _parse_graph(v, off)
            saw_graph = True
        elif f == 8:
            for f2, w2, v2, _ in wire.iter_fields(v, off):
                if f2 == 2:
                    model.opset = wire.read_signed(v2)
    if not saw_graph:
        raise FormatError("model file contains no graph", offset=0)
    return model


def load_onnx(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read())


# ---------------------------------------------------------------------------
# building and serialization
# ---------------------------------------------------------------------------

def make_node(op_type, inputs, outputs, name="", **attrs):
    node = Node(op_type=op_type, inputs=list(inputs), outputs=list(outputs), name=name)
    for key, value in attrs.items():
        node.attrs[key] = _coerce_attr(key, value)
    return node


def _coerce_attr(name, value):
    if isinstance(value, Attribute):
        return value
    if isinstance(value, float):
        return Attribute(name, ATTR_FLOAT, value)
    if isinstance(value, (bool, int)):
        return Attribute(name, ATTR_INT, int(value))
    if isinstance(value, str):
        return Attribute(name, ATTR_STRING, value)
    if isinstance(value, np.ndarray):
        return Attribute(name, ATTR_TENSOR, Tensor(name="", array=value))
    if isinstance(value, (list, tuple)):
        if all(isinstance(v, (bool, int, np.integer)) for v in value):
            return Attribute(name, ATTR_INTS, [int(v) for v in value])
        return Attribute(name, ATTR_FLOATS, [float(v) for v in value])
    raise TypeError(f"cannot encode attribute {name}={value!r}")


def make_model(nodes, inputs, outputs, initializers, name="graph", opset=13):
    """Assemble a Model from node list, IO ValueInfos and name->array weights."""
    graph = Graph(
        name=name,
        nodes=list(nodes),
        initializers={k: np.asarray(v) for k, v in initializers.items()},
        inputs=list(inputs),
        outputs=list(outputs),
    )
    return Model(graph=graph)


def _serialize_tensor(tensor):
    out = bytearray()
    arr = np.ascontiguousarray(tensor.array)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise TypeError(f"cannot serialize dtype {arr.dtype}")
    wire.write_packed_varints_field(out, 1, [int(d) for d in arr.shape])
    wire.write_varint_field(out, 2, code)
    if tensor.name:
        wire.write_string_field(out, 8, tensor.name)
    wire.write_bytes_field(out, 9, arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return out


def _serialize_attribute(attr):
    out = bytearray()
    wire.write_string_field(out, 1, attr.name)
    if attr.type == ATTR_FLOAT:
        wire.write_float_field(out, 2, attr.value)
    elif attr.type == ATTR_INT:
        wire.write_varint_field(out, 3, attr.value)
    elif attr.type == ATTR_STRING:
        wire.write_string_field(out, 4, attr.value)
    elif attr.type == ATTR_TENSOR:
        wire.write_bytes_field(out, 5, _serialize_tensor(attr.value))
    elif attr.type == ATTR_FLOATS:
        body = np.asarray(attr.value, dtype="<f4").tobytes()
        wire.write_bytes_field(out, 7, body)
    elif attr.type == ATTR_INTS:
        wire.write_packed_varints_field(out, 8, attr.value)
    else:
        raise TypeError(f"cannot serialize attribute type {attr.type}")
    wire.write_varint_field(out, 20, attr.type)
    return out


def _serialize_node(node):
    out = bytearray()
    for value in node.inputs:
        wire.write_string_field(out, 1, value)
    for value in node.outputs:
        wire.write_string_field(out, 2, value)
    if node.name:
        wire.write_string_field(out, 3, node.name)
    wire.write_string_field(out, 4, node.op_type)
    for attr in node.attrs.values():
        wire.write_bytes_field(out, 5, _serialize_attribute(attr))
    return out


def _serialize_value_info(vi):
    shape = bytearray()
    for dim in vi.dims:
        body = bytearray()
        if isinstance(dim, str):
            wire.write_string_field(body, 2, dim)
        elif dim is not None:
            wire.write_varint_field(body, 1, int(dim))
        wire.write_bytes_field(shape, 1, body)
    tensor_type = bytearray()
    wire.write_varint_field(tensor_type, 1, vi.elem_type)
    wire.write_bytes_field(tensor_type, 2, shape)
    type_proto = bytearray()
    wire.write_bytes_field(type_proto, 1, tensor_type)
    out = bytearray()
    wire.write_string_field(out, 1, vi.name)
    wire.write_bytes_field(out, 2, type_proto)
    return out


def _serialize_graph(graph):
    out = bytearray()
    for node in graph.nodes:
        wire.write_bytes_field(out, 1, _serialize_node(node))
    wire.write_string_field(out, 2, graph.name)
    for name, arr in graph.initializers.items():
        wire.write_bytes_field(out, 5, _serialize_tensor(Tensor(name=name, array=arr)))
    for vi in graph.inputs:
        wire.write_bytes_field(out, 11, _serialize_value_info(vi))
    for vi in graph.outputs:
        wire.write_bytes_field(out, 12, _serialize_value_info(vi))
    return out


def serialize_model(model):
    out = bytearray()
    wire.write_varint_field(out, 1, model.ir_version)
    wire.write_string_field(out, 2, model.producer)
    wire.write_bytes_field(out, 7, _serialize_graph(model.graph))
    opset = bytearray()
    wire.write_string_field(opset, 1, "")
    wire.write_varint_field(opset, 2, model.opset)
    wire.write_bytes_field(out, 8, opset)
    return bytes(out)


def save_onnx(model, path):
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))
