"""Numpy execution of ONNX graphs.

Nodes run in file order (ONNX graphs are topologically sorted). All ops are
batch-aware over the leading dimension and stateless, so an executor can be
shared across threads.
"""

import numpy as np

from ..errors import ModelContractError


class UnsupportedOpError(ModelContractError):
    pass


def _pair(value, default):
    if value is None:
        return (default, default)
    return (int(value[0]), int(value[1]))


def _pads4(value):
    if value is None:
        return (0, 0, 0, 0)
    if len(value) == 2:
        return (int(value[0]), int(value[1]), int(value[0]), int(value[1]))
    return tuple(int(v) for v in value)


def _windows(x, kernel, strides, dilations, out_hw):
    """Sliding windows (N, C, Ho, Wo, kh, kw) over a padded NCHW tensor."""
    kh, kw = kernel
    sh, sw = strides
    dh, dw = dilations
    eh, ew = (kh - 1) * dh + 1, (kw - 1) * dw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (eh, ew), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, ::dh, ::dw]
    return win[:, :, :out_hw[0], :out_hw[1]]


def op_conv(node, values):
    x = values[node.inputs[0]]
    w = values[node.inputs[1]]
    b = values[node.inputs[2]] if len(node.inputs) > 2 else None
    strides = _pair(node.attr("strides"), 1)
    dilations = _pair(node.attr("dilations"), 1)
    pt, pl, pb, pr = _pads4(node.attr("pads"))
    group = int(node.attr("group", 1))
    n, c, h, width = x.shape
    m, _, kh, kw = w.shape
    eh, ew = (kh - 1) * dilations[0] + 1, (kw - 1) * dilations[1] + 1
    ho = (h + pt + pb - eh) // strides[0] + 1
    wo = (width + pl + pr - ew) // strides[1] + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = _windows(xp, (kh, kw), strides, dilations, (ho, wo))
    if group == 1:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        out = cols @ w.reshape(m, -1).T
        out = out.reshape(n, ho, wo, m).transpose(0, 3, 1, 2)
    else:
        cg, mg = c // group, m // group
        parts = []
        for g in range(group):
            wg = w[g * mg:(g + 1) * mg]
            cols = win[:, g * cg:(g + 1) * cg].transpose(0, 2, 3, 1, 4, 5)
            cols = cols.reshape(n * ho * wo, cg * kh * kw)
            og = (cols @ wg.reshape(mg, -1).T).reshape(n, ho, wo, mg)
            parts.append(og.transpose(0, 3, 1, 2))
        out = np.concatenate(parts, axis=1)
    if b is not None:
        out = out + b.reshape(1, m, 1, 1)
    return np.ascontiguousarray(out.astype(np.float32, copy=False))


def _pool_dims(h, w, kernel, strides, pads, ceil_mode):
    pt, pl, pb, pr = pads
    kh, kw = kernel
    sh, sw = strides
    rnd = np.ceil if ceil_mode else np.floor
    ho = int(rnd((h + pt + pb - kh) / sh)) + 1
    wo = int(rnd((w + pl + pr - kw) / sw)) + 1
    if ceil_mode:
        # last window must start inside the padded input
        if (ho - 1) * sh >= h + pt:
            ho -= 1
        if (wo - 1) * sw >= w + pl:
            wo -= 1
    return ho, wo


def op_max_pool(node, values):
    x = values[node.inputs[0]]
    kernel = _pair(node.attr("kernel_shape"), 1)
    strides = _pair(node.attr("strides"), 1)
    pads = _pads4(node.attr("pads"))
    ceil_mode = int(node.attr("ceil_mode", 0))
    n, c, h, w = x.shape
    ho, wo = _pool_dims(h, w, kernel, strides, pads, ceil_mode)
    pt, pl, pb, pr = pads
    # over-pad so ceil-mode windows exist, with -inf as the identity
    eb = pb + (strides[0] if ceil_mode else 0)
    er = pr + (strides[1] if ceil_mode else 0)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, eb), (pl, er)), constant_values=-np.inf)
    win = _windows(xp, kernel, strides, (1, 1), (ho, wo))
    out = win.max(axis=(4, 5))
    return np.ascontiguousarray(out.astype(np.float32, copy=False))


def op_average_pool(node, values):
    x = values[node.inputs[0]]
    kernel = _pair(node.attr("kernel_shape"), 1)
    strides = _pair(node.attr("strides"), 1)
    pads = _pads4(node.attr("pads"))
    ceil_mode = int(node.attr("ceil_mode", 0))
    include_pad = int(node.attr("count_include_pad", 0))
    n, c, h, w = x.shape
    ho, wo = _pool_dims(h, w, kernel, strides, pads, ceil_mode)
    pt, pl, pb, pr = pads
    eb = pb + (strides[0] if ceil_mode else 0)
    er = pr + (strides[1] if ceil_mode else 0)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, eb), (pl, er)))
    win = _windows(xp, kernel, strides, (1, 1), (ho, wo))
    if include_pad:
        out = win.mean(axis=(4, 5))
    else:
        ones = np.pad(np.ones((1, 1, h, w), dtype=np.float32),
                      ((0, 0), (0, 0), (pt, eb), (pl, er)))
        counts = _windows(ones, kernel, strides, (1, 1), (ho, wo)).sum(axis=(4, 5))
        out = win.sum(axis=(4, 5)) / np.maximum(counts, 1e-12)
    return np.ascontiguousarray(out.astype(np.float32, copy=False))


def op_global_average_pool(node, values):
    x = values[node.inputs[0]]
    return x.mean(axis=(2, 3), keepdims=True).astype(np.float32, copy=False)


def op_reduce_mean(node, values):
    x = values[node.inputs[0]]
    axes = node.attr("axes")
    if axes is None and len(node.inputs) > 1:
        axes = values[node.inputs[1]].tolist()
    keepdims = int(node.attr("keepdims", 1))
    axes = tuple(int(a) for a in axes) if axes is not None else None
    return np.asarray(x.mean(axis=axes, keepdims=bool(keepdims)), dtype=x.dtype)


def op_batch_norm(node, values):
    x, scale, bias, mean, var = (values[name] for name in node.inputs[:5])
    eps = float(node.attr("epsilon", 1e-5))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    inv = scale / np.sqrt(var + eps)
    return (x * inv.reshape(shape) + (bias - mean * inv).reshape(shape)).astype(
        np.float32, copy=False)


def op_gemm(node, values):
    a = values[node.inputs[0]]
    b = values[node.inputs[1]]
    c = values[node.inputs[2]] if len(node.inputs) > 2 else None
    alpha = float(node.attr("alpha", 1.0))
    beta = float(node.attr("beta", 1.0))
    if int(node.attr("transA", 0)):
        a = a.T
    if int(node.attr("transB", 0)):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out.astype(np.float32, copy=False)


def op_reshape(node, values):
    x = values[node.inputs[0]]
    shape = [int(d) for d in values[node.inputs[1]]]
    for i, d in enumerate(shape):
        if d == 0:
            shape[i] = x.shape[i]
    return np.ascontiguousarray(x).reshape(shape)


def op_flatten(node, values):
    x = values[node.inputs[0]]
    axis = int(node.attr("axis", 1))
    lead = int(np.prod(x.shape[:axis])) if axis > 0 else 1
    return np.ascontiguousarray(x).reshape(lead, -1)


def op_concat(node, values):
    axis = int(node.attr("axis"))
    return np.concatenate([values[name] for name in node.inputs], axis=axis)


def op_constant(node, values):
    tensor = node.attr("value")
    return tensor.array


def op_unsqueeze(node, values):
    x = values[node.inputs[0]]
    axes = node.attr("axes")
    if axes is None:
        axes = values[node.inputs[1]].tolist()
    out = x
    for axis in sorted(int(a) for a in axes):
        out = np.expand_dims(out, axis)
    return out


def op_squeeze(node, values):
    x = values[node.inputs[0]]
    axes = node.attr("axes")
    if axes is None and len(node.inputs) > 1:
        axes = values[node.inputs[1]].tolist()
    if axes is None:
        return np.squeeze(x)
    return np.squeeze(x, axis=tuple(int(a) for a in axes))


def op_gather(node, values):
    x = values[node.inputs[0]]
    idx = values[node.inputs[1]]
    axis = int(node.attr("axis", 0))
    return np.take(x, idx.astype(np.int64), axis=axis)


def op_cast(node, values):
    from .model import _DTYPES

    to = int(node.attr("to", 1))
    return values[node.inputs[0]].astype(_DTYPES[to])


_OPS = {
    "Add": lambda n, v: (v[n.inputs[0]] + v[n.inputs[1]]).astype(np.float32, copy=False),
    "AveragePool": op_average_pool,
    "BatchNormalization": op_batch_norm,
    "Cast": op_cast,
    "Concat": op_concat,
    "Constant": op_constant,
    "Conv": op_conv,
    "Flatten": op_flatten,
    "Gather": op_gather,
    "Gemm": op_gemm,
    "GlobalAveragePool": op_global_average_pool,
    "Identity": lambda n, v: v[n.inputs[0]],
    "MatMul": lambda n, v: (v[n.inputs[0]] @ v[n.inputs[1]]).astype(np.float32, copy=False),
    "MaxPool": op_max_pool,
    "Mul": lambda n, v: (v[n.inputs[0]] * v[n.inputs[1]]).astype(np.float32, copy=False),
    "ReduceMean": op_reduce_mean,
    "Relu": lambda n, v: np.maximum(v[n.inputs[0]], 0.0),
    "Reshape": op_reshape,
    "Shape": lambda n, v: np.asarray(v[n.inputs[0]].shape, dtype=np.int64),
    "Sigmoid": lambda n, v: (1.0 / (1.0 + np.exp(-v[n.inputs[0]]))).astype(np.float32, copy=False),
    "Squeeze": op_squeeze,
    "Transpose": lambda n, v: np.transpose(v[n.inputs[0]], n.attr("perm")),
    "Unsqueeze": op_unsqueeze,
}


class GraphExecutor:
    """Runs an ONNX graph on numpy feeds."""

    def __init__(self, model):
        self.model = model
        self.graph = model.graph
        unsupported = sorted({n.op_type for n in self.graph.nodes} - set(_OPS))
        if unsupported:
            raise UnsupportedOpError(f"unsupported operators: {', '.join(unsupported)}")
        self.input_names = [vi.name for vi in self.graph.inputs
                            if vi.name not in self.graph.initializers]

    def run(self, output_names, feeds):
        values = dict(self.graph.initializers)
        values.update(feeds)
        needed = set(output_names)
        for node in self.graph.nodes:
            try:
                result = _OPS[node.op_type](node, values)
            except KeyError as exc:
                raise ModelContractError(
                    f"node '{node.name or node.op_type}' reads undefined tensor {exc}"
                ) from None
            if isinstance(result, tuple):
                for name, arr in zip(node.outputs, result):
                    values[name] = arr
            else:
                values[node.outputs[0]] = result
        missing = needed - values.keys()
        if missing:
            raise ModelContractError(f"graph does not produce: {', '.join(sorted(missing))}")
        return [values[name] for name in output_names]
