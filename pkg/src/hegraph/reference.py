"""Plaintext float64 evaluation of graphs; the oracle for every HE run."""

from __future__ import annotations

import numpy as np

from .graph import Graph, GraphError, _ints, conv_geometry, infer_shapes, toposort


def _conv(x, w, attrs):
    strides, pb, pa, (oh, ow) = conv_geometry(attrs, x.shape[2:], w.shape[2:])
    xp = np.pad(x, ((0, 0), (0, 0), (pb[0], pa[0]), (pb[1], pa[1])))
    kh, kw = w.shape[2:]
    out = np.zeros((x.shape[0], w.shape[0], oh, ow))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + strides[0] * oh : strides[0], j : j + strides[1] * ow : strides[1]]
            out += np.einsum("bchw,fc->bfhw", patch, w[:, :, i, j])
    return out


def pool_divisors(attrs, in_hw):
    """Per-output window sizes; padding counts only with ``include_padding``."""
    win = _ints(attrs["window"], 2)
    strides, pb, pa, (oh, ow) = conv_geometry(attrs, in_hw, win)
    if attrs.get("include_padding", False):
        return np.full((oh, ow), float(win[0] * win[1]))
    counts = []
    for ax, n_out in enumerate((oh, ow)):
        start = np.arange(n_out) * strides[ax] - pb[ax]
        lo = np.maximum(start, 0)
        hi = np.minimum(start + win[ax], in_hw[ax])
        counts.append(hi - lo)
    return np.outer(counts[0], counts[1]).astype(np.float64)


def _pool_sum(x, attrs):
    win = _ints(attrs["window"], 2)
    strides, pb, pa, (oh, ow) = conv_geometry(attrs, x.shape[2:], win)
    xp = np.pad(x, ((0, 0), (0, 0), (pb[0], pa[0]), (pb[1], pa[1])))
    out = np.zeros(x.shape[:2] + (oh, ow))
    for i in range(win[0]):
        for j in range(win[1]):
            out += xp[:, :, i : i + strides[0] * oh : strides[0], j : j + strides[1] * ow : strides[1]]
    return out


def bn_affine(gamma, beta, mean, var, eps):
    """Per-channel ``(scale, shift)`` with ``bn(x) = scale * x + shift``."""
    inv = 1.0 / np.sqrt(np.asarray(var) + eps)
    scale = np.asarray(gamma) * inv
    return scale, np.asarray(beta) - np.asarray(mean) * scale


def channel_view(v, rank):
    return np.asarray(v).reshape((-1,) + (1,) * (rank - 2))


def eval_node(node, args: list, batched_flags=None):
    """Value of ``node`` from its input values (batch axis included when present)."""
    op, a = node.op, node.attrs
    if op == "Constant":
        return np.array(node.data, dtype=np.float64)
    if op == "Add":
        return args[0] + args[1]
    if op == "Subtract":
        return args[0] - args[1]
    if op == "Multiply":
        return args[0] * args[1]
    if op == "Negate":
        return -args[0]
    if op == "PolyAct":
        ca, cb, cc = (float(c) for c in a["coeffs"])
        x = args[0]
        return ca * x * x + cb * x + cc
    if op == "Dot":
        x, w = args
        return np.tensordot(x, w, axes=([x.ndim - 1], [0]))
    if op == "Convolution":
        return _conv(args[0], args[1], a)
    if op == "ScaledMeanPool":
        return _pool_sum(args[0], a)
    if op == "AvgPool":
        return _pool_sum(args[0], a) / pool_divisors(a, args[0].shape[2:])
    if op == "BatchNormInference":
        x = args[0]
        scale, shift = bn_affine(*args[1:], float(a["epsilon"]))
        return x * channel_view(scale, x.ndim) + channel_view(shift, x.ndim)
    if op == "Broadcast":
        x = args[0]
        out_shape = list(a["shape"])
        if batched_flags and batched_flags[0]:
            out_shape[0] = x.shape[0]
        axes = _ints(a["axes"])
        expanded = np.expand_dims(x, tuple(axes)) if axes else x
        return np.broadcast_to(expanded, out_shape).copy()
    if op == "Concat":
        return np.concatenate(args, axis=int(a["axis"]))
    if op == "Pad":
        pad = list(zip(_ints(a["pad_below"]), _ints(a["pad_above"])))
        return np.pad(args[0], pad, constant_values=float(a.get("value", 0.0)))
    if op == "Reshape":
        shape = list(a["shape"])
        if batched_flags and batched_flags[0]:
            shape[0] = args[0].shape[0]
        return args[0].reshape(shape)
    if op == "Reverse":
        return np.flip(args[0], axis=tuple(_ints(a["axes"]))).copy()
    if op == "Slice":
        x = args[0]
        lo, hi = _ints(a["lower"]), _ints(a["upper"])
        st = _ints(a.get("strides", 1), x.ndim)
        idx = [slice(l, h, s) for l, h, s in zip(lo, hi, st)]
        if batched_flags and batched_flags[0]:
            idx[0] = slice(None)
        return x[tuple(idx)].copy()
    if op == "Sum":
        out = np.sum(args[0], axis=tuple(_ints(a["axes"])))
        return np.atleast_1d(out)
    raise GraphError(f"cannot evaluate op {op!r}")


def evaluate(graph: Graph, inputs: dict, keep_all=False) -> dict:
    """Plain evaluation; returns output values (or every node's with ``keep_all``)."""
    batch = None
    for n in graph.nodes.values():
        if n.op == "Parameter" and n.attrs.get("batched", True) and n.id in inputs:
            batch = np.asarray(inputs[n.id]).shape[0]
            break
    shapes = infer_shapes(graph, batch)
    values = {}
    for n in toposort(graph):
        if n.op == "Parameter":
            if n.id in inputs:
                v = np.asarray(inputs[n.id], dtype=np.float64)
            elif n.data is not None:
                v = np.array(n.data)
            else:
                raise GraphError(f"missing input for parameter {n.id!r}")
            if v.shape != shapes[n.id].dims:
                raise GraphError(f"input {n.id!r} has shape {v.shape}, expected {shapes[n.id].dims}")
            values[n.id] = v
            continue
        flags = [shapes[i].batched for i in n.inputs]
        values[n.id] = eval_node(n, [values[i] for i in n.inputs], flags)
    if keep_all:
        return values
    return {o: values[o] for o in graph.outputs}
