"""Graph execution over packed HE tensors."""

from __future__ import annotations

import enum
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..backends import make_backend
from ..graph import Graph, GraphError, check, infer_shapes, toposort
from ..he.backend import HEError
from ..he.context import CryptoContext
from ..he.packing import HETensor, check_batch, pack_tensor, unpack_tensor
from ..passes import depth_analysis
from . import kernels as K
from .bypass import BypassConfig
from .evaluator import Evaluator


class Paradigm(enum.Enum):
    EncryptedData = "encrypted-data"
    EncryptedModel = "encrypted-model"
    EncryptedBoth = "encrypted-both"
    PlainDebug = "plain-debug"

    @classmethod
    def parse(cls, token) -> "Paradigm":
        if isinstance(token, cls):
            return token
        for p in cls:
            if token in (p.value, p.name):
                return p
        raise ValueError(f"unknown paradigm {token!r}; choose from {', '.join(p.value for p in cls)}")

    @property
    def encrypts_data(self) -> bool:
        return self in (Paradigm.EncryptedData, Paradigm.EncryptedBoth)

    @property
    def encrypts_model(self) -> bool:
        return self in (Paradigm.EncryptedModel, Paradigm.EncryptedBoth)

    @property
    def depth_sources(self) -> str:
        return {
            Paradigm.EncryptedData: "parameters",
            Paradigm.EncryptedModel: "constants",
            Paradigm.EncryptedBoth: "all",
            Paradigm.PlainDebug: "none",
        }[self]


class DepthExceededError(HEError):
    def __init__(self, needed, budget, path):
        self.needed, self.budget, self.path = needed, budget, path
        super().__init__(
            f"graph needs multiplicative depth {needed} but the context allows {budget}; "
            f"critical path: {' -> '.join(path)}"
        )


@dataclass
class ExecProfile:
    wall_ms: dict = field(default_factory=dict)
    bypass: dict = field(default_factory=lambda: {"mult": 0, "add": 0})
    ct_ops: dict = field(default_factory=lambda: {"add": 0, "mul_ct": 0, "mul_pt": 0, "negate": 0})
    peak_elements: int = 0
    output_levels: dict = field(default_factory=dict)

    @property
    def total_ms(self) -> float:
        return float(sum(self.wall_ms.values()))

    def to_dict(self) -> dict:
        return {"wall_ms": dict(self.wall_ms), "bypass": dict(self.bypass), "ct_ops": dict(self.ct_ops)}

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _batch_of(graph: Graph, inputs: dict):
    batch = None
    for n in graph.nodes.values():
        if n.op == "Parameter" and n.attrs.get("batched", True):
            if n.id not in inputs:
                continue
            b = np.asarray(inputs[n.id]).shape[0]
            if batch is not None and b != batch:
                raise GraphError(f"inputs disagree on batch size ({batch} vs {b})")
            batch = b
    return batch


def admit(graph: Graph, context: CryptoContext, paradigm: Paradigm, bypass: BypassConfig):
    """Reject a graph whose depth exceeds the context's level budget."""
    if paradigm is Paradigm.PlainDebug:
        return None
    report = depth_analysis(graph, bypass.optimized_multiply, paradigm.depth_sources)
    if report.total > context.level_budget:
        raise DepthExceededError(report.total, context.level_budget, report.critical_path)
    return report


def execute(
    graph: Graph,
    inputs: dict,
    context: CryptoContext,
    keys=None,
    paradigm=Paradigm.EncryptedData,
    bypass: BypassConfig | None = None,
    backend=None,
    threads=None,
    seed=None,
    use_overrides: bool = True,
):
    """Run ``graph`` on ``inputs``; returns ``({output_id: array}, ExecProfile)``.

    Depth admission and capacity checks run before any encryption.
    ``use_overrides=False`` forces the element-wise default kernels.
    """
    paradigm = Paradigm.parse(paradigm)
    bypass = bypass or BypassConfig()
    check(graph)
    for pid in graph.parameters():
        if pid not in inputs and graph.nodes[pid].data is None:
            raise GraphError(f"missing input for parameter {pid!r}")
    batch = _batch_of(graph, inputs)
    if batch is not None:
        check_batch(batch, context.slot_count)
    shapes = infer_shapes(graph, batch)
    admit(graph, context, paradigm, bypass)

    if backend is None:
        backend = make_backend(context, keys, seed=seed)
    threads = os.cpu_count() if threads is None else threads
    ev = Evaluator(backend, bypass)
    profile = ExecProfile()

    order = toposort(graph)
    remaining = {n.id: 0 for n in order}
    for n in order:
        for i in n.inputs:
            remaining[i] += 1
    values: dict = {}
    live = 0

    for n in order:
        t0 = time.perf_counter()
        out = _run_node(n, values, inputs, shapes, ev, paradigm, threads, use_overrides, graph)
        out = K.normalize(ev, out)
        profile.wall_ms[n.id] = (time.perf_counter() - t0) * 1e3
        values[n.id] = out
        live += out.size
        profile.peak_elements = max(profile.peak_elements, live)
        for i in set(n.inputs):
            remaining[i] -= n.inputs.count(i)
            if remaining[i] == 0 and i not in graph.outputs:
                live -= values[i].size
                del values[i]

    outputs = {}
    for o in graph.outputs:
        t = values[o]
        cts = [e for e in t.flat() if backend.is_ciphertext(e)]
        profile.output_levels[o] = min((e.level for e in cts), default=None)
        outputs[o] = unpack_tensor(t, backend)
        if not t.batched and shapes[o].batched:
            outputs[o] = np.broadcast_to(outputs[o], shapes[o].dims).copy()

    c = ev.counts
    profile.bypass = {"mult": int(c["bypass_mult"]), "add": int(c["bypass_add"])}
    profile.ct_ops = {k: int(c[k]) for k in ("add", "mul_ct", "mul_pt", "negate")}
    return outputs, profile


def _source(node, data, batched, paradigm, backend, encrypt):
    kind = "cipher" if encrypt else "plain"
    return pack_tensor(data, backend, kind, batched=batched)


def _stat_values(graph: Graph, node_id, values, backend):
    n = graph.nodes[node_id]
    if n.op == "Constant":
        return np.asarray(n.data)
    return unpack_tensor(values[node_id], backend)


def _run_node(n, values, inputs, shapes, ev, paradigm, threads, use_overrides, graph) -> HETensor:
    be = ev.backend
    op, a = n.op, n.attrs
    args = [values[i] for i in n.inputs]
    if op == "Parameter":
        data = inputs.get(n.id, n.data)
        data = np.asarray(data, dtype=np.float64)
        if data.shape != shapes[n.id].dims:
            raise GraphError(f"input {n.id!r} has shape {data.shape}, expected {shapes[n.id].dims}")
        return _source(n, data, shapes[n.id].batched, paradigm, be, paradigm.encrypts_data)
    if op == "Constant":
        return _source(n, n.data, False, paradigm, be, paradigm.encrypts_model)
    if op in ("Add", "Subtract", "Multiply"):
        x, y = args
        if x.rest != y.rest:
            raise GraphError(f"node {n.id!r}: element layouts differ {x.rest} vs {y.rest}")
        return K.elementwise(ev, op, x, y, threads)
    if op == "Negate":
        return K.negate(ev, args[0])
    if op == "PolyAct":
        return K.poly_act(ev, args[0], a["coeffs"], threads)
    if op == "Dot":
        return K.dot(ev, args[0], args[1], threads, use_overrides)
    if op == "Convolution":
        return K.convolution(ev, args[0], args[1], a, threads, use_overrides)
    if op == "AvgPool":
        return K.avg_pool(ev, args[0], a, threads)
    if op == "ScaledMeanPool":
        return K.scaled_mean_pool(ev, args[0], a, threads)
    if op == "BatchNormInference":
        stats = [_stat_values(graph, i, values, be) for i in n.inputs[1:]]
        return K.batch_norm(ev, args[0], stats, float(a["epsilon"]), paradigm.encrypts_model, threads)
    if op == "Broadcast":
        return K.broadcast(args[0], a["shape"], a["axes"])
    if op == "Concat":
        return K.concat(ev, args, int(a["axis"]))
    if op == "Pad":
        return K.pad(ev, args[0], a["pad_below"], a["pad_above"], float(a.get("value", 0.0)))
    if op == "Reshape":
        return K.reshape(args[0], a["shape"])
    if op == "Reverse":
        return K.reverse(args[0], a["axes"])
    if op == "Slice":
        return K.slice_(args[0], a["lower"], a["upper"], a.get("strides"))
    if op == "Sum":
        return K.sum_(ev, args[0], a["axes"], threads)
    raise GraphError(f"node {n.id!r}: cannot execute op {op!r}")
