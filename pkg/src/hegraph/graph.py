"""Tensor computation-graph IR.

A graph is a set of immutable nodes keyed by string id plus an ordered list
of output ids. Shapes carry a ``batched`` flag: batched tensors have the
batch extent as axis 0, and that axis rides in ciphertext slots at run time,
so no op may mix it with other axes.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

FORMAT_VERSION = 1

OPS = (
    "Parameter", "Constant", "Add", "Subtract", "Multiply", "Negate", "Dot",
    "Convolution", "AvgPool", "ScaledMeanPool", "BatchNormInference", "Broadcast",
    "Concat", "Pad", "Reshape", "Reverse", "Slice", "Sum", "PolyAct",
)
ELEMENTWISE_BINARY = ("Add", "Subtract", "Multiply")
REARRANGE = ("Broadcast", "Concat", "Pad", "Reshape", "Reverse", "Slice")

_ARITY = {
    "Parameter": 0, "Constant": 0, "Add": 2, "Subtract": 2, "Multiply": 2,
    "Negate": 1, "Dot": 2, "Convolution": 2, "AvgPool": 1, "ScaledMeanPool": 1,
    "BatchNormInference": 5, "Broadcast": 1, "Pad": 1, "Reshape": 1,
    "Reverse": 1, "Slice": 1, "Sum": 1, "PolyAct": 1,
}
_REQUIRED_ATTRS = {
    "Parameter": ("shape",),
    "AvgPool": ("window",),
    "ScaledMeanPool": ("window",),
    "BatchNormInference": ("epsilon",),
    "Broadcast": ("shape", "axes"),
    "Concat": ("axis",),
    "Pad": ("pad_below", "pad_above"),
    "Reshape": ("shape",),
    "Reverse": ("axes",),
    "Slice": ("lower", "upper"),
    "Sum": ("axes",),
    "PolyAct": ("coeffs",),
}


class GraphError(ValueError):
    pass


class ShapeError(GraphError):
    pass


class CycleError(GraphError):
    pass


@dataclass(frozen=True)
class TensorShape:
    dims: tuple
    batched: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) > 4:
            raise ShapeError(f"rank {len(self.dims)} exceeds 4")
        if any(d < 1 for d in self.dims):
            raise ShapeError(f"non-positive extent in {self.dims}")
        if self.batched and not self.dims:
            raise ShapeError("a batched shape needs a batch axis")

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    @property
    def batch(self) -> Optional[int]:
        return self.dims[0] if self.batched else None

    @property
    def rest(self) -> tuple:
        """Dims that become packed elements (everything but the batch axis)."""
        return self.dims[1:] if self.batched else self.dims

    def __str__(self):
        return f"({', '.join(map(str, self.dims))}){'b' if self.batched else ''}"


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    inputs: tuple = ()
    attrs: dict = field(default_factory=dict, hash=False, compare=False)
    data: Optional[np.ndarray] = field(default=None, hash=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.data is not None:
            arr = np.array(self.data, dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, "data", arr)

    def same_as(self, other: "Node") -> bool:
        if (self.id, self.op, self.inputs) != (other.id, other.op, other.inputs):
            return False
        if _canon(self.attrs) != _canon(other.attrs):
            return False
        if (self.data is None) != (other.data is None):
            return False
        return self.data is None or (self.data.shape == other.data.shape and np.array_equal(self.data, other.data))

    def replace(self, **kw) -> "Node":
        fields = dict(id=self.id, op=self.op, inputs=self.inputs, attrs=dict(self.attrs), data=self.data)
        fields.update(kw)
        return Node(**fields)


def _canon(x):
    return json.dumps(x, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


@dataclass
class Graph:
    name: str
    nodes: dict
    outputs: list

    def __post_init__(self):
        if not isinstance(self.nodes, dict):
            self.nodes = {n.id: n for n in self.nodes}
        self.outputs = list(self.outputs)

    def __getitem__(self, node_id) -> Node:
        return self.nodes[node_id]

    def consumers(self) -> dict:
        out = {nid: [] for nid in self.nodes}
        for n in self.nodes.values():
            for i in n.inputs:
                if i in out:
                    out[i].append(n.id)
        return out

    def sole_consumer(self, node_id, consumers=None) -> Optional[str]:
        """The only consumer of ``node_id``, if it has exactly one and is no output."""
        consumers = self.consumers() if consumers is None else consumers
        users = consumers.get(node_id, [])
        if len(users) != 1 or node_id in self.outputs:
            return None
        return users[0]

    def parameters(self) -> list:
        return sorted(n.id for n in self.nodes.values() if n.op == "Parameter")

    def structurally_equal(self, other: "Graph") -> bool:
        if self.name != other.name or self.outputs != other.outputs:
            return False
        if set(self.nodes) != set(other.nodes):
            return False
        return all(self.nodes[k].same_as(other.nodes[k]) for k in self.nodes)

    def copy(self) -> "Graph":
        return Graph(self.name, dict(self.nodes), list(self.outputs))

    def fresh_id(self, base: str) -> str:
        if base not in self.nodes:
            return base
        k = 1
        while f"{base}_{k}" in self.nodes:
            k += 1
        return f"{base}_{k}"


# ordering


def toposort(graph: Graph) -> list:
    """Nodes in dependency order; ties go to the lexicographically smallest id."""
    indeg = {}
    users = {nid: [] for nid in graph.nodes}
    for n in graph.nodes.values():
        deps = [i for i in set(n.inputs) if i in graph.nodes]
        indeg[n.id] = len(deps)
        for i in deps:
            users[i].append(n.id)
    ready = [nid for nid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(graph.nodes[nid])
        for u in users[nid]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(ready, u)
    if len(order) != len(graph.nodes):
        stuck = sorted(nid for nid, d in indeg.items() if d > 0)
        raise CycleError(f"cycle through node {stuck[0]!r}")
    return order


# shapes


def _ints(v, n=None, name="attr"):
    if isinstance(v, (int, np.integer)):
        v = [int(v)] * (n or 1)
    v = [int(x) for x in v]
    if n is not None and len(v) != n:
        raise ShapeError(f"{name} needs {n} entries, got {len(v)}")
    return v


def conv_geometry(attrs, in_hw, k_hw):
    strides = _ints(attrs.get("strides", 1), 2, "strides")
    pb = _ints(attrs.get("pad_below", 0), 2, "pad_below")
    pa = _ints(attrs.get("pad_above", 0), 2, "pad_above")
    out = []
    for ax in range(2):
        span = in_hw[ax] + pb[ax] + pa[ax] - k_hw[ax]
        if span < 0 or strides[ax] < 1:
            raise ShapeError(f"window {k_hw} does not fit input {in_hw}")
        out.append(span // strides[ax] + 1)
    return strides, pb, pa, tuple(out)


def _with_batch(dims, batched, batch):
    dims = list(dims)
    if batched and batch is not None:
        dims[0] = batch
    return dims


def node_shape(node: Node, ins: list, batch=None) -> TensorShape:
    """Output shape of ``node`` given its input shapes."""
    op, a = node.op, node.attrs
    if op == "Parameter":
        batched = bool(a.get("batched", True))
        return TensorShape(_with_batch(a["shape"], batched, batch), batched)
    if op == "Constant":
        if node.data is None:
            raise ShapeError("Constant without data")
        return TensorShape(node.data.shape, False)
    if op in ELEMENTWISE_BINARY:
        x, y = ins
        if x.dims == y.dims and x.batched == y.batched:
            return x
        if x.batched and not y.batched and x.rest == y.dims:
            return x
        if y.batched and not x.batched and y.rest == x.dims:
            return y
        raise ShapeError(f"shape mismatch {x} vs {y}")
    if op in ("Negate", "PolyAct"):
        if op == "PolyAct" and len(a["coeffs"]) != 3:
            raise ShapeError("PolyAct takes coefficients [a, b, c]")
        return ins[0]
    if op == "Dot":
        x, w = ins
        if w.batched:
            raise ShapeError("right operand of Dot must not carry the batch axis")
        if x.rank < 1 or w.rank < 1 or w.rank > 2:
            raise ShapeError(f"unsupported Dot ranks {x} . {w}")
        if x.batched and x.rank < 2:
            raise ShapeError("Dot cannot contract the batch axis")
        if x.dims[-1] != w.dims[0]:
            raise ShapeError(f"inner dimensions differ: {x} . {w}")
        return TensorShape(x.dims[:-1] + w.dims[1:], x.batched)
    if op == "Convolution":
        x, w = ins
        if x.rank != 4 or w.rank != 4:
            raise ShapeError(f"Convolution needs (B,C,H,W) and (F,C,kh,kw), got {x} and {w}")
        if w.batched:
            raise ShapeError("convolution filters must not carry the batch axis")
        if x.dims[1] != w.dims[1]:
            raise ShapeError(f"channel mismatch {x.dims[1]} vs {w.dims[1]}")
        *_, out_hw = conv_geometry(a, x.dims[2:], w.dims[2:])
        return TensorShape((x.dims[0], w.dims[0]) + out_hw, x.batched)
    if op in ("AvgPool", "ScaledMeanPool"):
        (x,) = ins
        if x.rank != 4:
            raise ShapeError(f"{op} needs a rank-4 input, got {x}")
        win = _ints(a["window"], 2, "window")
        *_, out_hw = conv_geometry(a, x.dims[2:], win)
        return TensorShape(x.dims[:2] + out_hw, x.batched)
    if op == "BatchNormInference":
        x = ins[0]
        if x.rank < 2:
            raise ShapeError("BatchNormInference needs a channel axis")
        for p in ins[1:]:
            if p.batched or p.dims != (x.dims[1],):
                raise ShapeError(f"BN statistics must have shape ({x.dims[1]},), got {p}")
        return x
    if op == "Broadcast":
        (x,) = ins
        out = _with_batch(a["shape"], x.batched, x.batch)
        axes = _ints(a["axes"])
        kept = [d for i, d in enumerate(out) if i not in axes]
        if tuple(kept) != x.dims:
            raise ShapeError(f"cannot broadcast {x} to {out} over axes {axes}")
        if x.batched and 0 in axes:
            raise ShapeError("Broadcast cannot add a leading axis to a batched tensor")
        return TensorShape(out, x.batched)
    if op == "Concat":
        if not ins:
            raise ShapeError("Concat needs at least one input")
        ax = int(a["axis"])
        first = ins[0]
        if first.batched and ax == 0:
            raise ShapeError("Concat cannot join along the batch axis")
        if not 0 <= ax < first.rank:
            raise ShapeError(f"axis {ax} out of range for {first}")
        total = 0
        for s in ins:
            if s.rank != first.rank or s.batched != first.batched:
                raise ShapeError(f"Concat inputs disagree: {first} vs {s}")
            if any(s.dims[i] != first.dims[i] for i in range(s.rank) if i != ax):
                raise ShapeError(f"Concat inputs disagree off axis {ax}: {first} vs {s}")
            total += s.dims[ax]
        dims = list(first.dims)
        dims[ax] = total
        return TensorShape(dims, first.batched)
    if op == "Pad":
        (x,) = ins
        pb = _ints(a["pad_below"], x.rank, "pad_below")
        pa = _ints(a["pad_above"], x.rank, "pad_above")
        if x.batched and (pb[0] or pa[0]):
            raise ShapeError("Pad cannot pad the batch axis")
        if min(pb + pa) < 0:
            raise ShapeError("negative padding")
        return TensorShape([d + lo + hi for d, lo, hi in zip(x.dims, pb, pa)], x.batched)
    if op == "Reshape":
        (x,) = ins
        out = _with_batch(a["shape"], x.batched, x.batch)
        if int(np.prod(out, dtype=np.int64)) != x.size:
            raise ShapeError(f"Reshape {x} -> {tuple(out)} changes element count ({x.size} vs {int(np.prod(out))})")
        if x.batched and out[0] != x.dims[0]:
            raise ShapeError("Reshape must keep the batch axis")
        return TensorShape(out, x.batched)
    if op == "Reverse":
        (x,) = ins
        axes = _ints(a["axes"])
        if any(not 0 <= ax < x.rank for ax in axes):
            raise ShapeError(f"axes {axes} out of range for {x}")
        if x.batched and 0 in axes:
            raise ShapeError("Reverse cannot touch the batch axis")
        return x
    if op == "Slice":
        (x,) = ins
        lo = _ints(a["lower"], x.rank, "lower")
        hi = _ints(a["upper"], x.rank, "upper")
        st = _ints(a.get("strides", 1), x.rank, "strides")
        if x.batched:
            hi[0] = x.dims[0]
            if lo[0] != 0 or st[0] != 1:
                raise ShapeError("Slice cannot cut the batch axis")
        dims = []
        for l, h, s, d in zip(lo, hi, st, x.dims):
            if not 0 <= l < h <= d or s < 1:
                raise ShapeError(f"slice [{l}:{h}:{s}] out of range for extent {d}")
            dims.append(-(-(h - l) // s))
        return TensorShape(dims, x.batched)
    if op == "Sum":
        (x,) = ins
        axes = _ints(a["axes"])
        if any(not 0 <= ax < x.rank for ax in axes):
            raise ShapeError(f"axes {axes} out of range for {x}")
        if x.batched and 0 in axes:
            raise ShapeError("Sum cannot reduce the batch axis")
        dims = [d for i, d in enumerate(x.dims) if i not in axes]
        if x.batched or dims:
            return TensorShape(dims, x.batched)
        return TensorShape((1,), False)
    raise GraphError(f"unknown op kind {op!r}")


def infer_shapes(graph: Graph, batch: Optional[int] = None) -> dict:
    """``{node_id: TensorShape}``; ``batch`` overrides the batch extent."""
    shapes = {}
    for n in toposort(graph):
        try:
            shapes[n.id] = node_shape(n, [shapes[i] for i in n.inputs], batch)
        except ShapeError as exc:
            raise ShapeError(f"node {n.id!r} ({n.op}): {exc}") from None
        except KeyError as exc:
            raise ShapeError(f"node {n.id!r} ({n.op}): missing attr {exc}") from None
    return shapes


def validate(graph: Graph) -> list:
    """Diagnostics naming node ids; empty when the graph is valid."""
    diags = []
    if not graph.outputs:
        diags.append("graph has no outputs")
    for n in graph.nodes.values():
        if n.op not in OPS:
            diags.append(f"node {n.id!r}: unknown op kind {n.op!r}")
            continue
        arity = _ARITY.get(n.op)
        if arity is not None and len(n.inputs) != arity:
            diags.append(f"node {n.id!r}: {n.op} takes {arity} inputs, got {len(n.inputs)}")
        for i in n.inputs:
            if i not in graph.nodes:
                diags.append(f"node {n.id!r}: input {i!r} does not exist")
        for key in _REQUIRED_ATTRS.get(n.op, ()):
            if key not in n.attrs:
                diags.append(f"node {n.id!r}: {n.op} requires attr {key!r}")
        if n.op == "Constant" and n.data is None:
            diags.append(f"node {n.id!r}: Constant without data")
        if n.op not in ("Constant", "Parameter") and n.data is not None:
            diags.append(f"node {n.id!r}: only Constant and Parameter carry data")
    for o in graph.outputs:
        if o not in graph.nodes:
            diags.append(f"output {o!r} does not exist")
    if diags:
        return diags
    try:
        infer_shapes(graph)
    except CycleError as exc:
        diags.append(str(exc))
    except GraphError as exc:
        diags.append(str(exc))
    return diags


def check(graph: Graph) -> Graph:
    diags = validate(graph)
    if diags:
        raise GraphError("; ".join(diags))
    return graph


# serialization


def to_dict(graph: Graph) -> dict:
    nodes = []
    for n in toposort(graph):
        d = {"id": n.id, "op": n.op, "inputs": list(n.inputs), "attrs": json.loads(_canon(n.attrs))}
        if n.data is not None:
            d["data"] = {"shape": list(n.data.shape), "values": n.data.ravel().tolist()}
        nodes.append(d)
    return {"format_version": FORMAT_VERSION, "name": graph.name, "nodes": nodes, "outputs": list(graph.outputs)}


def serialize(graph: Graph, indent=None) -> str:
    return json.dumps(to_dict(graph), indent=indent)


_TOP_KEYS = {"format_version", "name", "nodes", "outputs"}
_NODE_KEYS = {"id", "op", "inputs", "attrs", "data"}


def from_dict(doc: Any) -> Graph:
    if not isinstance(doc, dict):
        raise GraphError("graph document must be a JSON object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise GraphError(f"unknown top-level keys: {sorted(extra)}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise GraphError(f"format_version must be {FORMAT_VERSION}")
    for key in ("name", "nodes", "outputs"):
        if key not in doc:
            raise GraphError(f"missing top-level key {key!r}")
    nodes = {}
    for k, d in enumerate(doc["nodes"]):
        where = f"nodes[{k}]"
        if not isinstance(d, dict) or "id" not in d or "op" not in d:
            raise GraphError(f"{where}: node needs 'id' and 'op'")
        extra = set(d) - _NODE_KEYS
        if extra:
            raise GraphError(f"{where}: unknown keys {sorted(extra)}")
        if d["op"] not in OPS:
            raise GraphError(f"{where}: unknown op kind {d['op']!r}")
        if d["id"] in nodes:
            raise GraphError(f"{where}: duplicate id {d['id']!r}")
        data = None
        if d.get("data") is not None:
            data = read_tensor_dict(d["data"], where)
        nodes[d["id"]] = Node(str(d["id"]), d["op"], tuple(d.get("inputs", ())), dict(d.get("attrs", {})), data)
    return Graph(str(doc["name"]), nodes, list(doc["outputs"]))


def deserialize(text: str) -> Graph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"malformed graph document at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(doc)


def load(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())


def save(graph: Graph, path, indent=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(graph, indent))


def read_tensor_dict(d, where="tensor") -> np.ndarray:
    if not isinstance(d, dict) or set(d) != {"shape", "values"}:
        raise GraphError(f"{where}: tensor needs exactly 'shape' and 'values'")
    shape = [int(s) for s in d["shape"]]
    values = np.asarray(d["values"], dtype=np.float64)
    if values.size != int(np.prod(shape, dtype=np.int64)):
        raise GraphError(f"{where}: {values.size} values do not fill shape {shape}")
    return values.reshape(shape)


def load_tensor(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return read_tensor_dict(json.load(fh), str(path))


def save_tensor(arr, path):
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"shape": list(arr.shape), "values": arr.ravel().tolist()}, fh)
