"""Graph rewrites that cut multiplicative depth, and the depth analysis itself.

Every rewrite is a pure ``Graph -> Graph`` function. Fold rewrites only fire
when the producer's sole consumer is the matched follower, so weights are
never duplicated.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import Graph, GraphError, Node, check, infer_shapes, toposort
from .reference import bn_affine, eval_node, pool_divisors


class PassId(enum.Enum):
    ConstantFold = "constant-fold"
    AvgPoolFold = "avgpool-fold"
    ActivationFold = "act-fold"
    BatchNormFold = "bn-fold"
    DepthAnalysis = "depth"

    @classmethod
    def parse(cls, token) -> "PassId":
        if isinstance(token, cls):
            return token
        for p in cls:
            if token in (p.value, p.name):
                return p
        raise GraphError(f"unknown pass {token!r}; choose from {', '.join(p.value for p in cls)}")


ALL_FOLDS = (PassId.ConstantFold, PassId.AvgPoolFold, PassId.ActivationFold, PassId.BatchNormFold)


def parse_passes(spec) -> list:
    """Pass list from a comma string or sequence; ``all`` expands to every fold."""
    if isinstance(spec, str):
        spec = [t.strip() for t in spec.split(",") if t.strip()]
    out = []
    for tok in spec:
        if tok == "all":
            out.extend(ALL_FOLDS)
        else:
            out.append(PassId.parse(tok))
    return out


def _prune_constants(graph: Graph, candidates) -> Graph:
    """Drop the given Constant nodes once nothing reads them."""
    consumers = graph.consumers()
    for cid in candidates:
        n = graph.nodes.get(cid)
        if n is not None and n.op == "Constant" and not consumers[cid] and cid not in graph.outputs:
            del graph.nodes[cid]
    return graph


def _constant(graph: Graph, node_id) -> Optional[np.ndarray]:
    n = graph.nodes.get(node_id)
    return None if n is None or n.op != "Constant" else n.data


def _replace_weights(graph: Graph, consumer: Node, slot: int, values, suffix: str, consumers) -> Node:
    """Point ``consumer.inputs[slot]`` at a Constant holding ``values``.

    The old constant is rewritten in place when ``consumer`` is its only
    reader; otherwise a new node is created.
    """
    wid = consumer.inputs[slot]
    if consumers[wid] == [consumer.id] and wid not in graph.outputs:
        graph.nodes[wid] = graph.nodes[wid].replace(data=values)
        return consumer
    new_id = graph.fresh_id(f"{wid}_{suffix}")
    graph.nodes[new_id] = Node(new_id, "Constant", (), {}, values)
    inputs = list(consumer.inputs)
    inputs[slot] = new_id
    consumer = consumer.replace(inputs=tuple(inputs))
    graph.nodes[consumer.id] = consumer
    return consumer


def constant_fold(graph: Graph) -> Graph:
    """Evaluate every node whose inputs are all Constants, to a fixpoint."""
    check(graph)
    g = graph.copy()
    shapes = infer_shapes(g)
    folded_inputs = set()
    for n in toposort(g):
        if n.op in ("Constant", "Parameter") or not n.inputs:
            continue
        if all(g.nodes[i].op == "Constant" for i in n.inputs):
            args = [np.array(g.nodes[i].data) for i in n.inputs]
            value = eval_node(n, args, [False] * len(args))
            value = np.asarray(value, dtype=np.float64).reshape(shapes[n.id].dims)
            g.nodes[n.id] = Node(n.id, "Constant", (), {}, value)
            folded_inputs.update(n.inputs)
    return _prune_constants(g, sorted(folded_inputs))


def avgpool_fold(graph: Graph) -> Graph:
    """AvgPool feeding only a constant-weight Convolution -> ScaledMeanPool + W/(s1*s2).

    Only pools whose divisor is the same at every output position qualify;
    padded pools that exclude padding from the count have no single factor.
    """
    check(graph)
    g = graph.copy()
    shapes = infer_shapes(g)
    consumers = g.consumers()
    for n in toposort(graph):
        if n.op != "AvgPool":
            continue
        cid = g.sole_consumer(n.id, consumers)
        if cid is None:
            continue
        conv = g.nodes[cid]
        if conv.op != "Convolution" or conv.inputs[0] != n.id or conv.inputs[1] == n.id:
            continue
        w = _constant(g, conv.inputs[1])
        if w is None:
            continue
        div = pool_divisors(n.attrs, shapes[n.inputs[0]].dims[2:])
        if not np.all(div == div.flat[0]):
            continue
        _replace_weights(g, conv, 1, w / div.flat[0], "pooled", consumers)
        g.nodes[n.id] = n.replace(op="ScaledMeanPool")
    return g


def activation_fold(graph: Graph) -> Graph:
    """Move the leading activation coefficient into the preceding weights.

    ``a z^2 + b z + c`` with ``z = W x`` equals ``s u^2 + (b/r) u + c`` for
    ``u = r W x``, ``r = sqrt(|a|)`` and ``s = sign(a)``. The square then has
    a unit coefficient and needs no separate scaling multiply.
    """
    check(graph)
    g = graph.copy()
    consumers = g.consumers()
    for n in toposort(graph):
        if n.op not in ("Dot", "Convolution"):
            continue
        w = _constant(g, n.inputs[1])
        if w is None or n.inputs[0] == n.inputs[1]:
            continue
        cid = g.sole_consumer(n.id, consumers)
        if cid is None or g.nodes[cid].op != "PolyAct":
            continue
        act = g.nodes[cid]
        a, b, c = (float(v) for v in act.attrs["coeffs"])
        if a == 0 or abs(a) == 1:
            continue
        r = math.sqrt(abs(a))
        _replace_weights(g, g.nodes[n.id], 1, w * r, "act", consumers)
        attrs = dict(act.attrs, coeffs=[math.copysign(1.0, a), b / r, c])
        g.nodes[cid] = act.replace(attrs=attrs)
    return g


def bn_fold(graph: Graph) -> Graph:
    """Conv/Dot with constant weights followed only by BN -> scaled weights + bias Add."""
    check(graph)
    g = graph.copy()
    shapes = infer_shapes(g)
    consumers = g.consumers()
    for n in toposort(graph):
        if n.op not in ("Dot", "Convolution"):
            continue
        w = _constant(g, n.inputs[1])
        if w is None or n.inputs[0] == n.inputs[1]:
            continue
        bid = g.sole_consumer(n.id, consumers)
        if bid is None:
            continue
        bn = g.nodes[bid]
        if bn.op != "BatchNormInference" or bn.inputs[0] != n.id:
            continue
        stats = [_constant(g, i) for i in bn.inputs[1:]]
        if any(s is None for s in stats):
            continue
        out_shape = shapes[n.id]
        if n.op == "Dot" and (out_shape.rank != 2 or w.ndim != 2):
            # the BN channel axis is only the weights' last axis for (B, m) outputs
            continue
        scale, shift = bn_affine(*stats, float(bn.attrs["epsilon"]))
        if n.op == "Convolution":
            new_w = w * scale[:, None, None, None]
        else:
            new_w = w * scale[None, :]
        _replace_weights(g, g.nodes[n.id], 1, new_w, "bn", consumers)

        rest = out_shape.rest
        bias_id = g.fresh_id(f"{bid}_bias")
        g.nodes[bias_id] = Node(bias_id, "Constant", (), {}, shift)
        add_in = bias_id
        if len(rest) > 1:
            bc_id = g.fresh_id(f"{bid}_bias_bcast")
            axes = list(range(1, len(rest)))
            g.nodes[bc_id] = Node(bc_id, "Broadcast", (bias_id,), {"shape": list(rest), "axes": axes})
            add_in = bc_id
        g.nodes[bid] = Node(bid, "Add", (n.id, add_in), {})
        _prune_constants(g, bn.inputs[1:])
        consumers = g.consumers()
    return g


# depth


@dataclass
class DepthReport:
    total: int
    bypass_aware: bool
    per_node: dict
    critical_path: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"total": self.total, "bypass_aware": self.bypass_aware, "per_node": dict(self.per_node)}

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


SOURCES = ("parameters", "constants", "all", "none")


def _is_bypass_constant(data) -> bool:
    return data is not None and bool(np.all(np.isin(data, (-1.0, 0.0, 1.0))))


def node_cost(graph: Graph, node: Node, encrypted: dict, bypass_aware: bool) -> int:
    """Levels consumed by ``node`` given which inputs are ciphertexts."""
    ct_in = [encrypted[i] for i in node.inputs]
    if not any(ct_in):
        return 0
    op = node.op
    if op in ("Multiply", "Dot", "Convolution"):
        if all(ct_in):
            return 1
        plain = node.inputs[ct_in.index(False)]
        if bypass_aware and _is_bypass_constant(_constant(graph, plain)):
            return 0
        return 1
    if op in ("AvgPool", "BatchNormInference"):
        return 1
    if op == "PolyAct":
        a, b, _ = (float(v) for v in node.attrs["coeffs"])
        if a == 0:
            return 0 if b in (0.0, 1.0, -1.0) else 1
        return 1 + (abs(a) != 1)
    return 0


def depth_analysis(graph: Graph, bypass_aware: bool = False, sources: str = "parameters") -> DepthReport:
    """Longest level-weighted path from an encrypted source to any output.

    ``sources`` names which leaves are ciphertexts: Parameters (encrypted
    data), Constants (encrypted model), both, or none.
    """
    if sources not in SOURCES:
        raise ValueError(f"sources must be one of {SOURCES}")
    check(graph)
    encrypted, dist, cost, prev = {}, {}, {}, {}
    for n in toposort(graph):
        if n.op == "Parameter":
            encrypted[n.id] = sources in ("parameters", "all")
        elif n.op == "Constant":
            encrypted[n.id] = sources in ("constants", "all")
        else:
            encrypted[n.id] = any(encrypted[i] for i in n.inputs)
        cost[n.id] = node_cost(graph, n, encrypted, bypass_aware)
        best, arg = 0, None
        for i in n.inputs:
            if encrypted[i] and (arg is None or dist[i] > best):
                best, arg = dist[i], i
        dist[n.id] = best + cost[n.id]
        prev[n.id] = arg
    total, end = 0, None
    for o in graph.outputs:
        if end is None or dist[o] > total:
            total, end = dist[o], o
    path = []
    while end is not None:
        path.append(end)
        end = prev[end]
    return DepthReport(int(total), bool(bypass_aware), {k: int(v) for k, v in cost.items()}, path[::-1])


_REWRITES = {
    PassId.ConstantFold: constant_fold,
    PassId.AvgPoolFold: avgpool_fold,
    PassId.ActivationFold: activation_fold,
    PassId.BatchNormFold: bn_fold,
}


def run_pipeline(graph: Graph, passes, bypass_aware: bool = False, sources: str = "parameters"):
    """Apply ``passes`` in order; returns ``(graph, report or None)``.

    The report comes from the last DepthAnalysis in the list.
    """
    check(graph)
    report = None
    for p in parse_passes(passes):
        if p is PassId.DepthAnalysis:
            report = depth_analysis(graph, bypass_aware, sources)
        else:
            graph = _REWRITES[p](graph)
    check(graph)
    return graph, report
