"""Builders for the shipped example networks.

Weights are seeded draws from uniform(-0.5, 0.5); binarized layers keep the
sign of the draw. Batch-norm statistics are calibrated from a plaintext
forward pass over seeded inputs in [0, 1), so normalized activations stay
near unit scale and the square activations never blow up.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .graph import Graph, Node, check, load
from .reference import evaluate

SHIPPED = ("conv_bn", "cryptonets", "cryptonets_binarized", "cifar10")
CIFAR_ACT = (0.125, 0.5, 0.25)


class _Builder:
    def __init__(self, name, seed):
        self.name = name
        self.rng = np.random.default_rng(seed)
        self.nodes = {}

    def add(self, nid, op, inputs=(), data=None, **attrs):
        self.nodes[nid] = Node(nid, op, tuple(inputs), attrs, data)
        return nid

    def weights(self, nid, shape, binary=False):
        w = self.rng.uniform(-0.5, 0.5, size=shape)
        if binary:
            w = np.where(w >= 0, 1.0, -1.0)
        return self.add(nid, "Constant", data=w)

    def bn(self, nid, x, channels, eps=1e-3):
        """BN node with placeholder statistics; :meth:`calibrate` fills them in."""
        g = self.add(f"{nid}_gamma", "Constant", data=self.rng.uniform(-0.5, 0.5, channels))
        b = self.add(f"{nid}_beta", "Constant", data=self.rng.uniform(-0.5, 0.5, channels))
        m = self.add(f"{nid}_mean", "Constant", data=np.zeros(channels))
        v = self.add(f"{nid}_var", "Constant", data=np.ones(channels))
        return self.add(nid, "BatchNormInference", (x, g, b, m, v), epsilon=eps)

    def graph(self, outputs) -> Graph:
        return Graph(self.name, dict(self.nodes), list(outputs))

    def calibrate(self, graph: Graph, input_shape, batch=32) -> Graph:
        """Set every BN's mean/variance to the statistics of its input."""
        x = self.rng.uniform(0.0, 1.0, size=(batch,) + tuple(input_shape[1:]))
        for bn in sorted(n.id for n in graph.nodes.values() if n.op == "BatchNormInference"):
            values = evaluate(graph, {"x": x}, keep_all=True)
            z = values[graph.nodes[bn].inputs[0]]
            axes = tuple(i for i in range(z.ndim) if i != 1)
            nodes = graph.nodes
            nodes[f"{bn}_mean"] = nodes[f"{bn}_mean"].replace(data=z.mean(axis=axes))
            nodes[f"{bn}_var"] = nodes[f"{bn}_var"].replace(data=z.var(axis=axes))
        return graph


def cryptonets(seed=0, binarized=False) -> Graph:
    """Conv 5x5/2 (5 filters) -> x^2 -> FC 845->100 -> x^2 -> FC 100->10.

    One row and column of zero padding before the image makes the strided
    5x5 window produce 13x13 maps, i.e. the 845 features the FC layer takes.
    """
    name = "cryptonets_binarized" if binarized else "cryptonets"
    b = _Builder(name, seed)
    shape = [1, 1, 28, 28]
    b.add("x", "Parameter", shape=shape, batched=True)
    b.weights("conv1_w", (5, 1, 5, 5), binarized)
    h = b.add("conv1", "Convolution", ("x", "conv1_w"), strides=[2, 2], pad_below=[1, 1], pad_above=[0, 0])
    if binarized:
        h = b.bn("bn1", h, 5)
    h = b.add("act1", "PolyAct", (h,), coeffs=[1.0, 0.0, 0.0])
    h = b.add("flatten", "Reshape", (h,), shape=[1, 845])
    b.weights("fc1_w", (845, 100), binarized)
    h = b.add("fc1", "Dot", (h, "fc1_w"))
    if binarized:
        h = b.bn("bn2", h, 100)
    h = b.add("act2", "PolyAct", (h,), coeffs=[1.0, 0.0, 0.0])
    b.weights("fc2_w", (100, 10), binarized)
    h = b.add("fc2", "Dot", (h, "fc2_w"))
    if binarized:
        h = b.bn("bn3", h, 10)
    g = b.graph([h])
    if binarized:
        g = b.calibrate(g, shape)
    return check(g)


def conv_bn(seed=0) -> Graph:
    """Conv of a (1,3,10,10) input with four 5x5 filters, then batch norm."""
    b = _Builder("conv_bn", seed)
    shape = [1, 3, 10, 10]
    b.add("x", "Parameter", shape=shape, batched=True)
    b.weights("conv_w", (4, 3, 5, 5))
    h = b.add("conv", "Convolution", ("x", "conv_w"), strides=[1, 1])
    h = b.bn("bn", h, 4)
    return check(b.calibrate(b.graph([h]), shape))


def cifar10(seed=0) -> Graph:
    """Conv 5x5/2 (40) -> BN -> act -> AvgPool 5x5/2 -> Conv 3x3 (80) -> BN -> act -> FC 5120->10.

    Padding (1 before, 2 after) keeps the strided stages at 16x16 and 8x8.
    The pool excludes padding from its divisor, as framework "SAME" pooling does.
    """
    b = _Builder("cifar10", seed)
    shape = [1, 3, 32, 32]
    b.add("x", "Parameter", shape=shape, batched=True)
    b.weights("conv1_w", (40, 3, 5, 5))
    h = b.add("conv1", "Convolution", ("x", "conv1_w"), strides=[2, 2], pad_below=[1, 1], pad_above=[2, 2])
    h = b.bn("bn1", h, 40)
    h = b.add("act1", "PolyAct", (h,), coeffs=list(CIFAR_ACT))
    h = b.add(
        "pool", "AvgPool", (h,), window=[5, 5], strides=[2, 2], pad_below=[1, 1], pad_above=[2, 2],
        include_padding=False,
    )
    b.weights("conv2_w", (80, 40, 3, 3))
    h = b.add("conv2", "Convolution", (h, "conv2_w"), strides=[1, 1], pad_below=[1, 1], pad_above=[1, 1])
    h = b.bn("bn2", h, 80)
    h = b.add("act2", "PolyAct", (h,), coeffs=list(CIFAR_ACT))
    h = b.add("flatten", "Reshape", (h,), shape=[1, 5120])
    b.weights("fc_w", (5120, 10))
    h = b.add("fc", "Dot", (h, "fc_w"))
    return check(b.calibrate(b.graph([h]), shape))


BUILDERS = {
    "conv_bn": conv_bn,
    "cryptonets": cryptonets,
    "cryptonets_binarized": lambda seed=0: cryptonets(seed, binarized=True),
    "cifar10": cifar10,
}


def shipped_path(name: str):
    if name not in SHIPPED:
        raise KeyError(f"no shipped graph {name!r}; choose from {', '.join(SHIPPED)}")
    return resources.files("hegraph") / "data" / f"{name}.json"


def load_shipped(name: str) -> Graph:
    with resources.as_file(shipped_path(name)) as p:
        return load(p)
