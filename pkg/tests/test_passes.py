import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hegraph.graph import Graph, Node, serialize
from hegraph.models import load_shipped
from hegraph.passes import (
    PassId, activation_fold, avgpool_fold, bn_fold, constant_fold, depth_analysis, parse_passes, run_pipeline,
)
from hegraph.reference import evaluate

from graphgen import PATTERNS, random_graph, random_inputs

FOLDS = {"constant-fold": constant_fold, "avgpool-fold": avgpool_fold, "act-fold": activation_fold, "bn-fold": bn_fold}


def const(nid, v):
    return Node(nid, "Constant", (), {}, np.asarray(v, dtype=float))


def x_param(shape=(2, 1)):
    return Node("x", "Parameter", (), {"shape": list(shape)})


def outputs(g, inputs):
    return evaluate(g, inputs)


def test_parse_passes():
    assert parse_passes("bn-fold,depth") == [PassId.BatchNormFold, PassId.DepthAnalysis]
    assert parse_passes("all") == [PassId.ConstantFold, PassId.AvgPoolFold, PassId.ActivationFold, PassId.BatchNormFold]
    assert parse_passes("") == []
    with pytest.raises(ValueError, match="bogus"):
        parse_passes("bogus")


def test_empty_pipeline_is_identity():
    g = load_shipped("conv_bn")
    out, report = run_pipeline(g, [])
    assert out.structurally_equal(g) and report is None


def test_constant_fold_examples():
    g = Graph("g", [const("a", 2.0), const("b", 3.0), Node("s", "Add", ("a", "b"))], ["s"])
    out = constant_fold(g)
    assert list(out.nodes) == ["s"] and out["s"].op == "Constant" and out["s"].data == 5.0
    g = Graph("g", [const("k", [1.0, -2.0]), Node("n", "Negate", ("k",))], ["n"])
    assert constant_fold(g)["n"].data.tolist() == [-1.0, 2.0]
    g = Graph("g", [x_param(), const("one", [1.0]), Node("m", "Multiply", ("x", "one"))], ["m"])
    assert constant_fold(g).structurally_equal(g)


def _pool_conv(consumers=1, param_weights=False):
    nodes = [x_param((1, 1, 4, 4)), Node("pool", "AvgPool", ("x",), {"window": [2, 2], "strides": [2, 2]})]
    if param_weights:
        nodes.append(Node("w", "Parameter", (), {"shape": [1, 1, 1, 1], "batched": False}))
    else:
        nodes.append(const("w", np.full((1, 1, 1, 1), 8.0)))
    nodes.append(Node("conv", "Convolution", ("pool", "w"), {}))
    outs = ["conv"]
    if consumers == 2:
        nodes.append(Node("neg", "Negate", ("pool",)))
        outs.append("neg")
    return Graph("g", nodes, outs)


def test_avgpool_fold_examples():
    out = avgpool_fold(_pool_conv())
    assert out["pool"].op == "ScaledMeanPool" and out["w"].data.item() == 2.0
    x = np.random.default_rng(0).normal(size=(1, 1, 4, 4))
    assert np.allclose(evaluate(out, {"x": x})["conv"], evaluate(_pool_conv(), {"x": x})["conv"])
    assert avgpool_fold(_pool_conv(consumers=2)).structurally_equal(_pool_conv(consumers=2))
    assert avgpool_fold(_pool_conv(param_weights=True)).structurally_equal(_pool_conv(param_weights=True))


def test_avgpool_fold_skips_nonuniform_divisor():
    g = load_shipped("cifar10")
    assert avgpool_fold(g)["pool"].op == "AvgPool"


def _dot_act(coeffs):
    return Graph("g", [x_param(), const("w", [[3.0]]), Node("d", "Dot", ("x", "w")),
                       Node("act", "PolyAct", ("d",), {"coeffs": list(coeffs)})], ["act"])


def test_activation_fold_example():
    out = activation_fold(_dot_act((2, 4, 6)))
    r = math.sqrt(2)
    assert np.isclose(out["w"].data.item(), 3 * r)
    assert np.allclose(out["act"].attrs["coeffs"], [1.0, 4 / r, 6.0])
    x = np.array([[0.5], [-1.25]])
    assert np.allclose(evaluate(out, {"x": x})["act"], evaluate(_dot_act((2, 4, 6)), {"x": x})["act"])


def test_activation_fold_negative_leading_coefficient():
    g = _dot_act((-0.5, 1.0, 2.0))
    out = activation_fold(g)
    assert out["act"].attrs["coeffs"][0] == -1.0
    x = np.array([[0.7], [-2.0]])
    assert np.allclose(evaluate(out, {"x": x})["act"], evaluate(g, {"x": x})["act"])


@pytest.mark.parametrize("coeffs", [(1, 5, 7), (-1, 2, 0), (0, 2, 3)])
def test_activation_fold_leaves_unit_and_affine(coeffs):
    g = _dot_act(coeffs)
    assert activation_fold(g).structurally_equal(g)


def test_bn_fold_example():
    nodes = [x_param(), const("w", [[1.0]]), Node("d", "Dot", ("x", "w")),
             const("g", [3.0]), const("b", [1.0]), const("m", [1.5]), const("v", [8.99]),
             Node("bn", "BatchNormInference", ("d", "g", "b", "m", "v"), {"epsilon": 0.01})]
    out = bn_fold(Graph("g", nodes, ["bn"]))
    assert out["bn"].op == "Add"
    assert np.isclose(out["w"].data.item(), 1.0)
    bias = out[out["bn"].inputs[1]]
    assert np.allclose(bias.data, [-0.5])
    assert not any(n.op == "BatchNormInference" for n in out.nodes.values())


def test_bn_fold_needs_linear_producer():
    nodes = [x_param(), const("g", [3.0]), const("b", [1.0]), const("m", [1.5]), const("v", [9.0]),
             Node("bn", "BatchNormInference", ("x", "g", "b", "m", "v"), {"epsilon": 0.0})]
    g = Graph("g", nodes, ["bn"])
    assert bn_fold(g).structurally_equal(g)


def test_shipped_depths():
    assert depth_analysis(load_shipped("cryptonets")).total == 5
    conv_bn = load_shipped("conv_bn")
    assert depth_analysis(conv_bn).total == 2
    assert run_pipeline(conv_bn, "bn-fold,depth")[1].total == 1
    binar = load_shipped("cryptonets_binarized")
    assert depth_analysis(binar).total == 8
    assert depth_analysis(binar, bypass_aware=True).total == 5
    cifar = load_shipped("cifar10")
    assert depth_analysis(cifar).total == 10
    assert run_pipeline(cifar, "constant-fold,act-fold,bn-fold,depth")[1].total == 8
    folded, report = run_pipeline(cifar, "all,depth")
    assert report.total == 8


def test_depth_report_json_and_rearrangement_costs():
    report = depth_analysis(load_shipped("cryptonets"))
    d = report.to_dict()
    assert set(d) == {"total", "bypass_aware", "per_node"}
    assert d["per_node"]["flatten"] == 0 and d["per_node"]["act1"] == 1
    assert report.critical_path[0] == "x" and report.critical_path[-1] == "fc2"


def test_depth_sources():
    g = load_shipped("cryptonets")
    assert depth_analysis(g, sources="none").total == 0
    assert depth_analysis(g, sources="all").total >= depth_analysis(g).total


@pytest.mark.parametrize("coeffs,cost", [((1, 0, 0), 1), ((-1, 2, 0), 1), ((2, 0, 0), 2), ((0, 3, 1), 1), ((0, 1, 5), 0)])
def test_polyact_cost(coeffs, cost):
    g = Graph("g", [x_param(), Node("a", "PolyAct", ("x",), {"coeffs": list(coeffs)})], ["a"])
    assert depth_analysis(g).per_node["a"] == cost


@pytest.mark.parametrize("name", list(PATTERNS))
@given(seed=st.integers(0, 100_000))
def test_fold_soundness(name, seed):
    g = PATTERNS[name](seed)
    inputs = random_inputs(g, seed)
    folded = FOLDS[name](g)
    before, after = outputs(g, inputs), outputs(folded, inputs)
    for k in before:
        assert np.allclose(after[k], before[k], rtol=1e-9, atol=1e-12)
    assert depth_analysis(folded).total <= depth_analysis(g).total
    assert FOLDS[name](folded).structurally_equal(folded)


@given(st.integers(0, 100_000))
def test_depth_analysis_is_pure_and_bypass_monotone(seed):
    g = random_graph(seed, 12)
    text = serialize(g)
    plain = depth_analysis(g)
    aware = depth_analysis(g, bypass_aware=True)
    assert serialize(g) == text
    assert aware.total <= plain.total
    assert plain.total >= 0 and all(v >= 0 for v in plain.per_node.values())


@given(st.integers(0, 100_000))
def test_folds_preserve_random_graphs(seed):
    g = random_graph(seed, 12)
    inputs = random_inputs(g, seed)
    ref = outputs(g, inputs)
    out, _ = run_pipeline(g, "all")
    got = outputs(out, inputs)
    for k in ref:
        assert np.allclose(got[k], ref[k], rtol=1e-9, atol=1e-12)
