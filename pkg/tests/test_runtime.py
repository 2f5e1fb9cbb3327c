import numpy as np
import pytest

from hegraph.backends import make_backend
from hegraph.graph import Graph, Node
from hegraph.he.context import make_context
from hegraph.he.packing import CapacityError, pack_tensor, unpack_tensor
from hegraph.models import SHIPPED, load_shipped
from hegraph.passes import bn_fold, depth_analysis
from hegraph.reference import evaluate
from hegraph.runtime.bypass import Action, BypassConfig, apply_bypass
from hegraph.runtime.evaluator import Evaluator, plain
from hegraph.runtime.executor import DepthExceededError, Paradigm, execute
from hegraph.he.payload import SpecialValue


def inputs_for(graph, batch, seed=0):
    from hegraph.graph import infer_shapes

    rng = np.random.default_rng(seed)
    shapes = infer_shapes(graph, batch)
    return {p: rng.uniform(0, 1, shapes[p].dims) for p in graph.parameters()}


def mini_net(seed=0):
    """Conv -> square -> AvgPool -> BN -> Dot: every kernel on a toy scale."""
    rng = np.random.default_rng(seed)
    n = lambda *a, **k: Node(*a, **k)  # noqa: E731
    nodes = [
        n("x", "Parameter", (), {"shape": [3, 1, 6, 6]}),
        n("w1", "Constant", (), {}, rng.uniform(-0.5, 0.5, (2, 1, 3, 3))),
        n("conv", "Convolution", ("x", "w1"), {"strides": [1, 1], "pad_below": [1, 1], "pad_above": [1, 1]}),
        n("act", "PolyAct", ("conv",), {"coeffs": [1.0, 0.5, 0.1]}),
        n("pool", "AvgPool", ("act",), {"window": [2, 2], "strides": [2, 2]}),
        n("g", "Constant", (), {}, np.array([1.5, 0.5])),
        n("b", "Constant", (), {}, np.array([0.1, -0.2])),
        n("m", "Constant", (), {}, np.array([0.2, 0.3])),
        n("v", "Constant", (), {}, np.array([2.0, 0.5])),
        n("bn", "BatchNormInference", ("pool", "g", "b", "m", "v"), {"epsilon": 1e-3}),
        n("flat", "Reshape", ("bn",), {"shape": [3, 18]}),
        n("w2", "Constant", (), {}, np.where(rng.random((18, 4)) < 0.3, rng.choice([-1.0, 0.0, 1.0], (18, 4)),
                                              rng.uniform(-0.5, 0.5, (18, 4)))),
        n("fc", "Dot", ("flat", "w2")),
        n("bias", "Constant", (), {}, np.array([0.0, 1.0, -0.5, 0.25])),
        n("out", "Add", ("fc", "bias")),
    ]
    return Graph("mini", nodes, ["out"])


@pytest.fixture(scope="module")
def ckks4():
    ctx = make_context("ckks-ref", 1024, [40, 30, 30, 30, 30, 30], 30, 0)
    return ctx, make_backend(ctx, seed=5)


@pytest.mark.parametrize("name", SHIPPED)
def test_clear_backend_matches_reference(clear_ctx, name):
    g = load_shipped(name)
    if name == "cifar10":
        clear_ctx = make_context("clear", 8192, [30] * 11, 30, 0)
    x = inputs_for(g, 4)
    out, prof = execute(g, x, clear_ctx, paradigm="encrypted-data", seed=0)
    ref = evaluate(g, x)
    depth = depth_analysis(g, bypass_aware=True).total
    for k in ref:
        assert np.allclose(out[k], ref[k], rtol=1e-9, atol=1e-9)
        assert prof.output_levels[k] == clear_ctx.level_budget - depth


@pytest.mark.parametrize("paradigm", ["encrypted-model", "encrypted-both", "plain-debug"])
def test_paradigms_agree_on_clear(paradigm):
    g = load_shipped("conv_bn")
    ctx = make_context("clear", 8192, [30] * 5, 30, 0)
    x = inputs_for(g, 2)
    out, _ = execute(g, x, ctx, paradigm=paradigm)
    assert np.allclose(out["bn"], evaluate(g, x)["bn"], rtol=1e-9, atol=1e-9)


def test_depth_admission(clear_ctx):
    g = load_shipped("cifar10")
    ctx = make_context("clear", 8192, [30] * 9, 30, 0)
    with pytest.raises(DepthExceededError) as err:
        execute(g, inputs_for(g, 1), ctx)
    assert err.value.needed == 10 and err.value.budget == 8 and "conv1" in str(err.value)


def test_batch_capacity(clear_ctx):
    g = load_shipped("conv_bn")
    with pytest.raises(CapacityError):
        execute(g, inputs_for(g, 4097), clear_ctx)


def test_counts_are_batch_independent(clear_ctx):
    g = load_shipped("cryptonets")
    _, p1 = execute(g, inputs_for(g, 1), clear_ctx)
    _, p2 = execute(g, inputs_for(g, 300), clear_ctx)
    assert p1.ct_ops == p2.ct_ops and p1.bypass == p2.bypass


def test_plain_debug_is_bit_stable(clear_ctx):
    g = load_shipped("cryptonets")
    x = inputs_for(g, 3)
    a, _ = execute(g, x, clear_ctx, paradigm=Paradigm.PlainDebug, seed=1)
    b, _ = execute(g, x, clear_ctx, paradigm=Paradigm.PlainDebug, seed=1)
    assert np.array_equal(a["fc2"], b["fc2"])


def test_mini_net_ckks(ckks4):
    ctx, be = ckks4
    g = mini_net()
    x = inputs_for(g, 3, seed=2)
    ref = evaluate(g, x)["out"]
    out, prof = execute(g, x, ctx, backend=be)
    assert np.max(np.abs(out["out"] - ref)) < 1e-2 * max(1.0, np.max(np.abs(ref)))
    assert prof.output_levels["out"] == ctx.level_budget - depth_analysis(g, True).total


def test_override_matches_default_kernel(ckks4):
    ctx, be = ckks4
    g = mini_net()
    x = inputs_for(g, 3, seed=4)
    fast, pf = execute(g, x, ctx, backend=be, use_overrides=True)
    slow, ps = execute(g, x, ctx, backend=be, use_overrides=False)
    assert pf.ct_ops == ps.ct_ops and pf.bypass == ps.bypass
    assert np.allclose(fast["out"], slow["out"], atol=1e-2)


def test_encrypted_model_ckks(ckks4):
    ctx, be = ckks4
    nodes = [
        Node("x", "Parameter", (), {"shape": [2, 3]}),
        Node("w", "Constant", (), {}, np.array([[0.5, -1.0], [2.0, 0.25], [1.0, 0.0]])),
        Node("d", "Dot", ("x", "w")),
    ]
    g = Graph("g", nodes, ["d"])
    x = {"x": np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]])}
    for paradigm in ("encrypted-model", "encrypted-both"):
        out, prof = execute(g, x, ctx, paradigm=paradigm, backend=be)
        assert np.allclose(out["d"], x["x"] @ nodes[1].data, atol=1e-3)
    assert prof.ct_ops["mul_ct"] > 0


def test_bypass_rules():
    on, off = BypassConfig(), BypassConfig.off()
    assert apply_bypass("mul", SpecialValue.ONE, on) is Action.RETURN_CT
    assert apply_bypass("mul", SpecialValue.MINUS_ONE, on) is Action.NEGATE
    assert apply_bypass("mul", SpecialValue.ZERO, on) is Action.FRESH_ZERO
    assert apply_bypass("mul", SpecialValue.GENERAL, on) is Action.COMPUTE
    assert apply_bypass("add", SpecialValue.ZERO, on) is Action.RETURN_CT
    for cls in SpecialValue:
        assert apply_bypass("mul", cls, off) is Action.COMPUTE
        assert apply_bypass("add", cls, off) is Action.COMPUTE


def test_evaluator_bypass_on_ckks(small_backend):
    be = small_backend
    ev = Evaluator(be, BypassConfig())
    c = be.encrypt(be.encode([0.5, -3.0]))
    assert ev.mul(c, plain([1.0], broadcast=True)) is c
    z = ev.mul(c, plain([0.0, 0.0]))
    assert z.level == c.level and z.scale == c.scale and z.noise == c.noise == be.scheme.fresh_noise_sk
    assert np.allclose(be.decrypt_values(z)[:2], 0.0, atol=1e-4)
    n = ev.mul(c, plain([-1.0], broadcast=True))
    assert np.allclose(be.decrypt_values(n)[:2], [-0.5, 3.0], atol=1e-3)
    assert ev.add(c, plain([0.0], broadcast=True)) is c
    assert ev.counts["bypass_mult"] == 3 and ev.counts["bypass_add"] == 1 and ev.counts["mul_pt"] == 0


def test_epsilon_relaxes_classification(small_backend):
    be = small_backend
    c = be.encrypt(be.encode([2.0]))
    near_one = plain([1.0 + 1e-9], broadcast=True)
    assert Evaluator(be, BypassConfig(tolerance=1e-6)).mul(c, near_one) is c
    assert Evaluator(be, BypassConfig()).mul(c, near_one) is not c


def test_dot_bypass_counts(clear_ctx):
    be = make_backend(clear_ctx)
    w = np.array([[0.0, 1.0], [0.0, -1.0], [0.0, 0.5]])
    nodes = [Node("x", "Parameter", (), {"shape": [2, 3]}), Node("w", "Constant", (), {}, w), Node("d", "Dot", ("x", "w"))]
    g = Graph("g", nodes, ["d"])
    x = np.arange(6.0).reshape(2, 3)
    out, prof = execute(g, {"x": x}, clear_ctx, backend=be, use_overrides=False)
    assert np.allclose(out["d"], x @ w)
    # column 0: three zero products, nothing else -> two skipped additions
    # column 1: +1 and -1 bypassed, 0.5 multiplied
    assert prof.bypass == {"mult": 5, "add": 2}
    _, prof_off = execute(g, {"x": x}, clear_ctx, backend=be, bypass=BypassConfig.off(), use_overrides=False)
    assert prof_off.bypass == {"mult": 0, "add": 0} and prof_off.ct_ops["mul_pt"] == 6


def test_bn_fold_saves_a_level(clear_ctx):
    g = load_shipped("conv_bn")
    ctx1 = make_context("clear", 8192, [30, 30], 30, 0)
    x = inputs_for(g, 2)
    with pytest.raises(DepthExceededError):
        execute(g, x, ctx1)
    out, _ = execute(bn_fold(g), x, ctx1)
    assert np.allclose(out["bn"], evaluate(g, x)["bn"], rtol=1e-9, atol=1e-9)


def test_unbatched_pack_roundtrip_through_graph(clear_ctx):
    be = make_backend(clear_ctx)
    t = pack_tensor(np.ones((2, 2)), be, "cipher", batched=False)
    assert unpack_tensor(t, be).shape == (2, 2)


def _one_op(x_shape, op, attrs=None, w=None):
    nodes = [Node("x", "Parameter", (), {"shape": list(x_shape)})]
    ins = ("x",)
    if w is not None:
        nodes.append(Node("w", "Constant", (), {}, np.asarray(w, dtype=float)))
        ins = ("x", "w")
    nodes.append(Node("y", op, ins, attrs or {}))
    return Graph(op, nodes, ["y"])


def test_identity_dot_bypasses_everything(clear_ctx):
    g = _one_op((3, 2), "Dot", w=np.eye(2))
    x = np.random.default_rng(0).normal(size=(3, 2))
    out, prof = execute(g, {"x": x}, clear_ctx, use_overrides=False)
    assert np.allclose(out["y"], x)
    assert prof.ct_ops["mul_pt"] == 0 and prof.bypass == {"mult": 4, "add": 2}


def test_unit_dot_returns_input_handle(clear_ctx):
    be = make_backend(clear_ctx)
    ev = Evaluator(be)
    from hegraph.runtime import kernels as K

    x = pack_tensor(np.array([[2.0]]), be, "cipher")
    w = pack_tensor(np.array([[1.0]]), be, "plain", batched=False)
    y = K.dot(ev, x, w, use_override=False)
    assert y.flat()[0] is x.flat()[0] and ev.counts["bypass_mult"] == 1


def test_all_ones_conv_has_no_multiplies(clear_ctx):
    g = _one_op((2, 1, 5, 5), "Convolution", {"strides": [1, 1]}, w=np.ones((1, 1, 3, 3)))
    x = np.random.default_rng(1).normal(size=(2, 1, 5, 5))
    out, prof = execute(g, {"x": x}, clear_ctx, use_overrides=False)
    assert np.allclose(out["y"], evaluate(g, {"x": x})["y"])
    assert prof.ct_ops["mul_pt"] == 0 and prof.ct_ops["mul_ct"] == 0
    assert prof.output_levels["y"] == clear_ctx.level_budget


@pytest.mark.parametrize("op,want,levels", [("ScaledMeanPool", 10.0, 0), ("AvgPool", 2.5, 1)])
def test_pool_values_and_levels(clear_ctx, op, want, levels):
    g = _one_op((1, 1, 2, 2), op, {"window": [2, 2]})
    out, prof = execute(g, {"x": np.array([[[[1.0, 2.0], [3.0, 4.0]]]])}, clear_ctx)
    assert out["y"].ravel().tolist() == [want]
    assert clear_ctx.level_budget - prof.output_levels["y"] == levels


def test_random_dot_on_ckks(small_backend):
    rng = np.random.default_rng(3)
    w = rng.uniform(-1, 1, (4, 4))
    g = _one_op((5, 4), "Dot", w=w)
    x = rng.uniform(-1, 1, (5, 4))
    for overrides in (True, False):
        out, _ = execute(g, {"x": x}, small_backend.context, backend=small_backend, use_overrides=overrides)
        assert np.max(np.abs(out["y"] - x @ w)) < 1e-2


def test_bypass_on_off_agree(ckks4):
    ctx, be = ckks4
    g = mini_net(1)
    x = inputs_for(g, 3, seed=9)
    on, p_on = execute(g, x, ctx, backend=be, bypass=BypassConfig())
    off, p_off = execute(g, x, ctx, backend=be, bypass=BypassConfig.off())
    assert np.allclose(on["out"], off["out"], atol=1e-2)
    assert p_on.bypass["mult"] > 0 and p_off.bypass == {"mult": 0, "add": 0}


def test_profile_json_shape(clear_ctx):
    _, prof = execute(_one_op((2, 2), "Negate"), {"x": np.ones((2, 2))}, clear_ctx)
    d = prof.to_dict()
    assert set(d) == {"wall_ms", "bypass", "ct_ops"}
    assert set(d["ct_ops"]) == {"add", "mul_ct", "mul_pt", "negate"} and d["ct_ops"]["negate"] == 2  # one payload per non-batch element


def test_missing_input_rejected(clear_ctx):
    from hegraph.graph import GraphError

    with pytest.raises(GraphError, match="x"):
        execute(_one_op((2, 2), "Negate"), {}, clear_ctx)


def small_cryptonets(seed=0):
    """CryptoNets layer pattern at toy width: conv, square, dot, square, dot."""
    rng = np.random.default_rng(seed)
    nodes = [
        Node("x", "Parameter", (), {"shape": [1, 1, 6, 6]}),
        Node("w1", "Constant", (), {}, rng.uniform(-0.5, 0.5, (2, 1, 3, 3))),
        Node("conv1", "Convolution", ("x", "w1"), {"strides": [2, 2]}),
        Node("act1", "PolyAct", ("conv1",), {"coeffs": [1.0, 0.0, 0.0]}),
        Node("flat", "Reshape", ("act1",), {"shape": [1, 8]}),
        Node("w2", "Constant", (), {}, rng.uniform(-0.5, 0.5, (8, 4))),
        Node("fc1", "Dot", ("flat", "w2")),
        Node("act2", "PolyAct", ("fc1",), {"coeffs": [1.0, 0.0, 0.0]}),
        Node("w3", "Constant", (), {}, rng.uniform(-0.5, 0.5, (4, 2))),
        Node("fc2", "Dot", ("act2", "w3")),
    ]
    return Graph("small_cryptonets", nodes, ["fc2"])


def test_paradigm_ordering_small():
    ctx = make_context("ckks-ref", 1024, [40] + [30] * 7, 30, 0)
    be = make_backend(ctx, seed=2)
    g = small_cryptonets()
    x = inputs_for(g, 4, seed=1)
    ref = evaluate(g, x)["fc2"]
    times = {}
    for p in ("encrypted-data", "encrypted-model", "encrypted-both"):
        best = None
        for _ in range(2):
            out, prof = execute(g, x, ctx, paradigm=p, backend=be, threads=1)
            best = prof.total_ms if best is None else min(best, prof.total_ms)
        times[p] = best
        assert np.max(np.abs(out["fc2"] - ref)) < 1e-2
    assert times["encrypted-data"] <= 1.1 * times["encrypted-model"]
    assert times["encrypted-model"] <= 1.1 * times["encrypted-both"]
