"""Tensor kernels over packed payload arrays.

Each kernel maps input :class:`HETensor` values to an output one using only
:class:`Evaluator` primitives. Dot and Convolution lower to a
:class:`LinearPlan`; a backend may run that plan itself, otherwise every
output element is accumulated left to right in a fixed order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..graph import _ints, conv_geometry
from ..he.backend import LinearPlan
from ..he.packing import HETensor, object_array
from ..he.payload import Plaintext, SpecialValue
from ..reference import bn_affine, pool_divisors
from .evaluator import Evaluator, plain


def parallel_map(fn, items, threads):
    if threads is None or threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def normalize(ev: Evaluator, t: HETensor) -> HETensor:
    """Lower every ciphertext element to the tensor's lowest level."""
    items = t.flat()
    cts = [x for x in items if ev.is_ct(x)]
    if not cts:
        return t
    level = min(x.level for x in cts)
    if all(x.level == level for x in cts):
        return t
    items = [ev.lower_to(x, level) if ev.is_ct(x) else x for x in items]
    return HETensor(object_array(items, t.rest), t.batch)


def _out_batch(*ts):
    for t in ts:
        if t.batched:
            return t.batch
    return None


# element-wise


def elementwise(ev: Evaluator, op: str, x: HETensor, y: HETensor, threads=None) -> HETensor:
    fn = {"Add": ev.add, "Subtract": ev.sub, "Multiply": ev.mul}[op]
    a, b = x.flat(), y.flat()
    out = parallel_map(lambda ij: fn(a[ij], b[ij]), range(len(a)), threads)
    rest = x.rest if x.batched or not y.batched else y.rest
    return HETensor(object_array(out, rest), _out_batch(x, y))


def negate(ev: Evaluator, x: HETensor) -> HETensor:
    return HETensor(object_array([ev.neg(e) for e in x.flat()], x.rest), x.batch)


def poly_act_element(ev: Evaluator, x, a: float, b: float, c: float):
    """``a x^2 + b x + c`` for one payload.

    Levels: one for the square, one more when ``|a|`` is not 0 or 1, and for
    ``a = 0`` one only when ``b`` is not 0 or +-1.
    """
    if not ev.is_ct(x):
        v = x.values
        return Plaintext(a * v * v + b * v + c, broadcast=x.broadcast)
    if a == 0:
        if b == 1:
            y = x
        elif b == -1:
            y = ev.neg(x)
        elif b == 0:
            y = ev.fresh_zero(x.level, x.scale)
        else:
            y = ev.mul(x, plain([b], True), allow_bypass=False)
    else:
        if abs(a) == 1:
            y = ev.mul(x, x)
            if a == -1:
                y = ev.neg(y)
        else:
            ax = ev.mul(x, plain([a], True), allow_bypass=False)
            y = ev.mul(ax, ev.lower_to(x, ax.level))
        if b != 0:
            # b*x encoded straight at the square's scale so the two can be added
            xs = ev.lower_to(x, y.level + 1)
            y = ev.add(y, ev.mul(xs, plain([b], True), target_scale=y.scale, allow_bypass=False))
    if c != 0:
        y = ev.add(y, plain([c], True))
    return y


def poly_act(ev: Evaluator, x: HETensor, coeffs, threads=None) -> HETensor:
    a, b, c = (float(v) for v in coeffs)
    items = x.flat()
    out = parallel_map(lambda e: poly_act_element(ev, e, a, b, c), items, threads)
    return HETensor(object_array(out, x.rest), x.batch)


# linear maps


def dot_plan(x_rest: tuple, w_shape: tuple) -> LinearPlan:
    """Plan for contracting the last axis of ``x`` with the first of ``w``."""
    k = x_rest[-1]
    lead = int(np.prod(x_rest[:-1], dtype=np.int64))
    m = int(np.prod(w_shape[1:], dtype=np.int64))
    i, j, t = np.meshgrid(np.arange(lead), np.arange(m), np.arange(k), indexing="ij")
    return LinearPlan(
        out_count=lead * m,
        in_count=lead * k,
        out_idx=(i * m + j).ravel(),
        in_idx=(i * k + t).ravel(),
        w_idx=(t * m + j).ravel(),
    )


def conv_plan(x_rest: tuple, w_shape: tuple, attrs) -> tuple:
    """Plan and output rest-shape for a direct sliding-window convolution.

    Taps falling into zero padding are left out of the plan.
    """
    pre = x_rest[:-3]
    C, H, W = x_rest[-3:]
    F, _, kh, kw = w_shape
    strides, pb, _, (oh, ow) = conv_geometry(attrs, (H, W), (kh, kw))
    n_pre = int(np.prod(pre, dtype=np.int64))
    p, f, y, x, c, i, j = np.meshgrid(
        np.arange(n_pre), np.arange(F), np.arange(oh), np.arange(ow),
        np.arange(C), np.arange(kh), np.arange(kw), indexing="ij",
    )
    iy = y * strides[0] + i - pb[0]
    ix = x * strides[1] + j - pb[1]
    ok = (iy >= 0) & (iy < H) & (ix >= 0) & (ix < W)
    out_idx = ((p * F + f) * oh + y) * ow + x
    in_idx = ((p * C + c) * H + iy) * W + ix
    w_idx = ((f * C + c) * kh + i) * kw + j
    plan = LinearPlan(
        out_count=n_pre * F * oh * ow,
        in_count=n_pre * C * H * W,
        out_idx=out_idx[ok],
        in_idx=in_idx[ok],
        w_idx=w_idx[ok],
    )
    return plan, pre + (F, oh, ow)


class _Zero:
    """A product known to be an encryption of zero, not yet materialized."""

    def __init__(self, level, scale):
        self.level, self.scale = level, scale


def _accumulate(ev: Evaluator, terms):
    """Left-to-right sum honouring fresh-zero bypass for additions."""
    acc = None
    for t in terms:
        if acc is None:
            acc = t
            continue
        if isinstance(t, _Zero) or isinstance(acc, _Zero):
            if ev.bypass.optimized_addition:
                ev.count("bypass_add")
                if isinstance(acc, _Zero):
                    acc = t
                continue
            acc = _materialize(ev, acc)
            t = _materialize(ev, t)
        acc = ev.add(acc, t)
    return _materialize(ev, acc)


def _materialize(ev, x):
    if isinstance(x, _Zero):
        return ev.fresh_zero(x.level, x.scale)
    return x


def _linear_output(ev: Evaluator, inputs, weights, in_idx, w_idx):
    terms = []
    for i, w in zip(in_idx, w_idx):
        x, wt = inputs[i], weights[w]
        if (
            ev.bypass.optimized_multiply
            and ev.is_ct(x)
            and not ev.is_ct(wt)
            and ev.special(wt) is SpecialValue.ZERO
        ):
            ev.count("bypass_mult")
            terms.append(_Zero(x.level, x.scale))
        else:
            terms.append(ev.mul(x, wt))
    return _accumulate(ev, terms)


def run_linear(ev: Evaluator, inputs: list, weights: list, plan: LinearPlan, threads=None, use_override=True):
    if not plan.out_idx.size:
        raise ValueError("linear map without terms")
    if use_override:
        res = ev.backend.kernel_linear(inputs, weights, plan, ev.bypass)
        if res is not NotImplemented:
            outputs, counts = res
            ev.merge_counts(counts)
            return outputs
    groups = list(plan.groups())

    def one(g):
        _, sl = g
        return _linear_output(ev, inputs, weights, plan.in_idx[sl], plan.w_idx[sl])

    return parallel_map(one, groups, threads)


def dot(ev: Evaluator, x: HETensor, w: HETensor, threads=None, use_override=True) -> HETensor:
    plan = dot_plan(x.rest, w.rest)
    out = run_linear(ev, x.flat(), w.flat(), plan, threads, use_override)
    rest = x.rest[:-1] + w.rest[1:]
    return HETensor(object_array(out, rest), _out_batch(x, w))


def convolution(ev: Evaluator, x: HETensor, w: HETensor, attrs, threads=None, use_override=True) -> HETensor:
    plan, rest = conv_plan(x.rest, w.rest, attrs)
    out = run_linear(ev, x.flat(), w.flat(), plan, threads, use_override)
    return HETensor(object_array(out, rest), x.batch)


# pooling and normalization


def _window_sums(ev: Evaluator, x: HETensor, attrs, threads=None):
    win = _ints(attrs["window"], 2)
    rest = x.rest
    C = int(np.prod(rest[:-2], dtype=np.int64))
    H, W = rest[-2:]
    strides, pb, _, (oh, ow) = conv_geometry(attrs, (H, W), win)
    items = x.flat()
    jobs = []
    for c in range(C):
        for oy in range(oh):
            for ox in range(ow):
                idx = []
                for i in range(win[0]):
                    for j in range(win[1]):
                        iy, ix = oy * strides[0] + i - pb[0], ox * strides[1] + j - pb[1]
                        if 0 <= iy < H and 0 <= ix < W:
                            idx.append((c * H + iy) * W + ix)
                jobs.append(idx)

    def one(idx):
        return _accumulate(ev, [items[k] for k in idx])

    sums = parallel_map(one, jobs, threads)
    return sums, rest[:-2] + (oh, ow)


def scaled_mean_pool(ev: Evaluator, x: HETensor, attrs, threads=None) -> HETensor:
    sums, rest = _window_sums(ev, x, attrs, threads)
    return HETensor(object_array(sums, rest), x.batch)


def avg_pool(ev: Evaluator, x: HETensor, attrs, threads=None) -> HETensor:
    sums, rest = _window_sums(ev, x, attrs, threads)
    div = pool_divisors(attrs, x.rest[-2:]).ravel()
    n = len(div)
    out = parallel_map(lambda k: ev.mul(sums[k], plain([1.0 / div[k % n]], True)), range(len(sums)), threads)
    return HETensor(object_array(out, rest), x.batch)


def batch_norm(ev: Evaluator, x: HETensor, stats, eps: float, encrypt_params=False, threads=None) -> HETensor:
    """``x * scale_c + shift_c`` per channel (axis 1 of the logical tensor).

    ``stats`` are the numeric (gamma, beta, mean, variance) vectors. With
    ``encrypt_params`` the per-channel affine coefficients are encrypted.
    """
    scale, shift = bn_affine(*stats, eps)
    rest = x.rest
    ch_axis = 0 if x.batched else 1
    per_channel = int(np.prod(rest[ch_axis + 1 :], dtype=np.int64))
    n_ch = rest[ch_axis]
    items = x.flat()

    def coeff(v, like):
        p = plain([v], True)
        if encrypt_params and ev.is_ct(like):
            return ev.lift(p, ev.backend.top_level, ev.backend.context.scale)
        return p

    cache = {}

    def params(ch, like):
        if ch not in cache:
            cache[ch] = (coeff(scale[ch], like), coeff(shift[ch], like))
        return cache[ch]

    def one(k):
        ch = (k // per_channel) % n_ch
        s, b = params(ch, items[k])
        y = ev.mul(items[k], s)
        if ev.is_ct(b) and ev.is_ct(y):
            b = ev.lower_to(b, y.level)
        return ev.add(y, b)

    # build coefficient payloads up front so worker threads only read the cache
    for k in range(0, len(items), per_channel):
        params((k // per_channel) % n_ch, items[k])
    out = parallel_map(one, range(len(items)), threads)
    return HETensor(object_array(out, rest), x.batch)


# rearrangement and reduction


def _rest_axis(t: HETensor, axis: int) -> int:
    return axis - 1 if t.batched else axis


def reshape(x: HETensor, shape) -> HETensor:
    shape = list(shape)
    rest = tuple(shape[1:]) if x.batched else tuple(shape)
    return HETensor(x.elements.reshape(rest), x.batch)


def broadcast(x: HETensor, shape, axes) -> HETensor:
    shape = list(shape)
    axes = _ints(axes)
    rest = tuple(shape[1:]) if x.batched else tuple(shape)
    raxes = tuple(_rest_axis(x, a) for a in axes)
    e = np.expand_dims(x.elements, raxes) if raxes else x.elements
    return HETensor(np.broadcast_to(e, rest).copy(), x.batch)


def reverse(x: HETensor, axes) -> HETensor:
    raxes = tuple(_rest_axis(x, a) for a in _ints(axes))
    return HETensor(np.flip(x.elements, axis=raxes).copy(), x.batch)


def slice_(x: HETensor, lower, upper, strides=None) -> HETensor:
    lo, hi = _ints(lower), _ints(upper)
    st = _ints(strides if strides is not None else 1, len(lo))
    idx = [slice(l, h, s) for l, h, s in zip(lo, hi, st)]
    if x.batched:
        idx = idx[1:]
    return HETensor(x.elements[tuple(idx)].copy(), x.batch)


def _lift_like(ev: Evaluator, items, ref_items):
    """Encrypt plaintext items when the tensor also holds ciphertexts."""
    cts = [e for e in ref_items if ev.is_ct(e)]
    if not cts:
        return items
    level = min(e.level for e in cts)
    scale = cts[0].scale
    return [e if ev.is_ct(e) else ev.lift(e, level, scale) for e in items]


def concat(ev: Evaluator, xs, axis: int) -> HETensor:
    ref = xs[0]
    ax = _rest_axis(ref, axis)
    arr = np.concatenate([x.elements for x in xs], axis=ax)
    items = _lift_like(ev, list(arr.ravel()), list(arr.ravel()))
    return HETensor(object_array(items, arr.shape), ref.batch)


def pad(ev: Evaluator, x: HETensor, pad_below, pad_above, value=0.0) -> HETensor:
    pb, pa = _ints(pad_below), _ints(pad_above)
    if x.batched:
        pb, pa = pb[1:], pa[1:]
    items = x.flat()
    filler = plain([value], True)
    cts = [e for e in items if ev.is_ct(e)]
    if cts:
        filler = ev.lift(filler, min(e.level for e in cts), cts[0].scale)
    out = np.empty(tuple(d + lo + hi for d, lo, hi in zip(x.rest, pb, pa)), dtype=object)
    out.fill(filler)
    out[tuple(slice(lo, lo + d) for lo, d in zip(pb, x.rest))] = x.elements
    return HETensor(out, x.batch)


def sum_(ev: Evaluator, x: HETensor, axes, threads=None) -> HETensor:
    raxes = sorted(_rest_axis(x, a) for a in _ints(axes))
    keep = [i for i in range(len(x.rest)) if i not in raxes]
    moved = np.transpose(x.elements, keep + raxes)
    out_rest = tuple(x.rest[i] for i in keep)
    groups = moved.reshape(int(np.prod(out_rest, dtype=np.int64)) if out_rest else 1, -1)
    sums = parallel_map(lambda row: _accumulate(ev, list(row)), list(groups), threads)
    if not out_rest and not x.batched:
        out_rest = (1,)
    return HETensor(object_array(sums, out_rest), x.batch)
