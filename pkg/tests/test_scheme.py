import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hegraph.backends import make_backend
from hegraph.ckks.encoding import encoder
from hegraph.ckks.scheme import crt_centered
from hegraph.he.backend import KeyMismatchError, LevelExhaustedError, ScaleMismatchError
from hegraph.he.context import ContextError, CryptoContext, make_context


def enc(be, v, level=None):
    return be.encrypt(be.encode(v, level=level))


def dec(be, ct, n):
    return be.decrypt_values(ct)[:n]


@given(st.integers(0, 2**32 - 1))
def test_encoder_roundtrip(seed):
    rng = np.random.default_rng(seed)
    e = encoder(64)
    v = rng.uniform(-10, 10, 32)
    coeffs = e.encode(v, 2.0**30)
    assert np.max(np.abs(e.decode(coeffs, 2.0**30) - v)) < 1e-6


def test_encoder_is_ring_homomorphism_on_slots():
    e = encoder(16)
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8)
    ca, cb = e.embed_inverse(a)[0], e.embed_inverse(b)[0]
    # negacyclic product of the coefficient vectors multiplies slots
    prod = np.zeros(16)
    for i in range(16):
        for j in range(16):
            k = i + j
            prod[k % 16] += ca[i] * cb[j] * (-1 if k >= 16 else 1)
    assert np.allclose(e.embed(prod)[0], a * b)


def test_context_validation():
    ctx = make_context("ckks-ref", 8192, [30] * 7, 30, 128)
    assert (ctx.slot_count, ctx.level_budget) == (4096, 6)
    assert CryptoContext.from_json(ctx.to_json()) == ctx
    with pytest.raises(ContextError):
        make_context("ckks-ref", 100, [30] * 3, 30)
    with pytest.raises(ContextError):
        make_context("ckks-ref", 1024, [30], 30)
    with pytest.raises(ContextError):
        make_context("bfv", 1024, [30, 30], 30)


def test_crt_centered_recovers_signed_values():
    primes = [1073479681, 1073184769, 1072496641]
    vals = np.array([0, 1, -1, 2**80, -(2**80) + 12345])
    residues = np.array([[int(v) % q for v in vals] for q in primes], dtype=np.int64)
    got = crt_centered(residues, primes)
    assert np.allclose(got, vals.astype(float), rtol=1e-12)


def test_encrypt_decrypt(small_backend):
    v = np.linspace(-10, 10, 100)
    assert np.max(np.abs(dec(small_backend, enc(small_backend, v), 100) - v)) < 1e-4


def test_add_sub_negate(small_backend):
    be = small_backend
    a, b = np.arange(8.0), np.arange(8.0)[::-1] * 0.5
    ca, cb = enc(be, a), enc(be, b)
    assert np.allclose(dec(be, be.add(ca, cb), 8), a + b, atol=1e-4)
    assert np.allclose(dec(be, be.subtract(ca, cb), 8), a - b, atol=1e-4)
    assert np.allclose(dec(be, be.negate(ca), 8), -a, atol=1e-4)
    pb = be.encode(b)
    assert np.allclose(dec(be, be.add(ca, pb), 8), a + b, atol=1e-4)
    assert np.allclose(dec(be, be.subtract(pb, ca), 8), b - a, atol=1e-4)


def test_multiply_consumes_one_level(small_backend):
    be = small_backend
    a = np.linspace(-2, 2, 16)
    ca = enc(be, a)
    top = ca.level
    sq = be.multiply(ca, ca)
    assert sq.level == top - 1 and sq.size == 2
    assert np.allclose(dec(be, sq, 16), a * a, atol=1e-3)
    w = be.encode(np.full(16, 0.5))
    prod = be.multiply(sq, w, target_scale=sq.scale)
    assert prod.level == top - 2 and prod.scale == sq.scale
    assert np.allclose(dec(be, prod, 16), 0.5 * a * a, atol=1e-3)


def test_depth_exhaustion(small_backend):
    be = small_backend
    ct = enc(be, [1.1])
    while ct.level > 0:
        ct = be.multiply(ct, ct)
    assert abs(dec(be, ct, 1)[0] - 1.1 ** (2**3)) < 1e-2
    with pytest.raises(LevelExhaustedError):
        be.multiply(ct, ct)


def test_mod_switch_keeps_value(small_backend):
    be = small_backend
    ct = enc(be, [3.0, -2.0])
    low = be.mod_switch(ct, 1)
    assert low.level == 1
    assert np.allclose(dec(be, low, 2), [3.0, -2.0], atol=1e-4)


def test_scale_mismatch_rejected(small_backend):
    be = small_backend
    a = enc(be, [1.0])
    b = be.encrypt(be.encode([1.0], scale=2.0**25))
    with pytest.raises(ScaleMismatchError):
        be.add(a, b)


def test_fresh_keys_differ_and_seeded_keys_repeat(small_ctx):
    k1 = make_backend(small_ctx, seed=3).keys
    k2 = make_backend(small_ctx, seed=3).keys
    k3 = make_backend(small_ctx).keys
    assert np.array_equal(k1.secret_key, k2.secret_key)
    assert not np.array_equal(k1.public_key, k3.public_key)


def test_foreign_keys_rejected(small_ctx):
    other = make_context("ckks-ref", 1024, [40, 30, 30], 30)
    keys = make_backend(other, seed=1).keys
    with pytest.raises(KeyMismatchError):
        make_backend(small_ctx, keys=keys)


def test_encrypt_zero_at_level(small_backend):
    z = small_backend.encrypt_zero_at(1, 2.0**30)
    assert z.level == 1
    assert np.max(np.abs(dec(small_backend, z, 8))) < 1e-4


def test_public_key_encryption_path(small_backend):
    be = small_backend
    v = np.linspace(-10, 10, 64)
    pt = be.encode(v)
    ct = be.scheme.encrypt(pt, be.keys, be.rng(), symmetric=False)
    assert ct.noise == be.scheme.fresh_noise > be.scheme.fresh_noise_sk
    assert np.max(np.abs(be.decrypt_values(ct)[:64] - v)) < 1e-4
    sym = be.encrypt(pt)
    assert not np.array_equal(sym.polys, ct.polys)


def test_public_only_keys_encrypt_with_public_key(small_backend):
    from dataclasses import replace

    pub = replace(small_backend.keys, secret_key=None)
    ct = small_backend.scheme.encrypt(small_backend.encode([1.0]), pub, small_backend.rng())
    assert ct.noise == small_backend.scheme.fresh_noise
    assert abs(small_backend.decrypt_values(ct)[0] - 1.0) < 1e-4


def test_two_encryptions_differ(small_backend):
    pt = small_backend.encode([1.0, 2.0])
    assert not np.array_equal(small_backend.encrypt(pt).polys, small_backend.encrypt(pt).polys)
