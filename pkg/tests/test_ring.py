import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hegraph.ckks.ntt import find_ntt_primes, mulmod, ntt_tables
from hegraph.ckks.ring import LevelMismatchError, RingElement, negacyclic_schoolbook, ring_add, ring_mul, ring_neg, ring_sub

PRIMES8 = tuple(find_ntt_primes([30, 30], 8))
PRIMES64 = tuple(find_ntt_primes([50, 30, 30], 64))


def random_element(rng, primes, n):
    return RingElement(np.stack([rng.integers(0, q, n, dtype=np.int64) for q in primes]), primes)


def test_primes_are_ntt_friendly():
    for bits in ([30] * 7, [50, 30, 30], [20, 20]):
        ps = find_ntt_primes(bits, 8192)
        assert len(set(ps)) == len(ps)
        for q, b in zip(ps, bits):
            assert (q - 1) % (2 * 8192) == 0
            assert q.bit_length() == b


def test_wraparound_gives_minus_one():
    n = 8
    x = RingElement.from_ints([0] * (n - 1) + [1], PRIMES8)
    y = RingElement.from_ints([0, 1] + [0] * (n - 2), PRIMES8)
    assert ring_mul(x, y) == RingElement.from_ints([-1] + [0] * (n - 1), PRIMES8)


@given(st.integers(0, 2**32 - 1))
def test_ntt_product_matches_schoolbook(seed):
    rng = np.random.default_rng(seed)
    for primes, n in ((PRIMES8, 8), (PRIMES64, 64)):
        a, b = random_element(rng, primes, n), random_element(rng, primes, n)
        assert ring_mul(a, b) == ring_mul(a, b, schoolbook=True)


@given(st.integers(0, 2**32 - 1))
def test_ring_axioms(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_element(rng, PRIMES64, 64) for _ in range(3))
    assert ring_add(a, b) == ring_add(b, a)
    assert ring_mul(a, b) == ring_mul(b, a)
    assert ring_mul(a, ring_add(b, c)) == ring_add(ring_mul(a, b), ring_mul(a, c))
    assert ring_sub(a, b) == ring_add(a, ring_neg(b))
    assert ring_add(a, ring_neg(a)) == RingElement(np.zeros_like(a.coeffs), a.primes)


def test_ntt_roundtrip():
    rng = np.random.default_rng(0)
    primes = tuple(find_ntt_primes([30] * 3, 1024))
    t = ntt_tables(primes, 1024)
    a = np.stack([rng.integers(0, q, 1024, dtype=np.int64) for q in primes])
    assert np.array_equal(t.inverse(t.forward(a)), a)
    # broadcast (non-contiguous) inputs are handled
    b = np.broadcast_to(a, (2,) + a.shape)
    assert np.array_equal(t.inverse(t.forward(b))[1], a)


@given(st.integers(0, 2**32 - 1))
def test_mulmod_exact(seed):
    rng = np.random.default_rng(seed)
    q = PRIMES64[0]
    a, b = rng.integers(0, q, 50, dtype=np.int64), rng.integers(0, q, 50, dtype=np.int64)
    want = np.array([int(x) * int(y) % q for x, y in zip(a, b)], dtype=np.int64)
    assert np.array_equal(mulmod(a, b, q), want)


def test_level_mismatch_rejected():
    rng = np.random.default_rng(0)
    a = random_element(rng, PRIMES64, 64)
    b = random_element(rng, PRIMES64[:2], 64)
    with pytest.raises(LevelMismatchError):
        ring_add(a, b)


def test_schoolbook_small_case():
    # (1 + x)(1 + x) = 1 + 2x + x^2 in degree 4
    q = 97
    out = negacyclic_schoolbook(np.array([1, 1, 0, 0]), np.array([1, 1, 0, 0]), q)
    assert out.tolist() == [1, 2, 1, 0]
    # x^3 * x^3 = x^6 = -x^2
    out = negacyclic_schoolbook(np.array([0, 0, 0, 1]), np.array([0, 0, 0, 1]), q)
    assert out.tolist() == [0, 0, q - 1, 0]
