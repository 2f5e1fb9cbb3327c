"""Polynomials in ``Z_Q[x]/(x^N + 1)`` held as one residue row per prime."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ntt import mulmod, ntt_tables


class LevelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class RingElement:
    """Coefficient-form ring element; ``coeffs[i]`` is reduced mod ``primes[i]``."""

    coeffs: np.ndarray
    primes: tuple

    def __post_init__(self):
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != len(self.primes):
            raise ValueError("coeffs must have one row per prime")

    @property
    def n(self) -> int:
        return self.coeffs.shape[1]

    @property
    def level(self) -> int:
        return len(self.primes) - 1

    @classmethod
    def from_ints(cls, values, primes):
        """Reduce signed integer coefficients into every residue."""
        primes = tuple(int(q) for q in primes)
        vals = np.asarray(values, dtype=object)
        rows = [np.array([int(v) % q for v in vals], dtype=np.int64) for q in primes]
        return cls(np.stack(rows), primes)

    def __add__(self, other):
        return ring_add(self, other)

    def __sub__(self, other):
        return ring_sub(self, other)

    def __neg__(self):
        return ring_neg(self)

    def __mul__(self, other):
        return ring_mul(self, other)

    def __eq__(self, other):
        return (
            isinstance(other, RingElement)
            and self.primes == other.primes
            and np.array_equal(self.coeffs, other.coeffs)
        )

    __hash__ = None


def _check(a: RingElement, b: RingElement):
    if a.primes != b.primes or a.n != b.n:
        raise LevelMismatchError(f"ring elements at levels {a.level} and {b.level}")


def _q(a: RingElement):
    return np.array(a.primes, dtype=np.int64)[:, None]


def ring_add(a: RingElement, b: RingElement) -> RingElement:
    _check(a, b)
    return RingElement(add_mod(a.coeffs, b.coeffs, _q(a)), a.primes)


def ring_sub(a: RingElement, b: RingElement) -> RingElement:
    _check(a, b)
    return RingElement(sub_mod(a.coeffs, b.coeffs, _q(a)), a.primes)


def ring_neg(a: RingElement) -> RingElement:
    return RingElement(neg_mod(a.coeffs, _q(a)), a.primes)


def ring_mul(a: RingElement, b: RingElement, schoolbook: bool = False) -> RingElement:
    """Negacyclic product; ``schoolbook=True`` takes the O(N^2) route."""
    _check(a, b)
    if schoolbook:
        rows = [negacyclic_schoolbook(x, y, q) for x, y, q in zip(a.coeffs, b.coeffs, a.primes)]
        return RingElement(np.stack(rows), a.primes)
    tables = ntt_tables(a.primes, a.n)
    prod = mulmod(tables.forward(a.coeffs), tables.forward(b.coeffs), tables.q_col)
    return RingElement(tables.inverse(prod), a.primes)


def negacyclic_schoolbook(x, y, q: int) -> np.ndarray:
    n = len(x)
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        # x_i * x^i * y, with terms that wrap past x^N negated
        prod = mulmod(np.int64(x[i]), y, q)
        out[i:] = (out[i:] + prod[: n - i]) % q
        out[:i] = (out[:i] - prod[n - i :]) % q
    return out


def add_mod(a, b, q):
    s = a + b
    return s - q * (s >= q)


def sub_mod(a, b, q):
    d = a - b
    return d + q * (d < 0)


def neg_mod(a, q):
    return np.where(a == 0, 0, q - a)
