"""Residue-number-system modular arithmetic and the negacyclic NTT.

All residue arrays are ``int64`` with values in ``[0, q)``. The leading axes are
free; the last two axes are ``(residue, coefficient)`` so one call transforms
every residue of many polynomials at once.
"""

from __future__ import annotations

from functools import lru_cache

import numba as nb
import numpy as np
from sympy import isprime, primitive_root

# products of two residues below this bound fit in int64 without help
_SMALL_MODULUS_BITS = 31
MAX_MODULUS_BITS = 50


def find_ntt_primes(bit_sizes, poly_degree):
    """Distinct primes ``q`` with ``q.bit_length() == b`` and ``q = 1 mod 2N``.

    Primes of equal size are taken downwards from ``2**b`` so that repeated
    30-bit moduli stay as close to ``2**30`` as possible.
    """
    step = 2 * poly_degree
    used = set()
    primes = []
    for bits in bit_sizes:
        if bits > MAX_MODULUS_BITS:
            raise ValueError(f"moduli above {MAX_MODULUS_BITS} bits are not supported, got {bits}")
        if (1 << (bits - 1)) <= step:
            raise ValueError(f"no {bits}-bit prime congruent to 1 mod {step}")
        cand = ((1 << bits) - 1) // step * step + 1
        while cand >= (1 << (bits - 1)):
            if cand not in used and isprime(cand):
                break
            cand -= step
        else:
            raise ValueError(f"no {bits}-bit prime congruent to 1 mod {step} left")
        used.add(cand)
        primes.append(cand)
    return primes


def mulmod(a, b, q):
    """Elementwise ``a * b mod q`` for residues below ``q``.

    Moduli up to 31 bits use plain int64 products. Larger moduli (up to 50 bits)
    estimate the quotient in float64 and correct the wrapped int64 remainder.
    """
    q = np.asarray(q, dtype=np.int64)
    if int(q.max()) < (1 << _SMALL_MODULUS_BITS):
        return (a * b) % q
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    quot = np.floor(a.astype(np.float64) * b.astype(np.float64) / q.astype(np.float64))
    r = a * b - quot.astype(np.int64) * q
    r = np.where(r < 0, r + q, r)
    return np.where(r >= q, r - q, r)


def _bit_reverse(n_bits):
    idx = np.arange(1 << n_bits)
    rev = np.zeros_like(idx)
    for b in range(n_bits):
        rev |= ((idx >> b) & 1) << (n_bits - 1 - b)
    return rev


class NTTTables:
    """Twiddle tables for the negacyclic NTT over a list of primes."""

    def __init__(self, primes, n):
        self.n = n
        self.log_n = n.bit_length() - 1
        self.q = np.array(primes, dtype=np.int64)
        self.q_col = self.q[:, None]
        rev = _bit_reverse(self.log_n)
        psi_rev = np.empty((len(primes), n), dtype=np.int64)
        psi_inv_rev = np.empty((len(primes), n), dtype=np.int64)
        n_inv = np.empty(len(primes), dtype=np.int64)
        for i, q in enumerate(primes):
            g = primitive_root(q)
            psi = pow(g, (q - 1) // (2 * n), q)
            psi_inv = pow(psi, q - 2, q)
            pw = _powers(psi, n, q)
            pw_inv = _powers(psi_inv, n, q)
            psi_rev[i] = pw[rev]
            psi_inv_rev[i] = pw_inv[rev]
            n_inv[i] = pow(n, q - 2, q)
        self.psi_rev = psi_rev
        self.psi_inv_rev = psi_inv_rev
        self.n_inv = n_inv[:, None]
        # w / q per twiddle, so butterflies estimate quotients without dividing
        self.psi_rev_ratio = psi_rev / self.q_col
        self.psi_inv_rev_ratio = psi_inv_rev / self.q_col
        self.n_inv_ratio = n_inv / self.q

    def forward(self, a, count=None):
        """Negacyclic NTT of every ``(residue, coefficient)`` row of ``a``.

        Output is in bit-reversed order; only pointwise products and
        :meth:`inverse` ever look at it.
        """
        return self._run(a, count, _ntt_rows, self.psi_rev, self.psi_rev_ratio)

    def inverse(self, a, count=None):
        return self._run(a, count, _intt_rows, self.psi_inv_rev, self.psi_inv_rev_ratio)

    def _run(self, a, count, kernel, table, ratio):
        count = a.shape[-2] if count is None else count
        out = np.array(a, dtype=np.int64, order="C", copy=True)
        rows = out.reshape(-1, self.n)
        ridx = np.tile(np.arange(count, dtype=np.int64), rows.shape[0] // count)
        kernel(rows, self.q, table, ratio, self.n_inv[:, 0], self.n_inv_ratio, ridx)
        return out


@nb.njit(cache=True, nogil=True, inline="always")
def _mulmod_ratio(a, w, w_ratio, q):
    """``a * w mod q`` given ``w_ratio = w / q``; exact for q below 2^50."""
    quot = np.int64(np.float64(a) * w_ratio)
    r = a * w - quot * q  # true value lies in (-q, 2q), so wraparound cancels
    if r < 0:
        r += q
    elif r >= q:
        r -= q
    return r


@nb.njit(cache=True, nogil=True)
def _ntt_rows(a, qs, psi_rev, psi_ratio, n_inv, n_inv_ratio, ridx):
    rows, n = a.shape
    for r in range(rows):
        k = ridx[r]
        q = qs[k]
        t = n
        m = 1
        while m < n:
            t //= 2
            for i in range(m):
                j1 = 2 * i * t
                s = psi_rev[k, m + i]
                sr = psi_ratio[k, m + i]
                for j in range(j1, j1 + t):
                    u = a[r, j]
                    v = _mulmod_ratio(a[r, j + t], s, sr, q)
                    x = u + v
                    if x >= q:
                        x -= q
                    y = u - v
                    if y < 0:
                        y += q
                    a[r, j] = x
                    a[r, j + t] = y
            m *= 2


@nb.njit(cache=True, nogil=True)
def _intt_rows(a, qs, psi_inv_rev, psi_ratio, n_inv, n_inv_ratio, ridx):
    rows, n = a.shape
    for r in range(rows):
        k = ridx[r]
        q = qs[k]
        t = 1
        m = n
        while m > 1:
            h = m // 2
            for i in range(h):
                j1 = 2 * i * t
                s = psi_inv_rev[k, h + i]
                sr = psi_ratio[k, h + i]
                for j in range(j1, j1 + t):
                    u = a[r, j]
                    v = a[r, j + t]
                    x = u + v
                    if x >= q:
                        x -= q
                    y = u - v
                    if y < 0:
                        y += q
                    a[r, j] = x
                    a[r, j + t] = _mulmod_ratio(y, s, sr, q)
            t *= 2
            m = h
        ni = n_inv[k]
        nr = n_inv_ratio[k]
        for j in range(n):
            a[r, j] = _mulmod_ratio(a[r, j], ni, nr, q)


def _powers(base, n, q):
    out = np.empty(n, dtype=np.int64)
    acc = 1
    for i in range(n):
        out[i] = acc
        acc = acc * base % q
    return out


@lru_cache(maxsize=32)
def ntt_tables(primes: tuple, n: int) -> NTTTables:
    return NTTTables(list(primes), n)
