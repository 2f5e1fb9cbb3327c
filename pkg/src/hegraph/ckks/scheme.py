"""Reference leveled CKKS over ``Z_Q[x]/(x^N + 1)`` in RNS form.

Ciphertexts stay in coefficient form between operations. Products go through
the NTT; rescaling and level switching work directly on coefficients.
Relinearization decomposes each residue of the degree-2 component into
base-2^15 digits. Because the key's message part for residue ``i`` lives only
in residue ``i`` (it is ``s^2 * 2^(15k)`` times the CRT basis element), a key
generated over the full chain is valid at every lower level after truncation.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..he.backend import HEError, KeyMismatchError, LevelExhaustedError, ScaleMismatchError
from ..he.context import CryptoContext
from ..he.payload import Ciphertext, KeySet, Plaintext
from .encoding import encoder
from .ntt import mulmod, ntt_tables
from .ring import add_mod, neg_mod, sub_mod

logger = logging.getLogger(__name__)

SIGMA = 3.2
DIGIT_BITS = 15
_DIGIT_MASK = (1 << DIGIT_BITS) - 1


def scales_match(a: float, b: float) -> bool:
    return abs(a - b) <= math.ulp(max(abs(a), abs(b)))


class CKKS:
    """Scheme operations for one context. Stateless apart from tables."""

    def __init__(self, context: CryptoContext):
        self.context = context
        self.n = context.poly_degree
        self.primes = tuple(int(q) for q in context.coeff_moduli)
        self.q = np.array(self.primes, dtype=np.int64)
        self.tables = ntt_tables(self.primes, self.n)
        self.encoder = encoder(self.n)
        self.top = context.level_budget
        # inverse of q_l modulo every q_i with i < l, for rescaling
        self._rescale_inv = {
            lvl: np.array([pow(self.primes[lvl], -1, q) for q in self.primes[:lvl]], dtype=np.int64)[:, None]
            for lvl in range(1, len(self.primes))
        }
        self.hamming = 2 * self.n / 3
        self.fresh_noise = (
            8 * math.sqrt(2) * SIGMA * self.n
            + 6 * SIGMA * math.sqrt(self.n)
            + 16 * SIGMA * math.sqrt(self.hamming * self.n)
        )
        self.fresh_noise_sk = 6 * SIGMA * math.sqrt(self.n)
        self.rescale_noise = math.sqrt(self.n / 3) * (3 + 8 * math.sqrt(self.hamming))

    # sampling

    def _ternary(self, rng, count=1):
        return rng.integers(-1, 2, size=(count, self.n), dtype=np.int64)

    def _gaussian(self, rng, count=1):
        e = np.rint(rng.normal(0.0, SIGMA, size=(count, self.n)))
        return np.clip(e, -6 * SIGMA, 6 * SIGMA).astype(np.int64)

    def _uniform(self, rng, count, level):
        q = self.q[: level + 1]
        return rng.integers(0, q[:, None], size=(count, level + 1, self.n), dtype=np.int64)

    def _to_rns(self, small, level):
        """Signed small-integer rows ``(k, N)`` -> residues ``(k, level+1, N)``."""
        return small[:, None, :] % self.q[: level + 1, None]

    def _qcol(self, level):
        return self.q[: level + 1, None]

    # keys

    def keygen(self, rng) -> KeySet:
        top = self.top
        q = self._qcol(top)
        t = self.tables
        s = t.forward(self._to_rns(self._ternary(rng), top))[0]
        a = self._uniform(rng, 1, top)[0]
        e = t.forward(self._to_rns(self._gaussian(rng), top))[0]
        b = neg_mod(add_mod(mulmod(a, s, q), e, q), q)
        public = np.stack([b, a])

        s2 = mulmod(s, s, q)
        digits = tuple((i, k) for i, p in enumerate(self.primes) for k in range(_digit_count(p)))
        ra = self._uniform(rng, len(digits), top)
        re = t.forward(self._to_rns(self._gaussian(rng, len(digits)), top))
        rb = neg_mod(add_mod(mulmod(ra, s, q), re, q), q)
        for c, (i, k) in enumerate(digits):
            g = pow(2, DIGIT_BITS * k, self.primes[i])
            rb[c, i] = add_mod(rb[c, i], mulmod(s2[i], np.int64(g), self.q[i]), self.q[i])
        relin = np.stack([rb, ra], axis=1)
        return KeySet(self.context, s, public, relin, digits)

    # encoding

    def encode(self, pt: Plaintext, level: int, scale: float) -> np.ndarray:
        """Residues ``(level+1, N)`` of ``pt`` encoded at ``scale``."""
        if pt.poly is not None and pt.level == level and pt.scale == scale:
            return pt.poly
        if pt.broadcast:
            # a constant slot vector is the constant polynomial
            m = np.zeros((level + 1, self.n), dtype=np.int64)
            c = _round_int(pt.values[0] * scale)
            m[:, 0] = [c % q for q in self.primes[: level + 1]]
        else:
            coeffs = self.encoder.encode(pt.values, scale)[0]
            m = coeffs[None, :] % self._qcol(level)
        return m

    def decode_poly(self, poly: np.ndarray, scale: float) -> np.ndarray:
        return self.encoder.decode(crt_centered(poly, self.primes[: poly.shape[0]]), scale)[0]

    # encryption

    def encrypt(self, pt: Plaintext, keys: KeySet, rng, level=None, scale=None, symmetric=None) -> Ciphertext:
        """Encrypt under the secret key when ``keys`` holds one, else the public key.

        ``symmetric`` forces the choice. Secret-key ciphertexts carry only the
        fresh error ``e``; public-key ones add ``u*e_pk + e1*s``, which at
        N=8192 is roughly a hundred times larger.
        """
        self._check_keys(keys)
        level = self.top if level is None else level
        scale = self.context.scale if scale is None else scale
        m = self.encode(pt, level, scale)
        return self._encrypt_poly(m, keys, rng, level, scale, symmetric)

    def _encrypt_poly(self, m, keys, rng, level, scale, symmetric=None) -> Ciphertext:
        if not 0 <= level <= self.top:
            raise HEError(f"level {level} outside [0, {self.top}]")
        if symmetric is None:
            symmetric = keys.secret_key is not None
        q = self._qcol(level)
        t = self.tables
        if symmetric:
            if keys.secret_key is None:
                raise KeyMismatchError("secret-key encryption needs the secret key")
            a = self._uniform(rng, 1, level)[0]  # uniform, so equally uniform in the NTT domain
            e = self._to_rns(self._gaussian(rng), level)[0]
            c = t.inverse(np.stack([neg_mod(mulmod(a, keys.secret_key[: level + 1], q), q), a]))
            c[0] = add_mod(add_mod(c[0], e, q), m, q)
            return Ciphertext(c, level, float(scale), self.fresh_noise_sk)
        u = t.forward(self._to_rns(self._ternary(rng), level))[0]
        e = self._to_rns(self._gaussian(rng, 2), level)
        pk = keys.public_key[:, : level + 1]
        c = t.inverse(mulmod(pk, u[None], q))
        c = add_mod(c, e, q)
        c[0] = add_mod(c[0], m, q)
        return Ciphertext(c, level, float(scale), self.fresh_noise)

    def encrypt_zero_at(self, level: int, keys: KeySet, rng, scale=None, symmetric=None) -> Ciphertext:
        scale = self.context.scale if scale is None else scale
        m = np.zeros((level + 1, self.n), dtype=np.int64)
        return self._encrypt_poly(m, keys, rng, level, scale, symmetric)

    def decrypt(self, ct: Ciphertext, keys: KeySet) -> Plaintext:
        self._check_keys(keys)
        lvl = ct.level
        q = self._qcol(lvl)
        t = self.tables
        s = keys.secret_key[: lvl + 1]
        acc = np.zeros_like(s)
        s_pow = s
        for k in range(1, ct.size):
            acc = add_mod(acc, mulmod(t.forward(ct.polys[k]), s_pow, q), q)
            s_pow = mulmod(s_pow, s, q)
        m = add_mod(ct.polys[0], t.inverse(acc), q)
        values = self.decode_poly(m, ct.scale)
        return Plaintext(values, poly=m, level=lvl, scale=ct.scale)

    def _check_keys(self, keys: KeySet):
        if keys is None or not keys.matches(self.context):
            raise KeyMismatchError("key set does not belong to this context")

    # arithmetic

    def add(self, a: Ciphertext, b, negate_b=False) -> Ciphertext:
        q = self._qcol(a.level)
        op = sub_mod if negate_b else add_mod
        if isinstance(b, Plaintext):
            m = self.encode(b, a.level, a.scale)
            out = a.polys.copy()
            out[0] = op(out[0], m, q)
            return Ciphertext(out, a.level, a.scale, a.noise)
        if a.level != b.level:
            raise HEError(f"level mismatch: {a.level} vs {b.level}")
        if not scales_match(a.scale, b.scale):
            raise ScaleMismatchError(f"scale mismatch: {a.scale!r} vs {b.scale!r}")
        size = max(a.size, b.size)
        out = np.zeros((size, a.level + 1, self.n), dtype=np.int64)
        out[: a.size] = a.polys
        out[: b.size] = op(out[: b.size], b.polys, q)
        return Ciphertext(out, a.level, a.scale, a.noise + b.noise)

    def negate(self, a: Ciphertext) -> Ciphertext:
        return Ciphertext(neg_mod(a.polys, self._qcol(a.level)), a.level, a.scale, a.noise)

    def multiply_plain(self, a: Ciphertext, pt: Plaintext, target_scale=None, rescale=True) -> Ciphertext:
        """``a * pt`` with ``pt`` encoded so the rescaled result has ``target_scale``."""
        lvl = a.level
        if lvl < 1 and rescale:
            raise LevelExhaustedError("multiplicative depth exceeded: ciphertext is at level 0")
        target = a.scale if target_scale is None else target_scale
        pt_scale = target * self.primes[lvl] / a.scale if rescale else target / a.scale
        q = self._qcol(lvl)
        if pt.broadcast:
            w = np.array([_round_int(pt.values[0] * pt_scale) % p for p in self.primes[: lvl + 1]], dtype=np.int64)
            out = mulmod(a.polys, w[:, None], q)
            noise = a.noise * abs(pt.values[0]) * pt_scale
        else:
            m = self.encode(pt, lvl, pt_scale)
            t = self.tables
            out = t.inverse(mulmod(t.forward(a.polys), t.forward(m)[None], q))
            noise = a.noise * max(1.0, float(np.max(np.abs(pt.values)))) * pt_scale
        res = Ciphertext(out, lvl, a.scale * pt_scale, noise)
        if not rescale:
            return res
        res = self.rescale(res)
        res.scale = target
        return res

    def multiply(self, a: Ciphertext, b: Ciphertext, keys: KeySet | None) -> Ciphertext:
        if a.level != b.level:
            raise HEError(f"level mismatch: {a.level} vs {b.level}")
        if a.level < 1:
            raise LevelExhaustedError("multiplicative depth exceeded: ciphertext is at level 0")
        if a.size != 2 or b.size != 2:
            raise HEError("ciphertext-ciphertext multiply needs size-2 operands")
        prod = self.tensor(a, b)
        if keys is not None and keys.relin_key is not None:
            prod = self.relinearize(prod, keys)
        else:
            logger.warning("no relinearization key: product keeps size 3")
        return self.rescale(prod)

    def tensor(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        lvl = a.level
        q = self._qcol(lvl)
        t = self.tables
        fa = t.forward(a.polys)
        fb = fa if b is a else t.forward(b.polys)
        d0 = mulmod(fa[0], fb[0], q)
        d1 = add_mod(mulmod(fa[0], fb[1], q), mulmod(fa[1], fb[0], q), q)
        d2 = mulmod(fa[1], fb[1], q)
        polys = t.inverse(np.stack([d0, d1, d2]))
        noise = a.noise * b.scale + b.noise * a.scale + a.noise * b.noise
        return Ciphertext(polys, lvl, a.scale * b.scale, noise)

    def relinearize(self, ct: Ciphertext, keys: KeySet) -> Ciphertext:
        if ct.size == 2:
            return ct
        if ct.size != 3:
            raise HEError("relinearization handles size-3 ciphertexts only")
        self._check_keys(keys)
        lvl = ct.level
        q = self._qcol(lvl)
        t = self.tables
        sel = [c for c, (i, _) in enumerate(keys.relin_digits) if i <= lvl]
        c2 = ct.polys[2]
        digits = np.stack([(c2[keys.relin_digits[c][0]] >> (DIGIT_BITS * keys.relin_digits[c][1])) & _DIGIT_MASK for c in sel])
        fd = t.forward(np.broadcast_to(digits[:, None, :], (len(sel), lvl + 1, self.n)))
        key = keys.relin_key[sel][:, :, : lvl + 1]
        acc = mulmod(fd[:, None], key, q).sum(axis=0) % q
        delta = t.inverse(acc)
        out = add_mod(ct.polys[:2], delta, q)
        ks_noise = len(sel) * (1 << DIGIT_BITS) * 6 * SIGMA * math.sqrt(self.n)
        return Ciphertext(out, lvl, ct.scale, ct.noise + ks_noise)

    def rescale(self, ct: Ciphertext) -> Ciphertext:
        """Divide by the top modulus (rounding) and drop it."""
        lvl = ct.level
        if lvl < 1:
            raise LevelExhaustedError("cannot rescale a level-0 ciphertext")
        ql = self.primes[lvl]
        top = ct.polys[:, lvl, :]
        top = np.where(top > ql // 2, top - ql, top)
        q = self._qcol(lvl - 1)
        low = (ct.polys[:, :lvl, :] - top[:, None, :]) % q
        out = mulmod(low, self._rescale_inv[lvl], q)
        return Ciphertext(out, lvl - 1, ct.scale / ql, ct.noise / ql + self.rescale_noise)

    def mod_switch(self, ct: Ciphertext, level: int) -> Ciphertext:
        if level > ct.level or level < 0:
            raise HEError(f"cannot switch level {ct.level} to {level}")
        if level == ct.level:
            return ct
        return Ciphertext(ct.polys[:, : level + 1].copy(), level, ct.scale, ct.noise)


def _digit_count(q: int) -> int:
    return -(-q.bit_length() // DIGIT_BITS)


def _round_int(x: float) -> int:
    return int(round(float(x)))


def crt_centered(residues: np.ndarray, primes) -> np.ndarray:
    """Centered CRT lift of ``(k, N)`` residues to float64 via mixed radix.

    Magnitudes below 2^53 come out exact. Whether a value is negative is read
    off the float estimate of ``x / Q``.
    """
    primes = [int(p) for p in primes]
    k = len(primes)
    r = residues.astype(np.int64)
    digits = [r[0] % primes[0]]
    for i in range(1, k):
        qi = primes[i]
        t = r[i] % qi
        for j in range(i):
            inv = pow(primes[j] % qi, -1, qi)
            t = mulmod((t - digits[j]) % qi, np.int64(inv), qi)
        digits.append(t)
    frac = np.zeros(residues.shape[1])
    for i in range(k):
        frac = (frac + digits[i]) / primes[i]
    neg = frac >= 0.5
    val = np.zeros(residues.shape[1])
    for i in range(k - 1, -1, -1):
        d = np.where(neg, primes[i] - 1 - digits[i], digits[i]).astype(np.float64)
        val = val * primes[i] + d
    return np.where(neg, -(val + 1.0), val)
