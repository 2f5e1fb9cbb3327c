from __future__ import annotations

import math
import threading

import numpy as np
import scipy.sparse as sp

from ..he.backend import Backend, HEError, LevelExhaustedError
from ..he.context import CryptoContext
from ..he.payload import Ciphertext, KeySet, Plaintext, SpecialValue
from .ntt import mulmod
from .ring import add_mod
from .scheme import CKKS

# float64 represents every integer below 2^53 exactly
_FLOAT_EXACT_BITS = 52


class CKKSBackend(Backend):
    name = "ckks-ref"

    def __init__(self, context: CryptoContext, keys: KeySet | None = None, seed=None):
        super().__init__(context, keys)
        self.scheme = CKKS(context)
        self._seeds = np.random.SeedSequence(seed)
        self._lock = threading.Lock()

    def rng(self) -> np.random.Generator:
        """A fresh generator per invocation; spawned under a lock for threads."""
        with self._lock:
            child = self._seeds.spawn(1)[0]
        return np.random.default_rng(child)

    def keygen(self) -> KeySet:
        self.keys = self.scheme.keygen(self.rng())
        return self.keys

    def encode(self, values, level=None, scale=None, broadcast=False) -> Plaintext:
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if values.size > self.slot_count:
            raise ValueError(f"{values.size} values exceed {self.slot_count} slots")
        level = self.top_level if level is None else level
        scale = self.context.scale if scale is None else scale
        pt = Plaintext(values, broadcast=broadcast)
        pt.poly = self.scheme.encode(pt, level, scale)
        pt.level, pt.scale = level, scale
        return pt

    def decode(self, pt: Plaintext) -> np.ndarray:
        if pt.poly is None:
            return pt.slot_values(self.slot_count)
        return self.scheme.decode_poly(pt.poly, pt.scale)

    def encrypt(self, pt: Plaintext) -> Ciphertext:
        return self.scheme.encrypt(pt, self.keys, self.rng(), level=pt.level, scale=pt.scale)

    def decrypt(self, ct: Ciphertext) -> Plaintext:
        return self.scheme.decrypt(ct, self.keys)

    def is_ciphertext(self, x) -> bool:
        return isinstance(x, Ciphertext)

    def add(self, a, b):
        if not self.is_ciphertext(a):
            a, b = b, a
        return self.scheme.add(a, b)

    def subtract(self, a, b):
        if self.is_ciphertext(a):
            return self.scheme.add(a, b, negate_b=True)
        # plain - cipher
        return self.scheme.add(self.scheme.negate(b), a)

    def negate(self, a):
        return self.scheme.negate(a)

    def multiply(self, a, b, target_scale=None):
        if not self.is_ciphertext(a):
            a, b = b, a
        if isinstance(b, Plaintext):
            return self.scheme.multiply_plain(a, b, target_scale)
        return self.scheme.multiply(a, b, self.keys)

    def mod_switch(self, ct, level):
        return self.scheme.mod_switch(ct, level)

    def rescale(self, ct):
        return self.scheme.rescale(ct)

    def encrypt_zero_at(self, level, scale=None):
        return self.scheme.encrypt_zero_at(level, self.keys, self.rng(), scale)

    # compound override

    def kernel_linear(self, inputs, weights, plan, bypass):
        """Dot/Convolution with plaintext broadcast weights as exact matmuls.

        General-weight terms are summed before a single rescale per output,
        and +-1 terms are summed without consuming a level, reproducing the
        bypass rules and the operation counts of the element-wise kernel.
        """
        if not inputs or not all(isinstance(x, Ciphertext) and x.size == 2 for x in inputs):
            return NotImplemented
        if not all(isinstance(w, Plaintext) and w.broadcast for w in weights):
            return NotImplemented
        lvl = inputs[0].level
        scale = inputs[0].scale
        if any(x.level != lvl or x.scale != scale for x in inputs):
            return NotImplemented

        wvals = np.array([w.values[0] for w in weights])
        wclass = np.full(len(weights), "g", dtype="<U1")
        if bypass.optimized_multiply:
            for i, w in enumerate(weights):
                c = w.special(bypass.tolerance)
                wclass[i] = {SpecialValue.ZERO: "z", SpecialValue.ONE: "p", SpecialValue.MINUS_ONE: "m"}.get(c, "g")
            if (wclass == "z").any() and not bypass.optimized_addition:
                return NotImplemented
        tcls = wclass[plan.w_idx]
        gen = tcls == "g"
        byp = (tcls == "p") | (tcls == "m")
        if gen.any() and lvl < 1:
            raise LevelExhaustedError("multiplicative depth exceeded: ciphertext is at level 0")

        out_n = plan.out_count
        n_gen = np.bincount(plan.out_idx[gen], minlength=out_n)
        n_byp = np.bincount(plan.out_idx[byp], minlength=out_n)
        n_zero = np.bincount(plan.out_idx[tcls == "z"], minlength=out_n)
        n_nz = n_gen + n_byp
        counts = {
            "mul_pt": int(n_gen.sum()),
            "negate": int((tcls == "m").sum()),
            "bypass_mult": int((~gen).sum()),
            "add": int(np.maximum(n_nz - 1, 0).sum()),
            "bypass_add": int(np.where(n_nz > 0, n_zero, np.maximum(n_zero - 1, 0)).sum()),
        }

        primes = self.scheme.primes[: lvl + 1]
        n = self.scheme.n
        top_q = primes[lvl] if lvl >= 1 else 1
        # integer encodings of the general weights at scale q_top
        w_int = [int(round(float(v) * top_q)) for v in wvals]
        gen_out = np.zeros((out_n, 2, lvl + 1, n), dtype=np.int64) if gen.any() else None
        byp_out = np.zeros((out_n, 2, lvl + 1, n), dtype=np.int64) if byp.any() else None
        max_terms = int(max(np.bincount(plan.out_idx, minlength=out_n).max(initial=0), 1))
        for j, q in enumerate(primes):
            x = np.stack([c.polys[:, j, :] for c in inputs]).reshape(len(inputs), 2 * n)
            if gen_out is not None:
                vals = np.array([w_int[k] % q for k in plan.w_idx[gen]], dtype=np.int64)
                m = _matrix(vals, plan.out_idx[gen], plan.in_idx[gen], out_n, len(inputs))
                gen_out[:, :, j, :] = modmatmul(m, x, q, max_terms).reshape(out_n, 2, n)
            if byp_out is not None:
                vals = np.where(tcls[byp] == "p", 1, -1).astype(np.int64)
                m = _matrix(vals, plan.out_idx[byp], plan.in_idx[byp], out_n, len(inputs))
                byp_out[:, :, j, :] = modmatmul(m, x, q, max_terms).reshape(out_n, 2, n)

        in_noise = np.array([c.noise for c in inputs])
        abs_w = np.abs(wvals)
        gen_noise = np.bincount(plan.out_idx[gen], weights=(abs_w[plan.w_idx[gen]] * top_q * in_noise[plan.in_idx[gen]]), minlength=out_n)
        byp_noise = np.bincount(plan.out_idx[byp], weights=in_noise[plan.in_idx[byp]], minlength=out_n)

        outputs = []
        for o in range(out_n):
            if n_gen[o]:
                ct = self.scheme.rescale(Ciphertext(gen_out[o], lvl, scale * top_q, gen_noise[o]))
                ct.scale = scale
                if n_byp[o]:
                    b = byp_out[o, :, :lvl, :]
                    q = self.scheme.q[:lvl, None]
                    ct = Ciphertext(add_mod(ct.polys, b, q), lvl - 1, scale, ct.noise + byp_noise[o])
            elif n_byp[o]:
                ct = Ciphertext(byp_out[o].copy(), lvl, scale, byp_noise[o])
            else:
                ct = self.encrypt_zero_at(lvl, scale)
            outputs.append(ct)
        return outputs, counts


def _matrix(vals, rows, cols, n_rows, n_cols):
    m = sp.csr_matrix((vals.astype(np.float64), (rows, cols)), shape=(n_rows, n_cols))
    m.sum_duplicates()
    if m.nnz > 0.25 * n_rows * n_cols:
        return m.toarray()
    return m


def modmatmul(m, x, q: int, max_terms: int) -> np.ndarray:
    """Exact ``m @ x mod q`` through float64 products of narrow limbs.

    ``m`` holds integers (dense or sparse) with ``|m| < q``; ``x`` holds
    residues in ``[0, q)``. Both sides are split into limbs narrow enough that
    every partial dot product stays below 2^52.
    """
    budget = _FLOAT_EXACT_BITS - math.ceil(math.log2(max_terms + 1))
    q_bits = int(q).bit_length()
    m_abs = abs(m).max() if m.shape[0] and m.shape[1] else 0
    m_bits = max(int(m_abs).bit_length(), 1)
    best = None
    for nx in range(1, q_bits + 1):
        for nm in range(1, m_bits + 1):
            if -(-q_bits // nx) + -(-m_bits // nm) <= budget:
                if best is None or nx * nm < best[0] * best[1]:
                    best = (nx, nm)
                break
    if best is None:
        raise HEError("matrix too large for exact limb arithmetic")
    nx, nm = best
    bx = -(-q_bits // nx)
    bm = -(-m_bits // nm)
    if sp.issparse(m):
        data = m.data
        neg = data < 0
        mags = np.abs(data).astype(np.int64)
    else:
        neg = m < 0
        mags = np.abs(m).astype(np.int64)
    out = np.zeros((m.shape[0], x.shape[1]), dtype=np.int64)
    x_limbs = [((x >> (bx * a)) & ((1 << bx) - 1)).astype(np.float64) for a in range(nx)]
    for b in range(nm):
        limb = ((mags >> (bm * b)) & ((1 << bm) - 1)).astype(np.float64)
        limb = np.where(neg, -limb, limb)
        if sp.issparse(m):
            mb = sp.csr_matrix((limb, m.indices, m.indptr), shape=m.shape)
        else:
            mb = limb
        for a in range(nx):
            part = np.asarray(mb @ x_limbs[a])
            part = np.rint(part).astype(np.int64) % q
            shift = pow(2, bx * a + bm * b, q)
            out = (out + mulmod(part, np.int64(shift), q)) % q
    return out
