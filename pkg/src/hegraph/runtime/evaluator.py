"""Scalar-payload arithmetic with bypass, level/scale alignment and op counting."""

from __future__ import annotations

import threading
from collections import Counter

import numpy as np

from ..he.payload import Plaintext, SpecialValue
from .bypass import Action, BypassConfig, apply_bypass

COUNT_KEYS = ("add", "mul_ct", "mul_pt", "negate", "bypass_mult", "bypass_add")


def scales_close(a: float, b: float) -> bool:
    return abs(a - b) <= np.spacing(max(abs(a), abs(b)))


def plain(values, broadcast=False) -> Plaintext:
    return Plaintext(np.atleast_1d(np.asarray(values, dtype=np.float64)), broadcast=broadcast)


def _plain_binary(a: Plaintext, b: Plaintext, fn) -> Plaintext:
    return Plaintext(fn(a.values, b.values), broadcast=a.broadcast and b.broadcast)


class Evaluator:
    """Wraps a backend; every HE operation the runtime performs goes through here."""

    def __init__(self, backend, bypass: BypassConfig | None = None):
        self.backend = backend
        self.bypass = bypass or BypassConfig()
        self.counts = Counter({k: 0 for k in COUNT_KEYS})
        self._lock = threading.Lock()

    def count(self, key, n=1):
        if n:
            with self._lock:
                self.counts[key] += n

    def merge_counts(self, counts: dict):
        with self._lock:
            for k, v in counts.items():
                self.counts[k] += v

    def is_ct(self, x) -> bool:
        return self.backend.is_ciphertext(x)

    def special(self, pt: Plaintext) -> SpecialValue:
        return pt.special(self.bypass.tolerance)

    # alignment

    def lower_to(self, ct, level):
        if ct.level > level:
            return self.backend.mod_switch(ct, level)
        return ct

    def _align(self, a, b):
        """Bring two ciphertexts to one level and scale."""
        be = self.backend
        if not scales_close(a.scale, b.scale):
            # re-encode the higher operand at the other's scale through a product with one
            hi, lo = (a, b) if a.level >= b.level else (b, a)
            if hi.level == lo.level:
                lo = self.lower_to(lo, lo.level - 1)
            hi = self.lower_to(hi, lo.level + 1)
            hi = be.multiply(hi, plain([1.0], broadcast=True), target_scale=lo.scale)
            self.count("mul_pt")
            a, b = (hi, lo) if a.level >= b.level else (lo, hi)
        level = min(a.level, b.level)
        return self.lower_to(a, level), self.lower_to(b, level)

    # primitives

    def add(self, a, b):
        ca, cb = self.is_ct(a), self.is_ct(b)
        if not ca and not cb:
            return _plain_binary(a, b, np.add)
        if ca and cb:
            a, b = self._align(a, b)
            self.count("add")
            return self.backend.add(a, b)
        ct, pt = (a, b) if ca else (b, a)
        if apply_bypass("add", self.special(pt), self.bypass) is Action.RETURN_CT:
            self.count("bypass_add")
            return ct
        self.count("add")
        return self.backend.add(ct, pt)

    def sub(self, a, b):
        ca, cb = self.is_ct(a), self.is_ct(b)
        if not ca and not cb:
            return _plain_binary(a, b, np.subtract)
        if ca and cb:
            a, b = self._align(a, b)
            self.count("add")
            return self.backend.subtract(a, b)
        if ca:
            if apply_bypass("sub", self.special(b), self.bypass) is Action.RETURN_CT:
                self.count("bypass_add")
                return a
            self.count("add")
            return self.backend.subtract(a, b)
        if apply_bypass("sub", self.special(a), self.bypass) is Action.RETURN_CT:
            self.count("bypass_add")
            return self.neg(b)
        self.count("add")
        return self.backend.subtract(a, b)

    def neg(self, a):
        if not self.is_ct(a):
            return Plaintext(-a.values, broadcast=a.broadcast)
        self.count("negate")
        return self.backend.negate(a)

    def fresh_zero(self, level, scale):
        return self.backend.encrypt_zero_at(level, scale)

    def mul(self, a, b, target_scale=None, allow_bypass=True):
        ca, cb = self.is_ct(a), self.is_ct(b)
        if not ca and not cb:
            return _plain_binary(a, b, np.multiply)
        if ca and cb:
            level = min(a.level, b.level)
            a, b = self.lower_to(a, level), self.lower_to(b, level)
            self.count("mul_ct")
            return self.backend.multiply(a, b)
        ct, pt = (a, b) if ca else (b, a)
        if allow_bypass:
            action = apply_bypass("mul", self.special(pt), self.bypass)
            if action is Action.RETURN_CT:
                self.count("bypass_mult")
                return ct
            if action is Action.NEGATE:
                self.count("bypass_mult")
                return self.neg(ct)
            if action is Action.FRESH_ZERO:
                self.count("bypass_mult")
                return self.fresh_zero(ct.level, ct.scale)
        self.count("mul_pt")
        return self.backend.multiply(ct, pt, target_scale=target_scale)

    def lift(self, pt: Plaintext, level, scale):
        """Encrypt a plaintext at a given level and scale."""
        be = self.backend
        return be.encrypt(be.encode(pt.values, level=level, scale=scale, broadcast=pt.broadcast))
