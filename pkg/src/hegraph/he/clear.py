"""Exact-arithmetic stand-in scheme that only keeps level bookkeeping.

Ciphertexts hold their slot values in the clear. Every level-consuming
operation decrements the level, and one applied at level 0 raises, so runs
on this backend check the depth model without any ring arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import Backend, HEError, LevelExhaustedError
from .context import CryptoContext
from .payload import KeySet, Plaintext


@dataclass(eq=False)
class ClearCiphertext:
    values: np.ndarray
    level: int
    scale: float
    broadcast: bool = False
    noise: float = 0.0
    size: int = 2


class ClearBackend(Backend):
    name = "clear"

    def __init__(self, context: CryptoContext, keys: KeySet | None = None, seed=None):
        super().__init__(context, keys)

    def keygen(self) -> KeySet:
        self.keys = KeySet(self.context)
        return self.keys

    def encode(self, values, level=None, scale=None, broadcast=False) -> Plaintext:
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if values.size > self.slot_count:
            raise ValueError(f"{values.size} values exceed {self.slot_count} slots")
        level = self.top_level if level is None else level
        scale = self.context.scale if scale is None else scale
        return Plaintext(values, broadcast=broadcast, level=level, scale=scale)

    def decode(self, pt: Plaintext) -> np.ndarray:
        return pt.slot_values(self.slot_count)

    def encrypt(self, pt: Plaintext) -> ClearCiphertext:
        level = self.top_level if pt.level is None else pt.level
        scale = self.context.scale if pt.scale is None else pt.scale
        return ClearCiphertext(pt.values.copy(), level, scale, pt.broadcast)

    def decrypt(self, ct: ClearCiphertext) -> Plaintext:
        return Plaintext(ct.values.copy(), broadcast=ct.broadcast, level=ct.level, scale=ct.scale)

    def is_ciphertext(self, x) -> bool:
        return isinstance(x, ClearCiphertext)

    @staticmethod
    def _parts(x):
        return x.values, x.broadcast

    def _binary(self, a, b, fn, consume):
        ct = a if self.is_ciphertext(a) else b
        if self.is_ciphertext(a) and self.is_ciphertext(b) and a.level != b.level:
            raise HEError(f"level mismatch: {a.level} vs {b.level}")
        if consume and ct.level < 1:
            raise LevelExhaustedError("multiplicative depth exceeded: ciphertext is at level 0")
        va, ba = self._parts(a)
        vb, bb = self._parts(b)
        level = ct.level - 1 if consume else ct.level
        return ClearCiphertext(fn(va, vb), level, ct.scale, ba and bb)

    def add(self, a, b):
        return self._binary(a, b, np.add, False)

    def subtract(self, a, b):
        return self._binary(a, b, np.subtract, False)

    def negate(self, a):
        return ClearCiphertext(-a.values, a.level, a.scale, a.broadcast)

    def multiply(self, a, b, target_scale=None):
        out = self._binary(a, b, np.multiply, True)
        if target_scale is not None:
            out.scale = target_scale
        return out

    def mod_switch(self, ct, level):
        if level > ct.level or level < 0:
            raise HEError(f"cannot switch level {ct.level} to {level}")
        if level == ct.level:
            return ct
        return ClearCiphertext(ct.values, level, ct.scale, ct.broadcast)

    def encrypt_zero_at(self, level, scale=None):
        if not 0 <= level <= self.top_level:
            raise HEError(f"level {level} outside [0, {self.top_level}]")
        scale = self.context.scale if scale is None else scale
        return ClearCiphertext(np.zeros(1), level, scale, True)

    def decrypt_values(self, ct) -> np.ndarray:
        return self.decrypt(ct).slot_values(self.slot_count)
