"""The primitive interface every HE scheme implements.

A scheme supplies encode/decode, encrypt/decrypt and the four element-wise
primitives. Compound tensor operations (Dot, Convolution, AvgPool) have
default implementations in :mod:`hegraph.runtime.kernels` written purely in
terms of these primitives; a scheme may override them with faster routines
by returning something other than ``NotImplemented`` from the ``kernel_*``
hooks.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .context import CryptoContext
from .payload import KeySet, Plaintext


@dataclass(frozen=True)
class LinearPlan:
    """A Dot or Convolution lowered to (output, input, weight) triples.

    Triples are grouped by output in ascending order and, within one output,
    listed in accumulation order. ``in_count`` and ``out_count`` count packed
    elements, not scalars.
    """

    out_count: int
    in_count: int
    out_idx: np.ndarray
    in_idx: np.ndarray
    w_idx: np.ndarray

    def groups(self):
        """``(output, slice)`` pairs into the triple arrays."""
        bounds = np.searchsorted(self.out_idx, np.arange(self.out_count + 1))
        for o in range(self.out_count):
            yield o, slice(bounds[o], bounds[o + 1])


class HEError(RuntimeError):
    pass


class LevelExhaustedError(HEError):
    """A level-consuming operation was applied at level 0."""


class ScaleMismatchError(HEError):
    pass


class KeyMismatchError(HEError):
    pass


class Backend(abc.ABC):
    name = "abstract"

    def __init__(self, context: CryptoContext, keys: KeySet | None = None):
        self.context = context
        self.keys = keys
        if keys is not None and not keys.matches(context):
            raise KeyMismatchError("key set was generated for a different context")

    @property
    def slot_count(self) -> int:
        return self.context.slot_count

    @property
    def top_level(self) -> int:
        return self.context.level_budget

    # payload pipeline

    @abc.abstractmethod
    def encode(self, values, level=None, scale=None, broadcast=False) -> Plaintext: ...

    @abc.abstractmethod
    def decode(self, pt: Plaintext) -> np.ndarray:
        """Slot values of ``pt``; always ``slot_count`` long."""

    @abc.abstractmethod
    def encrypt(self, pt: Plaintext): ...

    @abc.abstractmethod
    def decrypt(self, ct) -> Plaintext: ...

    # primitives: (C u P) x C -> C

    @abc.abstractmethod
    def add(self, a, b): ...

    @abc.abstractmethod
    def subtract(self, a, b): ...

    @abc.abstractmethod
    def negate(self, a): ...

    @abc.abstractmethod
    def multiply(self, a, b, target_scale=None):
        """Product consuming one level.

        For a plaintext operand ``target_scale`` fixes the scale of the result;
        ``None`` keeps the ciphertext's scale.
        """

    @abc.abstractmethod
    def mod_switch(self, ct, level: int):
        """Lower ``ct`` to ``level`` without touching its scale."""

    @abc.abstractmethod
    def encrypt_zero_at(self, level: int, scale=None): ...

    @abc.abstractmethod
    def is_ciphertext(self, x) -> bool: ...

    def level_of(self, ct) -> int:
        return ct.level

    def scale_of(self, ct) -> float:
        return ct.scale

    def noise_of(self, ct) -> float:
        return getattr(ct, "noise", 0.0)

    # convenience

    def encrypt_values(self, values, broadcast=False):
        return self.encrypt(self.encode(values, broadcast=broadcast))

    def decrypt_values(self, ct) -> np.ndarray:
        return self.decode(self.decrypt(ct))

    # compound-op overrides

    def kernel_linear(self, inputs, weights, plan, bypass):
        """Override hook for Dot/Convolution lowered to a linear map.

        Returns ``NotImplemented`` or ``(outputs, counts)``.
        """
        return NotImplemented

    def kernel_avgpool(self, inputs, plan):
        return NotImplemented
