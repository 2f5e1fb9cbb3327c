from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .context import CryptoContext


class SpecialValue(enum.Enum):
    ZERO = "zero"
    ONE = "one"
    MINUS_ONE = "minus_one"
    GENERAL = "general"


def classify_special(values, tolerance: float = 0.0) -> SpecialValue:
    """Classify pre-encoding plaintext values as 0, 1, -1 or general.

    Every entry must match for a special class; ``[1, -1]`` is general.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0 or np.all(np.abs(v) <= tolerance):
        return SpecialValue.ZERO
    if np.all(np.abs(v - 1.0) <= tolerance):
        return SpecialValue.ONE
    if np.all(np.abs(v + 1.0) <= tolerance):
        return SpecialValue.MINUS_ONE
    return SpecialValue.GENERAL


@dataclass(eq=False)
class Plaintext:
    """Plaintext payload.

    The numeric slot values are always kept; nothing is lost by encoding, and
    special-value detection reads them directly. ``broadcast`` marks a single
    value repeated in every slot (a model weight shared by the whole batch).
    ``poly`` caches a ring encoding made by a backend, in coefficient form.
    """

    values: np.ndarray
    broadcast: bool = False
    poly: Optional[np.ndarray] = None
    level: Optional[int] = None
    scale: Optional[float] = None
    _classes: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if self.broadcast and self.values.size != 1:
            raise ValueError("a broadcast plaintext holds exactly one value")

    def special(self, tolerance: float = 0.0) -> SpecialValue:
        cls = self._classes.get(tolerance)
        if cls is None:
            cls = self._classes[tolerance] = classify_special(self.values, tolerance)
        return cls

    def slot_values(self, slots: int) -> np.ndarray:
        if self.broadcast:
            return np.full(slots, self.values[0])
        out = np.zeros(slots)
        out[: self.values.size] = self.values
        return out


@dataclass(eq=False)
class Ciphertext:
    """Reference-scheme ciphertext: ``size`` polynomials in coefficient form.

    ``polys`` has shape ``(size, level + 1, N)``. ``noise`` is an advisory
    bound on the embedded error, tracked through every operation.
    """

    polys: np.ndarray
    level: int
    scale: float
    noise: float = 0.0

    @property
    def size(self) -> int:
        return self.polys.shape[0]


@dataclass(frozen=True, eq=False)
class KeySet:
    """Secret, public and relinearization keys generated from one context.

    Key polynomials are stored in NTT form over the full modulus chain. The
    relinearization key has one ``(b, a)`` pair per (residue, base-2^15 digit).
    """

    context: CryptoContext
    secret_key: Optional[np.ndarray] = None
    public_key: Optional[np.ndarray] = None
    relin_key: Optional[np.ndarray] = None
    relin_digits: tuple = ()

    def matches(self, context: CryptoContext) -> bool:
        return self.context == context
