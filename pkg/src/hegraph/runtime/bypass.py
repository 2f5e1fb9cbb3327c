"""Special plaintext value bypass rules."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from ..he.payload import SpecialValue


@dataclass(frozen=True)
class BypassConfig:
    optimized_multiply: bool = True
    optimized_addition: bool = True
    tolerance: float = 0.0

    @classmethod
    def off(cls) -> "BypassConfig":
        return cls(False, False)


class Action(enum.Enum):
    RETURN_CT = "return"  # result is the ciphertext operand itself
    FRESH_ZERO = "zero"  # freshly encrypted zero at the ciphertext's level
    NEGATE = "negate"
    COMPUTE = "compute"  # no shortcut, run the primitive


def apply_bypass(op: str, pt_class: SpecialValue, bypass: BypassConfig) -> Action:
    """What to do with ``ct <op> pt`` given the plaintext's special class.

    ``op`` is one of ``add``, ``sub`` (ciphertext minus plaintext) and ``mul``.
    """
    if op in ("add", "sub"):
        if bypass.optimized_addition and pt_class is SpecialValue.ZERO:
            return Action.RETURN_CT
        return Action.COMPUTE
    if op != "mul":
        raise ValueError(f"unknown op {op!r}")
    if not bypass.optimized_multiply:
        return Action.COMPUTE
    return {
        SpecialValue.ZERO: Action.FRESH_ZERO,
        SpecialValue.ONE: Action.RETURN_CT,
        SpecialValue.MINUS_ONE: Action.NEGATE,
    }.get(pt_class, Action.COMPUTE)
