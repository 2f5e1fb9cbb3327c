from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

from ..ckks.ntt import find_ntt_primes

logger = logging.getLogger(__name__)

SCHEMES = ("ckks-ref", "clear")

# Largest total coefficient-modulus bits per (lambda, N) for ternary secrets,
# from the homomorphic encryption standard tables (classical attacks).
MAX_MODULUS_BITS = {
    128: {1024: 27, 2048: 54, 4096: 109, 8192: 218, 16384: 438, 32768: 881},
    192: {1024: 19, 2048: 37, 4096: 75, 8192: 152, 16384: 305, 32768: 611},
    256: {1024: 14, 2048: 29, 4096: 58, 8192: 118, 16384: 237, 32768: 476},
}


class ContextError(ValueError):
    pass


@dataclass(frozen=True)
class CryptoContext:
    """Encryption parameters shared by every payload of one run.

    ``coeff_moduli[0]`` is the last modulus standing; rescaling drops moduli
    from the end. The top modulus is held in reserve, so ``level_budget`` is
    one less than the number of moduli.
    """

    scheme_id: str
    poly_degree: int
    coeff_moduli: tuple
    scale_bits: int
    security_lambda: int = 0
    # BFV plaintext moduli t_i; carried for file compatibility, unused by CKKS
    plain_moduli: tuple = field(default=())

    @property
    def level_budget(self) -> int:
        return len(self.coeff_moduli) - 1

    @property
    def slot_count(self) -> int:
        return self.poly_degree // 2

    @property
    def scale(self) -> float:
        return float(2**self.scale_bits)

    @property
    def modulus_bits(self) -> int:
        return sum(int(q).bit_length() for q in self.coeff_moduli)

    def moduli_at(self, level: int) -> tuple:
        return self.coeff_moduli[: level + 1]

    def to_json(self) -> str:
        d = asdict(self)
        d["coeff_moduli"] = list(self.coeff_moduli)
        d["plain_moduli"] = list(self.plain_moduli)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CryptoContext":
        d = json.loads(text)
        d["coeff_moduli"] = tuple(int(q) for q in d["coeff_moduli"])
        d["plain_moduli"] = tuple(d.get("plain_moduli", ()))
        ctx = cls(**d)
        validate_context(ctx)
        return ctx

    def summary(self) -> str:
        return (
            f"scheme={self.scheme_id}, N={self.poly_degree}, slots={self.slot_count}, "
            f"L={self.level_budget}, moduli_bits={self.modulus_bits}, "
            f"scale=2^{self.scale_bits}, lambda={self.security_lambda}"
        )


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def validate_context(ctx: CryptoContext) -> None:
    if ctx.scheme_id not in SCHEMES:
        raise ContextError(f"unknown scheme {ctx.scheme_id!r}; expected one of {SCHEMES}")
    if not _is_pow2(ctx.poly_degree) or ctx.poly_degree < 8:
        raise ContextError(f"poly degree must be a power of two >= 8, got {ctx.poly_degree}")
    if len(ctx.coeff_moduli) < 2:
        raise ContextError("need at least two coefficient moduli (level budget L >= 1)")
    for q in ctx.coeff_moduli:
        if (q - 1) % (2 * ctx.poly_degree):
            raise ContextError(f"modulus {q} is not 1 mod 2N")


def make_context(
    scheme_id: str,
    poly_degree: int,
    moduli_bits,
    scale_bits: int,
    security_lambda: int = 0,
) -> CryptoContext:
    """Build a context, generating NTT-friendly primes of the requested sizes.

    >>> ctx = make_context("ckks-ref", 8192, [30] * 7, 30, 128)
    >>> ctx.level_budget, ctx.slot_count
    (6, 4096)
    """
    if not _is_pow2(poly_degree) or poly_degree < 8:
        raise ContextError(f"poly degree must be a power of two >= 8, got {poly_degree}")
    moduli_bits = list(moduli_bits)
    if not moduli_bits:
        raise ContextError("moduli bit-size list is empty")
    try:
        primes = find_ntt_primes(moduli_bits, poly_degree)
    except ValueError as exc:
        raise ContextError(str(exc)) from None
    ctx = CryptoContext(scheme_id, poly_degree, tuple(primes), scale_bits, security_lambda)
    validate_context(ctx)
    warn_security(ctx)
    return ctx


def warn_security(ctx: CryptoContext) -> bool:
    """Log a warning when the modulus is too wide for the claimed lambda.

    Never enforced: lambda is an annotation only. Returns True if warned.
    """
    lam = ctx.security_lambda
    if lam <= 0:
        return False
    table = MAX_MODULUS_BITS[min(MAX_MODULUS_BITS, key=lambda k: abs(k - lam))]
    bound = table.get(ctx.poly_degree)
    if bound is None:
        bound = table[min(table, key=lambda n: abs(math.log2(n) - math.log2(ctx.poly_degree)))]
    if ctx.modulus_bits > bound:
        logger.warning(
            "total modulus of %d bits exceeds the %d-bit bound for lambda=%d at N=%d",
            ctx.modulus_bits, bound, lam, ctx.poly_degree,
        )
        return True
    return False
