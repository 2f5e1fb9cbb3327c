"""Canonical-embedding encoder for real slot vectors.

A polynomial ``m`` of degree below ``N`` is evaluated at the primitive
``2N``-th roots ``zeta^(5^j)``, ``j < N/2``; those evaluations are the slots.
The conjugate roots carry the conjugate values, which keeps ``m`` real.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_INT_LIMIT = float(2**62)


class EncodingOverflowError(ValueError):
    pass


class Encoder:
    def __init__(self, n: int):
        self.n = n
        self.slots = n // 2
        two_n = 2 * n
        rot = np.array([pow(5, j, two_n) for j in range(self.slots)])
        # FFT bin k holds the evaluation at zeta^(2k+1)
        self.slot_bins = (rot - 1) // 2
        self.conj_bins = (two_n - rot - 1) // 2
        t = np.arange(n)
        self.twist = np.exp(1j * np.pi * t / n)

    def embed_inverse(self, values) -> np.ndarray:
        """Real coefficient vectors (before scaling) for rows of slot values."""
        z = np.asarray(values, dtype=np.float64)
        z = np.atleast_2d(z)
        if z.shape[-1] > self.slots:
            raise ValueError(f"{z.shape[-1]} values do not fit in {self.slots} slots")
        evals = np.zeros(z.shape[:-1] + (self.n,), dtype=np.complex128)
        k = z.shape[-1]
        evals[..., self.slot_bins[:k]] = z
        evals[..., self.conj_bins[:k]] = z
        coeffs = np.fft.fft(evals, axis=-1) / self.n * np.conj(self.twist)
        return coeffs.real

    def embed(self, coeffs) -> np.ndarray:
        """Slot values of real coefficient rows."""
        c = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
        evals = np.fft.ifft(c * self.twist, axis=-1) * self.n
        return evals[..., self.slot_bins].real

    def encode(self, values, scale: float) -> np.ndarray:
        """Integer coefficients ``round(scale * embed^-1(values))`` as int64."""
        real = self.embed_inverse(values) * scale
        if real.size and np.max(np.abs(real)) >= _INT_LIMIT:
            raise EncodingOverflowError("scaled coefficients exceed 62 bits")
        return np.rint(real).astype(np.int64)

    def decode(self, coeffs, scale: float) -> np.ndarray:
        return self.embed(coeffs) / scale


@lru_cache(maxsize=16)
def encoder(n: int) -> Encoder:
    return Encoder(n)
