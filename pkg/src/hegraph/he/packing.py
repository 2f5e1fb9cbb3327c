"""Batch-axis SIMD packing of tensors into payload arrays.

A batched tensor of shape ``(B, *rest)`` becomes ``prod(rest)`` payloads, the
payload at flat location ``j`` holding the ``B`` values ``data[:, j]`` in its
first ``B`` slots. Unbatched tensors (weights) become one payload per element
with the scalar repeated in every slot, so it meets any batch slot-wise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .payload import Plaintext


class CapacityError(ValueError):
    """Batch larger than the slot count."""


@dataclass(eq=False)
class HETensor:
    """Logical tensor over an object array of payloads shaped like the non-batch dims."""

    elements: np.ndarray
    batch: Optional[int] = None

    @property
    def batched(self) -> bool:
        return self.batch is not None

    @property
    def rest(self) -> tuple:
        return self.elements.shape

    @property
    def logical_shape(self) -> tuple:
        return ((self.batch,) if self.batched else ()) + self.rest

    @property
    def size(self) -> int:
        return self.elements.size

    def flat(self) -> list:
        return list(self.elements.ravel())


def object_array(items, shape) -> np.ndarray:
    arr = np.empty(len(items), dtype=object)
    for i, x in enumerate(items):
        arr[i] = x
    return arr.reshape(shape)


def check_batch(batch: int, slot_count: int):
    if batch > slot_count:
        raise CapacityError(f"batch {batch} exceeds the {slot_count} slots of one payload")


def pack_tensor(data, backend, kind: str = "cipher", batched: bool = True) -> HETensor:
    """Pack ``data`` as plaintexts (``kind='plain'``) or ciphertexts.

    Plain payloads keep raw values and are encoded lazily, at whatever level
    and scale the ciphertext they meet requires.
    """
    if kind not in ("plain", "cipher"):
        raise ValueError("kind must be 'plain' or 'cipher'")
    data = np.asarray(data, dtype=np.float64)
    if batched:
        if data.ndim < 1:
            raise ValueError("a batched tensor needs a batch axis")
        batch = data.shape[0]
        check_batch(batch, backend.slot_count)
        rest = data.shape[1:]
        columns = data.reshape(batch, -1).T
        items = [Plaintext(col) for col in columns]
    else:
        batch, rest = None, data.shape
        items = [Plaintext(np.array([v]), broadcast=True) for v in data.ravel()]
    if kind == "cipher":
        items = [backend.encrypt(backend.encode(p.values, broadcast=p.broadcast)) for p in items]
    return HETensor(object_array(items, rest), batch)


def element_values(x, backend) -> np.ndarray:
    """All slot values of one payload."""
    if backend.is_ciphertext(x):
        return backend.decrypt_values(x)
    return x.slot_values(backend.slot_count)


def unpack_tensor(t: HETensor, backend) -> np.ndarray:
    """Decrypt/decode every payload and restore the logical layout."""
    n = t.batch if t.batched else 1
    cols = [element_values(x, backend)[:n] for x in t.flat()]
    if not cols:
        return np.zeros(t.logical_shape)
    stacked = np.stack(cols, axis=-1)  # (n, prod(rest))
    if t.batched:
        return stacked.reshape(t.logical_shape)
    return stacked[0].reshape(t.rest)
