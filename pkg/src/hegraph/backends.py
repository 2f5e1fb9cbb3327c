from __future__ import annotations

from .ckks.backend import CKKSBackend
from .he.clear import ClearBackend
from .he.context import CryptoContext
from .he.payload import KeySet

BACKENDS = {"ckks-ref": CKKSBackend, "clear": ClearBackend}


def make_backend(context: CryptoContext, keys: KeySet | None = None, seed=None):
    """Backend for ``context.scheme_id``; generates keys when none are given."""
    try:
        cls = BACKENDS[context.scheme_id]
    except KeyError:
        raise ValueError(f"no backend for scheme {context.scheme_id!r}") from None
    backend = cls(context, keys, seed=seed)
    if keys is None:
        backend.keygen()
    return backend
