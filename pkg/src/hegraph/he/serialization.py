"""Binary containers for key sets ("HEGK") and ciphertexts ("HEGC").

Both start with a 4-byte magic and a little-endian u32 format version.
Polynomials are stored in coefficient form as little-endian int64 residues.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .context import CryptoContext
from .payload import Ciphertext, KeySet

KEY_MAGIC = b"HEGK"
CT_MAGIC = b"HEGC"
FORMAT_VERSION = 1
_KEY_FIELDS = ("secret_key", "public_key", "relin_key")


class FormatError(ValueError):
    pass


def _write_array(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<i8")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated file")
    return buf


def _read_array(fh):
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    if ndim > 8:
        raise FormatError(f"implausible array rank {ndim}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<i8")
    return data.reshape(shape).astype(np.int64)


def _read_header(fh, magic):
    if _read_exact(fh, 4) != magic:
        raise FormatError(f"not a {magic.decode()} file")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")


def _ntt(context: CryptoContext):
    if context.scheme_id != "ckks-ref":
        return None
    from ..ckks.ntt import ntt_tables

    return ntt_tables(tuple(int(q) for q in context.coeff_moduli), context.poly_degree)


def dump_keys(keys: KeySet, include_secret=True) -> bytes:
    ctx = keys.context
    tables = _ntt(ctx)
    names = [f for f in _KEY_FIELDS if getattr(keys, f) is not None and (include_secret or f != "secret_key")]
    header = {
        "context": json.loads(ctx.to_json()),
        "relin_digits": [list(d) for d in keys.relin_digits],
        "arrays": names,
    }
    fh = io.BytesIO()
    fh.write(KEY_MAGIC)
    fh.write(struct.pack("<I", FORMAT_VERSION))
    text = json.dumps(header).encode("utf-8")
    fh.write(struct.pack("<I", len(text)))
    fh.write(text)
    for name in names:
        arr = getattr(keys, name)
        _write_array(fh, tables.inverse(arr) if tables is not None else arr)
    return fh.getvalue()


def load_keys_bytes(blob: bytes) -> KeySet:
    fh = io.BytesIO(blob)
    _read_header(fh, KEY_MAGIC)
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    try:
        header = json.loads(_read_exact(fh, n).decode("utf-8"))
        ctx = CryptoContext.from_json(json.dumps(header["context"]))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"bad key header: {exc}") from None
    tables = _ntt(ctx)
    arrays = {}
    for name in header.get("arrays", []):
        if name not in _KEY_FIELDS:
            raise FormatError(f"unknown key array {name!r}")
        arr = _read_array(fh)
        arrays[name] = tables.forward(arr) if tables is not None else arr
    digits = tuple(tuple(d) for d in header.get("relin_digits", []))
    return KeySet(ctx, relin_digits=digits, **arrays)


def save_keys(keys: KeySet, path, include_secret=True):
    with open(path, "wb") as fh:
        fh.write(dump_keys(keys, include_secret))


def load_keys(path) -> KeySet:
    with open(path, "rb") as fh:
        return load_keys_bytes(fh.read())


def dump_ciphertext(ct: Ciphertext) -> bytes:
    size, residues, n = ct.polys.shape
    fh = io.BytesIO()
    fh.write(CT_MAGIC)
    fh.write(struct.pack("<IIdII", FORMAT_VERSION, ct.level, float(ct.scale), size, n))
    fh.write(np.ascontiguousarray(ct.polys, dtype="<i8").tobytes())
    return fh.getvalue()


def load_ciphertext_bytes(blob: bytes, noise: float = 0.0) -> Ciphertext:
    fh = io.BytesIO(blob)
    if _read_exact(fh, 4) != CT_MAGIC:
        raise FormatError("not a HEGC file")
    version, level, scale, size, n = struct.unpack("<IIdII", _read_exact(fh, struct.calcsize("<IIdII")))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    count = size * (level + 1) * n
    polys = np.frombuffer(_read_exact(fh, 8 * count), dtype="<i8").reshape(size, level + 1, n)
    return Ciphertext(polys.astype(np.int64), level, scale, noise)
