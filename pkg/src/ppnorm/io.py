"""Binary containers and line-oriented text files.

Layouts
-------
``VCDB`` numeric container::

    b"VCDB" | version:u8 | ndim:u32be | dims:u32be * ndim | float64-le row-major

``BKDB`` bit store (``SHR1`` share store and ``TRP1`` triple store reuse it)::

    magic:4 | version:u8 | N:u32be | K:u32be | count:u32be
    then per record: id-hash:8 | ceil(N/8) bytes, little-endian bit order

For ``SHR1`` the K field carries the party index; for ``TRP1`` it carries the
party index and the records are the ``a``, ``b``, ``c`` components.
"""
from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .errors import FormatError

VERSION = 1
VCDB_MAGIC = b"VCDB"
BKDB_MAGIC = b"BKDB"
SHR_MAGIC = b"SHR1"
TRP_MAGIC = b"TRP1"

_U32 = struct.Struct(">I")
_BITSTORE_HEADER = struct.Struct(">4sBIII")


def id_hash(sample_id: str) -> bytes:
    """8-byte digest used as the record key in bit stores."""
    return hashlib.blake2b(sample_id.encode("utf-8"), digest_size=8).digest()


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, nbits: int) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8)
    return np.unpackbits(arr, count=nbits, bitorder="little")


# -- VCDB -----------------------------------------------------------------

def write_array(fh: BinaryIO, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f8")
    fh.write(VCDB_MAGIC)
    fh.write(bytes([VERSION]))
    fh.write(_U32.pack(arr.ndim))
    for d in arr.shape:
        fh.write(_U32.pack(d))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated container: wanted {n} bytes, got {len(data)}")
    return data


def read_array(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4)
    if magic != VCDB_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VCDB_MAGIC!r}")
    version = _read_exact(fh, 1)[0]
    if version != VERSION:
        raise FormatError(f"unsupported VCDB version {version}")
    (ndim,) = _U32.unpack(_read_exact(fh, 4))
    dims = tuple(_U32.unpack(_read_exact(fh, 4))[0] for _ in range(ndim))
    count = int(np.prod(dims)) if dims else 1
    raw = _read_exact(fh, 8 * count)
    return np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)


def save_arrays(path, arrays: Iterable) -> None:
    with open(path, "wb") as fh:
        for arr in arrays:
            write_array(fh, arr)


def load_arrays(path) -> list[np.ndarray]:
    data = Path(path).read_bytes()
    fh = io.BytesIO(data)
    out = []
    while fh.tell() < len(data):
        out.append(read_array(fh))
    return out


# -- bit stores -------------------------------------------------------------

def write_bitstore(path, magic: bytes, nbits: int, aux: int,
                   records: Iterable[tuple[bytes, np.ndarray]]) -> None:
    records = list(records)
    nbytes = (nbits + 7) // 8
    with open(path, "wb") as fh:
        fh.write(_BITSTORE_HEADER.pack(magic, VERSION, nbits, aux, len(records)))
        for key, bits in records:
            if len(key) != 8:
                raise FormatError("record key must be 8 bytes")
            bits = np.asarray(bits, dtype=np.uint8)
            if bits.shape != (nbits,):
                raise FormatError(f"record has {bits.shape} bits, store holds {nbits}")
            packed = pack_bits(bits)
            assert len(packed) == nbytes
            fh.write(key)
            fh.write(packed)


def read_bitstore(path, magic: bytes) -> tuple[int, int, list[tuple[bytes, np.ndarray]]]:
    """Return ``(N, aux, records)``."""
    with open(path, "rb") as fh:
        head = _read_exact(fh, _BITSTORE_HEADER.size)
        got, version, nbits, aux, count = _BITSTORE_HEADER.unpack(head)
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        nbytes = (nbits + 7) // 8
        records = []
        for _ in range(count):
            key = _read_exact(fh, 8)
            records.append((key, unpack_bits(_read_exact(fh, nbytes), nbits)))
        if fh.read(1):
            raise FormatError("trailing bytes after last record")
    return nbits, aux, records


# -- text tables ---------------------------------------------------------------

def write_tsv(path, rows: Iterable[Iterable]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")


def read_tsv(path, ncols: int) -> list[list[str]]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != ncols:
            raise FormatError(f"{path}:{lineno}: expected {ncols} fields, got {len(fields)}")
        rows.append(fields)
    return rows


def read_keyvalue(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
