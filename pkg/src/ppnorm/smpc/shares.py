"""XOR secret sharing of bit vectors and dealer-generated Beaver triples."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, ProtocolError, TripleExhaustedError


@dataclass
class BooleanShare:
    """One party's XOR share of a bit vector (any shape, values 0/1)."""

    bits: np.ndarray
    party: int
    tag: str = ""

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.party not in (0, 1):
            raise ValueError(f"party must be 0 or 1, got {self.party}")

    def __len__(self):
        return self.bits.shape[-1]


def share_bits(x, rng: np.random.Generator, tag: str = "") -> tuple[BooleanShare, BooleanShare]:
    """Party 0 receives a uniform bitstring r, party 1 receives x XOR r."""
    x = np.asarray(x, dtype=np.uint8)
    if x.size and x.max() > 1:
        raise ValueError("share_bits expects a 0/1 vector")
    r = rng.integers(0, 2, size=x.shape, dtype=np.uint8)
    return BooleanShare(r, 0, tag), BooleanShare(x ^ r, 1, tag)


def reconstruct(s0: BooleanShare, s1: BooleanShare) -> np.ndarray:
    if s0.tag != s1.tag:
        raise ProtocolError(f"share tags differ: {s0.tag!r} vs {s1.tag!r}")
    if s0.bits.shape != s1.bits.shape:
        raise DimensionError(f"share shapes differ: {s0.bits.shape} vs {s1.bits.shape}")
    if {s0.party, s1.party} != {0, 1}:
        raise ProtocolError("reconstruction needs one share from each party")
    return s0.bits ^ s1.bits


def rerandomize(s0: BooleanShare, s1: BooleanShare,
                rng: np.random.Generator) -> tuple[BooleanShare, BooleanShare]:
    """Refresh a share pair with a new mask; the secret is unchanged."""
    if s0.bits.shape != s1.bits.shape:
        raise DimensionError("share shapes differ")
    r = rng.integers(0, 2, size=s0.bits.shape, dtype=np.uint8)
    return (BooleanShare(s0.bits ^ r, s0.party, s0.tag),
            BooleanShare(s1.bits ^ r, s1.party, s1.tag))


@dataclass
class SharedInteger:
    """One party's share of unsigned integers as little-endian bit planes.

    ``bits`` has shape ``(w,)`` for a single value or ``(w, B)`` for a batch.
    """

    bits: np.ndarray
    party: int

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)

    @property
    def width(self) -> int:
        return self.bits.shape[0]


def int_to_bits(values, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() >= 2**width):
        raise ValueError(f"values do not fit in {width} bits")
    shifts = np.arange(width, dtype=np.int64).reshape((width,) + (1,) * values.ndim)
    return ((values[None, ...] >> shifts) & 1).astype(np.uint8)


def bits_to_int(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    weights = (1 << np.arange(bits.shape[0], dtype=np.int64)).reshape(
        (bits.shape[0],) + (1,) * (bits.ndim - 1))
    return (bits * weights).sum(axis=0)


def share_int(values, width: int, rng: np.random.Generator) -> tuple[SharedInteger, SharedInteger]:
    bits = int_to_bits(values, width)
    r = rng.integers(0, 2, size=bits.shape, dtype=np.uint8)
    return SharedInteger(r, 0), SharedInteger(bits ^ r, 1)


def reconstruct_int(s0: SharedInteger, s1: SharedInteger) -> np.ndarray:
    if s0.bits.shape != s1.bits.shape:
        raise DimensionError("shared integer shapes differ")
    return bits_to_int(s0.bits ^ s1.bits)


# -- triples ----------------------------------------------------------------

@dataclass
class BeaverTriple:
    """One party's block of triple shares, bit-packed little-endian.

    Across both parties ``(a0^a1) & (b0^b1) == c0^c1`` bitwise.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    party: int

    @property
    def nbits(self) -> int:
        return 8 * self.a.size


def deal_triples(count: int, rng: np.random.Generator,
                 zero: bool = False) -> tuple[BeaverTriple, BeaverTriple]:
    """Trusted-dealer triples, rounded up to a whole number of bytes.

    ``zero=True`` is a test hook forcing a = b = 0 on reconstruction.
    """
    nbytes = (count + 7) // 8
    draw = lambda: rng.integers(0, 256, size=nbytes, dtype=np.uint8)  # noqa: E731
    a0, b0, c0 = draw(), draw(), draw()
    if zero:
        a1, b1 = a0.copy(), b0.copy()
    else:
        a1, b1 = draw(), draw()
    c1 = ((a0 ^ a1) & (b0 ^ b1)) ^ c0
    return BeaverTriple(a0, b0, c0, 0), BeaverTriple(a1, b1, c1, 1)


@dataclass
class TriplePool:
    """Sequential, use-once consumer over one party's dealt triples."""

    party: int
    blocks: list = field(default_factory=list)
    _offset: int = 0
    _buffer: tuple | None = None

    @classmethod
    def from_block(cls, block: BeaverTriple) -> "TriplePool":
        return cls(block.party, [block])

    def add(self, block: BeaverTriple) -> None:
        if block.party != self.party:
            raise ProtocolError("triple block belongs to the other party")
        self.blocks.append(block)
        self._buffer = None

    def _materialise(self):
        if self._buffer is None:
            if len(self.blocks) == 1:
                blk = self.blocks[0]
                self._buffer = (blk.a, blk.b, blk.c)
            else:
                self._buffer = tuple(np.concatenate([getattr(b, k) for b in self.blocks])
                                     if self.blocks else np.zeros(0, np.uint8)
                                     for k in "abc")
        return self._buffer

    @property
    def remaining_bytes(self) -> int:
        return sum(b.a.size for b in self.blocks) - self._offset

    @property
    def used_bytes(self) -> int:
        return self._offset

    def take(self, nbytes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if nbytes > self.remaining_bytes:
            raise TripleExhaustedError(
                f"party {self.party} needs {8 * nbytes} triple bits, "
                f"{8 * self.remaining_bytes} left")
        a, b, c = self._materialise()
        sl = slice(self._offset, self._offset + nbytes)
        self._offset += nbytes
        return a[sl], b[sl], c[sl]
