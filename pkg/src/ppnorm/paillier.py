"""Paillier cryptosystem (g = n + 1) with a fixed-point codec.

Big-integer arithmetic goes through gmpy2. Key generation is deterministic
for a given seed so failing tests can be replayed; encryption nonces come
from the OS unless a seeded ``random.Random`` is passed.
"""
from __future__ import annotations

import hashlib
import math
import random
import secrets
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import gmpy2

from .errors import ConfigError, FormatError, KeyMismatchError, OverflowRiskError, PrimeGenerationError

DEFAULT_KEY_BITS = 3072
PRIME_RETRIES = 10_000

_local = threading.local()


@contextmanager
def op_counter():
    """Count homomorphic operations performed in this thread inside the block."""
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    counts: Counter = Counter()
    stack.append(counts)
    try:
        yield counts
    finally:
        stack.remove(counts)


def _tick(name: str) -> None:
    for counts in getattr(_local, "stack", ()):
        counts[name] += 1


@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int
    key_bits: int

    @property
    def nsquare(self) -> int:
        return self.n * self.n

    @property
    def key_id(self) -> str:
        return hashlib.sha256(str(self.n).encode()).hexdigest()[:16]

    @property
    def max_int(self) -> int:
        return self.n // 2


@dataclass(frozen=True)
class Keypair:
    public: PublicKey
    lam: int
    mu: int
    p: int
    q: int

    @property
    def n(self) -> int:
        return self.public.n

    @property
    def key_bits(self) -> int:
        return self.public.key_bits


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str


def keypair_from_primes(p: int, q: int) -> Keypair:
    """Textbook key construction from given primes (also the test hook)."""
    if p == q or not (gmpy2.is_prime(p) and gmpy2.is_prime(q)):
        raise ConfigError("p and q must be distinct primes")
    n = p * q
    if math.gcd(n, (p - 1) * (q - 1)) != 1:
        raise ConfigError("gcd(pq, (p-1)(q-1)) must be 1")
    lam = math.lcm(p - 1, q - 1)
    g = n + 1
    nsq = n * n
    u = int(gmpy2.powmod(g, lam, nsq))
    mu = int(gmpy2.invert((u - 1) // n, n))
    return Keypair(PublicKey(n, g, n.bit_length()), lam, mu, p, q)


def _random_prime(rng: random.Random, bits: int) -> int:
    for _ in range(PRIME_RETRIES):
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if gmpy2.is_prime(cand, 40):
            return cand
    raise PrimeGenerationError(f"no {bits}-bit prime after {PRIME_RETRIES} candidates")


def keygen(key_bits: int = DEFAULT_KEY_BITS, seed=None) -> Keypair:
    if key_bits < 64:
        raise ConfigError("key_bits must be >= 64")
    rng = random.Random(seed) if seed is not None else random.SystemRandom()
    p_bits = key_bits // 2
    q_bits = key_bits - p_bits
    for _ in range(100):
        p = _random_prime(rng, p_bits)
        q = _random_prime(rng, q_bits)
        if p != q and (p * q).bit_length() == key_bits:
            return keypair_from_primes(p, q)
    raise PrimeGenerationError("could not produce a modulus of the requested size")


def _nonce(pk: PublicKey, rng) -> int:
    while True:
        r = rng.randrange(1, pk.n) if rng is not None else secrets.randbelow(pk.n - 1) + 1
        if math.gcd(r, pk.n) == 1:
            return r


def encrypt(pk: PublicKey, m: int, rng: random.Random | None = None) -> Ciphertext:
    if not 0 <= m < pk.n:
        raise ValueError(f"plaintext must lie in [0, n), got {m}")
    nsq = pk.nsquare
    r = _nonce(pk, rng)
    # (1 + n)^m = 1 + m n  (mod n^2)
    c = (1 + m * pk.n) * int(gmpy2.powmod(r, pk.n, nsq)) % nsq
    _tick("encrypt")
    return Ciphertext(c, pk.key_id)


def decrypt(key: Keypair, c: Ciphertext) -> int:
    pk = key.public
    if c.key_id != pk.key_id:
        raise KeyMismatchError("ciphertext was produced under a different key")
    u = int(gmpy2.powmod(c.value, key.lam, pk.nsquare))
    _tick("decrypt")
    return (u - 1) // pk.n * key.mu % pk.n


def _check(pk: PublicKey, *cts: Ciphertext) -> None:
    for c in cts:
        if c.key_id != pk.key_id:
            raise KeyMismatchError("ciphertext was produced under a different key")


def hom_add(pk: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _check(pk, c1, c2)
    _tick("add")
    return Ciphertext(c1.value * c2.value % pk.nsquare, pk.key_id)


def hom_scalar_mul(pk: PublicKey, c: Ciphertext, k: int) -> Ciphertext:
    _check(pk, c)
    _tick("scalar_mul")
    k %= pk.n
    if k > pk.n // 2:
        # negative scalar: invert then raise to the short exponent n - k
        inv = gmpy2.invert(c.value, pk.nsquare)
        return Ciphertext(int(gmpy2.powmod(inv, pk.n - k, pk.nsquare)), pk.key_id)
    return Ciphertext(int(gmpy2.powmod(c.value, k, pk.nsquare)), pk.key_id)


# -- fixed point ------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPoint:
    raw: int
    scale_bits: int


def encode(x: float, scale_bits: int, n: int) -> FixedPoint:
    """round(x * 2^s) mapped into [0, n); negatives wrap to the top half."""
    v = round(x * (1 << scale_bits)) if isinstance(x, float) else x << scale_bits
    if not -(n // 2) <= v <= n // 2:
        raise OverflowRiskError(f"{x} does not fit at scale 2^{scale_bits} under this modulus")
    return FixedPoint(v % n, scale_bits)


def decode(fp: FixedPoint, n: int) -> float:
    v = fp.raw if fp.raw <= n // 2 else fp.raw - n
    return v / (1 << fp.scale_bits)


def signed(raw: int, n: int) -> int:
    return raw if raw <= n // 2 else raw - n


# -- key files ----------------------------------------------------------------------

def save_keypair(key: Keypair, path, public_only: bool = False) -> None:
    lines = [f"key_bits = {key.key_bits}", f"n = {key.n}", f"g = {key.public.g}"]
    if not public_only:
        lines += [f"lambda = {key.lam}", f"mu = {key.mu}", f"p = {key.p}", f"q = {key.q}"]
    Path(path).write_text("\n".join(lines) + "\n")


def load_key(path) -> Keypair | PublicKey:
    fields = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            fields[k.strip()] = int(v.strip())
    try:
        pk = PublicKey(fields["n"], fields["g"], fields["key_bits"])
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from None
    if "lambda" not in fields:
        return pk
    return Keypair(pk, fields["lambda"], fields["mu"], fields["p"], fields["q"])
