"""PLDA comparison with an encrypted reference.

The reference contributes its coordinates (scale s) and its own quadratic
and linear terms (scale 2s), both encrypted at enrolment since Paillier
cannot square a ciphertext. A probe holder then evaluates::

    E(self) + E(probe terms + k0) + sum_i E(x_ref_i) * (2 P x_probe)_i

giving the encrypted LLR at scale 2s: D scalar multiplications, D + 1
additions and one encryption.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import paillier as pl
from .errors import DimensionError, FormatError, KeyMismatchError, OverflowRiskError
from .plda import ScoringForm

DEFAULT_SCALE_BITS = 24
HETP_MAGIC = b"HETP"


@dataclass(frozen=True)
class ProtectedTemplate:
    enc_x: tuple
    enc_self_quad: pl.Ciphertext
    form_id: str
    key_id: str
    scale_bits: int

    @property
    def dim(self) -> int:
        return len(self.enc_x)


def _self_term(form: ScoringForm, x: np.ndarray) -> float:
    return float(x @ form.Q @ x + form.c @ x)


def magnitude_bound(form: ScoringForm, ref_norm: float, probe_norm: float) -> float:
    """Upper bound on |llr| for inputs of the given Euclidean norms."""
    q = np.linalg.norm(form.Q, 2)
    p = np.linalg.norm(form.P, 2)
    c = np.linalg.norm(form.c)
    return (q * (ref_norm**2 + probe_norm**2) + 2 * p * ref_norm * probe_norm
            + c * (ref_norm + probe_norm) + abs(form.k0))


def _check_headroom(pk: pl.PublicKey, form: ScoringForm, ref_norm, probe_norm, scale_bits):
    dim = form.dim
    # rounding adds at most D + 2 units of 2^-2s per term pair on top of the value
    bound = magnitude_bound(form, ref_norm, probe_norm) + dim + 2
    if math.ceil(bound) << (2 * scale_bits + 1) >= pk.n:
        raise OverflowRiskError(
            f"score bound {bound:.3g} at scale 2^{2 * scale_bits} exceeds the modulus headroom")


def protect_reference(pk: pl.PublicKey, form: ScoringForm, x_ref,
                      scale_bits: int = DEFAULT_SCALE_BITS, rng=None,
                      probe_norm_bound: float = 1e3) -> ProtectedTemplate:
    x = np.asarray(x_ref, dtype=np.float64)
    if x.shape != (form.dim,):
        raise DimensionError(f"reference has shape {x.shape}, form expects ({form.dim},)")
    _check_headroom(pk, form, float(np.linalg.norm(x)), probe_norm_bound, scale_bits)
    enc_x = tuple(pl.encrypt(pk, pl.encode(float(v), scale_bits, pk.n).raw, rng) for v in x)
    self_raw = pl.encode(_self_term(form, x), 2 * scale_bits, pk.n).raw
    return ProtectedTemplate(enc_x, pl.encrypt(pk, self_raw, rng), form.form_id, pk.key_id,
                             scale_bits)


def he_plda_score(pk: pl.PublicKey, form: ScoringForm, template: ProtectedTemplate, x_probe,
                  scale_bits: int | None = None, rng=None) -> pl.Ciphertext:
    s = template.scale_bits if scale_bits is None else scale_bits
    if s != template.scale_bits:
        raise ValueError(f"template was encoded at scale {template.scale_bits}, not {s}")
    if template.key_id != pk.key_id:
        raise KeyMismatchError("template was encrypted under a different key")
    if template.form_id != form.form_id:
        raise KeyMismatchError("template was built for a different scoring form")
    y = np.asarray(x_probe, dtype=np.float64)
    if y.shape != (form.dim,):
        raise DimensionError(f"probe has shape {y.shape}, form expects ({form.dim},)")
    # the reference norm is unknown here; use the same bound enrolment assumed for probes
    _check_headroom(pk, form, 1e3, float(np.linalg.norm(y)), s)
    n = pk.n
    probe_raw = pl.encode(_self_term(form, y) + form.k0, 2 * s, n).raw
    acc = pl.hom_add(pk, template.enc_self_quad, pl.encrypt(pk, probe_raw, rng))
    weights = 2.0 * form.P @ y
    for enc, w in zip(template.enc_x, weights):
        term = pl.hom_scalar_mul(pk, enc, pl.encode(float(w), s, n).raw)
        acc = pl.hom_add(pk, acc, term)
    return acc


def decrypt_score(key: pl.Keypair, c: pl.Ciphertext, scale_bits: int = DEFAULT_SCALE_BITS) -> float:
    return pl.decode(pl.FixedPoint(pl.decrypt(key, c), 2 * scale_bits), key.n)


def score_tolerance(form: ScoringForm, x_probe, scale_bits: int = DEFAULT_SCALE_BITS) -> float:
    """Worst-case fixed-point error of :func:`he_plda_score` after decoding."""
    y = np.asarray(x_probe, dtype=np.float64)
    D = form.dim
    return D * 2.0**-scale_bits * (np.abs(2.0 * form.P @ y).sum() + 1.0) + 2.0 ** (-2 * scale_bits + 1)


# -- template files ------------------------------------------------------------------

def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def _int_bytes(v: int) -> bytes:
    return v.to_bytes(max(1, (v.bit_length() + 7) // 8), "big")


def save_template(t: ProtectedTemplate, path) -> None:
    with open(path, "wb") as fh:
        fh.write(HETP_MAGIC + bytes([1]))
        fh.write(_lp(t.key_id.encode()))
        fh.write(_lp(t.form_id.encode()))
        fh.write(struct.pack(">II", t.dim, t.scale_bits))
        for c in (*t.enc_x, t.enc_self_quad):
            fh.write(_lp(_int_bytes(c.value)))


def load_template(path) -> ProtectedTemplate:
    data = memoryview(open(path, "rb").read())
    if bytes(data[:4]) != HETP_MAGIC or data[4] != 1:
        raise FormatError(f"{path}: not a HETP template")
    pos = 5

    def take_lp():
        nonlocal pos
        (length,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + length > len(data):
            raise FormatError(f"{path}: truncated template")
        out = bytes(data[pos:pos + length])
        pos += length
        return out

    key_id = take_lp().decode()
    form_id = take_lp().decode()
    dim, scale = struct.unpack_from(">II", data, pos)
    pos += 8
    cts = [pl.Ciphertext(int.from_bytes(take_lp(), "big"), key_id) for _ in range(dim + 1)]
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes")
    return ProtectedTemplate(tuple(cts[:dim]), cts[dim], form_id, key_id, scale)
