"""Binary keys from a KBM of MAP-adapted anchor models.

Bit positions are anchor-major: anchor ``a`` owns positions ``[a*C, (a+1)*C)``.
Every ranking step breaks ties toward the lowest position so that the
plaintext path and the secure circuits agree bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import io as vio
from .errors import DimensionError
from .synthcorpus import Gmm, diag_gauss_loglik

DEFAULT_RELEVANCE = 16.0


def map_adapt(ubm: Gmm, frames: np.ndarray, relevance: float = DEFAULT_RELEVANCE) -> Gmm:
    """Mean-only MAP adaptation; weights and variances are copied."""
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.shape[1] != ubm.dim:
        raise DimensionError(f"frames have {x.shape[1]} features, UBM has {ubm.dim}")
    ll = ubm.component_loglik(x) + np.log(ubm.weights)
    post = np.exp(ll - logsumexp(ll, axis=1, keepdims=True))  # T x C
    occ = post.sum(axis=0)
    first = post.T @ x  # C x F, equals occ * component frame mean
    means = (first + relevance * ubm.means) / (occ + relevance)[:, None]
    return Gmm(ubm.weights.copy(), means, ubm.variances.copy())


@dataclass(frozen=True)
class Kbm:
    means: np.ndarray  # N x F
    variances: np.ndarray  # N x F
    A: int
    C: int

    @property
    def N(self) -> int:
        return self.A * self.C

    @property
    def anchor_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.A), self.C)

    def loglik(self, frames: np.ndarray) -> np.ndarray:
        """T x N unweighted component log-densities."""
        return diag_gauss_loglik(frames, self.means, self.variances)

    def save(self, path) -> None:
        vio.save_arrays(path, [self.means, self.variances, np.array([self.A, self.C])])

    @classmethod
    def load(cls, path) -> "Kbm":
        means, variances, shape = vio.load_arrays(path)
        return cls(means, variances, int(shape[0]), int(shape[1]))


def build_kbm(ubm: Gmm, anchor_frames, relevance: float = DEFAULT_RELEVANCE) -> Kbm:
    if len(anchor_frames) < 1:
        raise ValueError("need at least one anchor")
    models = [map_adapt(ubm, f, relevance) for f in anchor_frames]
    return Kbm(np.concatenate([m.means for m in models]),
               np.concatenate([m.variances for m in models]),
               len(models), ubm.n_components)


@dataclass
class ActivationCounts:
    counts: np.ndarray  # N, per-frame average of top-M indicators
    T: int
    M: int


@dataclass
class BinaryKey:
    bits: np.ndarray  # N values in {0, 1}
    K: int

    @property
    def N(self) -> int:
        return self.bits.size

    def packed(self) -> bytes:
        return vio.pack_bits(self.bits)


def top_positions(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row; equal values keep index order."""
    values = np.asarray(values)
    if k == 1:
        return np.argmax(values, axis=-1)[..., None]
    return np.argsort(-values, axis=-1, kind="stable")[..., :k]


def frame_activations(kbm: Kbm, frames: np.ndarray, M: int = 1) -> ActivationCounts:
    if not 1 <= M <= kbm.N:
        raise ValueError(f"M must be in [1, {kbm.N}]")
    x = np.atleast_2d(frames)
    if x.shape[1] != kbm.means.shape[1]:
        raise DimensionError(f"frames have {x.shape[1]} features, KBM has {kbm.means.shape[1]}")
    top = top_positions(kbm.loglik(x), M)
    hits = np.bincount(top.ravel(), minlength=kbm.N)
    # integer hits divided once, so equal hit counts give bit-identical values
    return ActivationCounts(hits / x.shape[0], x.shape[0], M)


def extract_bk(counts: ActivationCounts, K: int) -> BinaryKey:
    N = counts.counts.size
    if not 1 <= K <= N:
        raise ValueError(f"K must be in [1, {N}]")
    bits = np.zeros(N, dtype=np.uint8)
    bits[top_positions(counts.counts, K)] = 1
    return BinaryKey(bits, K)


def binary_key(kbm: Kbm, frames: np.ndarray, M: int, K: int) -> BinaryKey:
    return extract_bk(frame_activations(kbm, frames, M), K)


def bk_similarity(a: BinaryKey, b: BinaryKey) -> int:
    if a.N != b.N:
        raise DimensionError(f"binary keys differ in length: {a.N} vs {b.N}")
    return int(np.count_nonzero(a.bits & b.bits))


def save_bk_store(path, keys: dict[str, BinaryKey]) -> None:
    keys = dict(keys)
    first = next(iter(keys.values()))
    vio.write_bitstore(path, vio.BKDB_MAGIC, first.N, first.K,
                       [(vio.id_hash(sid), bk.bits) for sid, bk in keys.items()])


def load_bk_store(path, sample_ids=None) -> dict:
    """Map id-hash (or sample id, when ``sample_ids`` is given) to BinaryKey."""
    _, K, records = vio.read_bitstore(path, vio.BKDB_MAGIC)
    by_hash = {h: BinaryKey(bits, K) for h, bits in records}
    if sample_ids is None:
        return by_hash
    return {sid: by_hash[vio.id_hash(sid)] for sid in sample_ids}
