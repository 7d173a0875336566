"""Two-party protocols for secure cohort pruning.

Every public function here runs *both* servers against a :class:`ChannelPair`
and returns per-party outputs, which is how the simulator and the tests use
them. The party-local generators underneath are what a deployment would run
in each server process.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, ProtocolError
from ..transport import ChannelPair, ChannelStats
from .circuit import comparator_circuit, hamming_circuit, hw_width, tournament_circuit
from .gmw import Party, beaver_and, evaluate, open_values, pack, run_parties, unpack
from .shares import BeaverTriple, BooleanShare, SharedInteger, TriplePool


def _pools(triples) -> tuple[TriplePool, TriplePool]:
    out = []
    for t in triples:
        out.append(TriplePool.from_block(t) if isinstance(t, BeaverTriple) else t)
    if [p.party for p in out] != [0, 1]:
        raise ProtocolError("triples must be given as (party 0, party 1)")
    return out[0], out[1]


def _parties(triples, seed=None) -> tuple[Party, Party]:
    p0, p1 = _pools(triples)
    ss = np.random.SeedSequence(seed)
    r0, r1 = (np.random.default_rng(s) for s in ss.spawn(2))
    return Party(0, p0, r0), Party(1, p1, r1)


def _padded(bits: int) -> int:
    return 8 * ((bits + 7) // 8)


def key_width(K: int) -> int:
    """Similarity width for keys with K set bits."""
    return max(1, int(K).bit_length())


# -- AND ------------------------------------------------------------------------

def _and_local(p: Party, x: np.ndarray, y: np.ndarray):
    shape = x.shape
    z = yield from beaver_and(p, pack(x.reshape(-1)), pack(y.reshape(-1)))
    return unpack(z, x.size).reshape(shape)


def secure_and(x_shares, y_shares, triples, channel: ChannelPair, runner=None):
    """Elementwise AND of two shared bit vectors in one round."""
    x0, x1 = x_shares
    y0, y1 = y_shares
    if x0.bits.shape != y0.bits.shape:
        raise DimensionError(f"AND operands differ in shape: {x0.bits.shape} vs {y0.bits.shape}")
    p0, p1 = _parties(triples)
    z0, z1 = run_parties(_and_local(p0, x0.bits, y0.bits), _and_local(p1, x1.bits, y1.bits),
                         channel, runner)
    tag = f"and({x0.tag},{y0.tag})"
    return BooleanShare(z0, 0, tag), BooleanShare(z1, 1, tag)


def and_triple_bits(length: int) -> int:
    return _padded(length)


# -- Hamming weight -----------------------------------------------------------------

def _hw_local(p: Party, v: np.ndarray):
    """``v``: (B, N) unpacked shares -> (w, B) unpacked weight shares."""
    batch, n = v.shape
    out = yield from evaluate(p, hamming_circuit(n), pack(v.T))
    return unpack(out, batch)


def hamming_weight_circuit(v_shares, triples, channel: ChannelPair, runner=None):
    """Shared popcount of each row of a shared (B, N) or (N,) bit matrix."""
    v0, v1 = v_shares
    single = v0.bits.ndim == 1
    a0 = np.atleast_2d(v0.bits)
    a1 = np.atleast_2d(v1.bits)
    p0, p1 = _parties(triples)
    w0, w1 = run_parties(_hw_local(p0, a0), _hw_local(p1, a1), channel, runner)
    if single:
        w0, w1 = w0[:, 0], w1[:, 0]
    return SharedInteger(w0, 0), SharedInteger(w1, 1)


def hamming_triple_bits(n: int, batch: int = 1) -> int:
    return hamming_circuit(n).and_count * _padded(batch)


def hamming_rounds(n: int) -> int:
    return hamming_circuit(n).and_depth


# -- comparison ---------------------------------------------------------------------

def _gt_local(p: Party, a: np.ndarray, b: np.ndarray):
    batch = a.shape[1]
    c = comparator_circuit(a.shape[0])
    out = yield from evaluate(p, c, pack(np.concatenate([a, b], axis=0)))
    return unpack(out, batch)[0]


def greater_than_circuit(a_shares, b_shares, triples, channel: ChannelPair, runner=None):
    """Shared bit that is 1 iff a > b (unsigned); batched over trailing axis."""
    a0, a1 = a_shares
    b0, b1 = b_shares
    if a0.width != b0.width:
        raise DimensionError(f"comparator widths differ: {a0.width} vs {b0.width}")
    single = a0.bits.ndim == 1
    args = [x.bits[:, None] if single else x.bits for x in (a0, a1, b0, b1)]
    p0, p1 = _parties(triples)
    g0, g1 = run_parties(_gt_local(p0, args[0], args[2]), _gt_local(p1, args[1], args[3]),
                         channel, runner)
    return BooleanShare(g0, 0, "gt"), BooleanShare(g1, 1, "gt")


def comparator_triple_bits(width: int, batch: int = 1) -> int:
    return comparator_circuit(width).and_count * _padded(batch)


# -- top-n ----------------------------------------------------------------------------

@dataclass
class PruneResult:
    ids: list
    positions: list[int]
    rounds: int = 0
    bytes_sent: list = field(default_factory=lambda: [0, 0])
    phase_stats: dict = field(default_factory=dict)
    iteration_stats: list = field(default_factory=list)  # cumulative, after each pick
    compute_time: float = 0.0


class _TopNState:
    """Per-party key shares: weight bits plus a validity bit as MSB.

    Zeroing an opened entry clears the validity bit too, so it loses against
    every remaining entry even when their weights are 0.
    """

    def __init__(self, party: int, weights: np.ndarray):
        # weights: (w, count, Q) unpacked shares
        w, count, q = weights.shape
        self.count, self.q = count, q
        self.keys = np.empty((count, w + 1, q), dtype=np.uint8)
        self.keys[:, :w, :] = weights.transpose(1, 0, 2)
        self.keys[:, w, :] = 1 if party == 0 else 0

    def packed_inputs(self) -> np.ndarray:
        return pack(self.keys.reshape(-1, self.q))

    def remove(self, positions: np.ndarray) -> None:
        self.keys[positions, :, np.arange(self.q)] = 0


def _pick_local(p: Party, state: _TopNState, circuit):
    idx = yield from evaluate(p, circuit, state.packed_inputs())
    opened = yield from open_values(p, idx)
    bits = unpack(opened, state.q)
    positions = (bits.astype(np.int64) << np.arange(bits.shape[0])[:, None]).sum(axis=0)
    if positions.max() >= state.count:
        raise ProtocolError("opened index out of range")
    state.remove(positions)
    return positions


def _select(p0: Party, p1: Party, w0: np.ndarray, w1: np.ndarray, n: int,
            channel: ChannelPair, runner) -> tuple[np.ndarray, list]:
    """Run n tournament picks; returns (positions (n, Q), cumulative stats)."""
    width, count, q = w0.shape
    s0, s1 = _TopNState(0, w0), _TopNState(1, w1)
    circuit = tournament_circuit(count, width + 1)
    picks, stats = [], []
    for _ in range(n):
        a, b = run_parties(_pick_local(p0, s0, circuit), _pick_local(p1, s1, circuit),
                           channel, runner)
        if not np.array_equal(a, b):
            raise ProtocolError("parties opened different indices")
        picks.append(a)
        stats.append(channel.stats())
    return np.array(picks, dtype=np.int64).reshape(n, q), stats


def _check_n(n: int, count: int) -> None:
    if not 1 <= n <= count:
        raise ValueError(f"n must be in [1, {count}], got {n}")


def top_n_select(weights, ids, n: int, triples, channel: ChannelPair, runner=None):
    """Reveal the ids of the n largest shared weights, ordered by descending
    weight with ties to the lowest position. ``weights`` bits: (w, count)."""
    w0, w1 = weights
    count = w0.bits.shape[1]
    if len(ids) != count:
        raise DimensionError(f"{len(ids)} ids for {count} weights")
    _check_n(n, count)
    p0, p1 = _parties(triples)
    before = channel.stats()
    t0 = time.perf_counter()
    positions, stats = _select(p0, p1, w0.bits[:, :, None], w1.bits[:, :, None], n,
                               channel, runner)
    spent = channel.stats() - before
    pos = positions[:, 0].tolist()
    return PruneResult(ids=[ids[i] for i in pos], positions=pos, rounds=spent.rounds,
                       bytes_sent=spent.bytes_sent, phase_stats={"top_n": spent},
                       iteration_stats=[s - before for s in stats],
                       compute_time=time.perf_counter() - t0)


def top_n_triple_bits(count: int, width: int, n: int, batch: int = 1) -> int:
    return n * tournament_circuit(count, width + 1).and_count * _padded(batch)


def top_n_rounds(count: int, width: int, n: int) -> int:
    return n * (tournament_circuit(count, width + 1).and_depth + 1)


# -- composition ------------------------------------------------------------------------

def _and_rows_local(p: Party, sample: np.ndarray, cohort: np.ndarray):
    """AND every sample row with every cohort row; result (N, Q*count) packed."""
    q, n_bits = sample.shape
    count = cohort.shape[0]
    x = np.repeat(sample.T, count, axis=1)  # column q*count + j -> sample q
    y = np.tile(cohort.T, (1, q))  # column q*count + j -> cohort j
    z = yield from beaver_and(p, pack(x), pack(y))
    return z


def _hw_packed_local(p: Party, z: np.ndarray, n_bits: int):
    return (yield from evaluate(p, hamming_circuit(n_bits), z))


def prune_triple_bits(n_bits: int, count: int, n: int, K: int | None = None,
                      queries: int = 1) -> int:
    """Triple bits one party consumes in :func:`secure_prune`."""
    width = key_width(K) if K is not None else hw_width(n_bits)
    batch = queries * count
    return (n_bits * _padded(batch) + hamming_triple_bits(n_bits, batch)
            + top_n_triple_bits(count, width, n, queries))


def prune_rounds(n_bits: int, count: int, n: int, K: int | None = None) -> dict:
    """Predicted rounds per phase, from the circuit builder."""
    width = key_width(K) if K is not None else hw_width(n_bits)
    return {"and": 1, "hamming": hamming_rounds(n_bits),
            "top_n": top_n_rounds(count, width, n)}


def prune_bytes(n_bits: int, count: int, n: int, K: int | None = None, queries: int = 1,
                header: int = 5) -> int:
    """Predicted bytes sent per party in :func:`secure_prune`."""
    width = key_width(K) if K is not None else hw_width(n_bits)
    batch_bytes = (queries * count + 7) // 8
    q_bytes = (queries + 7) // 8
    hw = hamming_circuit(n_bits)
    tour = tournament_circuit(count, width + 1)
    total = header + 2 * n_bits * batch_bytes
    total += sum(header + 2 * g * batch_bytes for g in hw.layer_sizes())
    per_pick = sum(header + 2 * g * q_bytes for g in tour.layer_sizes())
    per_pick += header + len(tour.outputs) * q_bytes
    return total + n * per_pick


def secure_prune(sample_bk_shares, cohort_bk_shares, cohort_ids, n: int, triples,
                 channel: ChannelPair, K: int | None = None, runner=None, seed=None):
    """AND -> Hamming weight -> top-n over shared binary keys.

    ``sample_bk_shares`` bits are (N,) for one query or (Q, N) for a batch of
    independent queries against the same cohort; a batch returns one
    :class:`PruneResult` per query. Only AND masks and the picked indices are
    ever opened.
    """
    s0, s1 = sample_bk_shares
    c0, c1 = cohort_bk_shares
    single = s0.bits.ndim == 1
    q0, q1 = np.atleast_2d(s0.bits), np.atleast_2d(s1.bits)
    cb0, cb1 = np.atleast_2d(c0.bits), np.atleast_2d(c1.bits)
    n_bits = q0.shape[1]
    count = cb0.shape[0]
    if cb0.shape[1] != n_bits:
        raise DimensionError(f"sample keys have {n_bits} bits, cohort keys {cb0.shape[1]}")
    if len(cohort_ids) != count:
        raise DimensionError(f"{len(cohort_ids)} ids for {count} cohort keys")
    _check_n(n, count)
    queries = q0.shape[0]
    width = key_width(K) if K is not None else hw_width(n_bits)

    p0, p1 = _parties(triples, seed)
    t_start = time.perf_counter()
    start = channel.stats()

    z0, z1 = run_parties(_and_rows_local(p0, q0, cb0), _and_rows_local(p1, q1, cb1),
                         channel, runner)
    after_and = channel.stats()
    h0, h1 = run_parties(_hw_packed_local(p0, z0, n_bits), _hw_packed_local(p1, z1, n_bits),
                         channel, runner)
    after_hw = channel.stats()
    batch = queries * count

    def weights(h):
        bits = unpack(h, batch)[:width]  # similarity never exceeds K
        return bits.reshape(width, queries, count).transpose(0, 2, 1)

    positions, stats = _select(p0, p1, weights(h0), weights(h1), n, channel, runner)
    end = channel.stats()
    elapsed = time.perf_counter() - t_start

    phases = {"and": after_and - start, "hamming": after_hw - after_and, "top_n": end - after_hw}
    total = end - start
    results = []
    for qi in range(queries):
        pos = positions[:, qi].tolist()
        results.append(PruneResult(ids=[cohort_ids[i] for i in pos], positions=pos,
                                   rounds=total.rounds, bytes_sent=total.bytes_sent,
                                   phase_stats=phases,
                                   iteration_stats=[s - start for s in stats],
                                   compute_time=elapsed))
    return results[0] if single else results


def plaintext_prune(sample_bits: np.ndarray, cohort_bits: np.ndarray, n: int) -> list[int]:
    """Reference ordering: similarity descending, lowest position first on ties."""
    sims = (np.asarray(cohort_bits, dtype=np.int64) & np.asarray(sample_bits, dtype=np.int64)).sum(axis=1)
    order = np.lexsort((np.arange(len(sims)), -sims))
    return order[:n].tolist()
