"""Two-party GMW evaluation over XOR shares.

Party-local protocol steps are generators: they yield ``(msg_type, payload)``
to send and receive the peer's payload of the same type. A driver moves the
messages, either interleaving both parties in one thread (``lockstep``) or
running each party in its own thread (``threads``). Both drivers produce the
same frames in the same order.

Share values inside circuits are bit-packed along the batch axis
(little-endian), so one wire of a batch of B instances is ``ceil(B/8)`` bytes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ChannelClosedError, ProtocolError
from ..transport import ChannelPair, MsgType, run_threads
from .circuit import INV, ONE, XOR, ZERO, Circuit
from .shares import TriplePool


@dataclass
class Party:
    """A computing server's local protocol state."""

    party: int
    triples: TriplePool
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    and_gates: int = 0  # bit-level AND instances evaluated, padding included


def pack(bits: np.ndarray) -> np.ndarray:
    """Pack 0/1 values along the last axis."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), axis=-1, bitorder="little")


def unpack(packed: np.ndarray, count: int) -> np.ndarray:
    return np.unpackbits(packed, axis=-1, count=count, bitorder="little")


def beaver_and(p: Party, x: np.ndarray, y: np.ndarray):
    """Bitwise AND of packed shares; one round, payload ``d || e``."""
    nbytes = x.size
    a, b, c = p.triples.take(nbytes)
    a = a.reshape(x.shape)
    b = b.reshape(x.shape)
    c = c.reshape(x.shape)
    d = x ^ a
    e = y ^ b
    peer = yield MsgType.AND_OPEN, d.tobytes() + e.tobytes()
    if len(peer) != 2 * nbytes:
        raise ProtocolError(f"AND_OPEN payload of {len(peer)} bytes, expected {2 * nbytes}")
    flat = np.frombuffer(peer, dtype=np.uint8)
    d = d ^ flat[:nbytes].reshape(x.shape)
    e = e ^ flat[nbytes:].reshape(x.shape)
    z = c ^ (d & b) ^ (e & a)
    if p.party == 0:
        z ^= d & e
    p.and_gates += 8 * nbytes
    return z


def open_values(p: Party, packed: np.ndarray, msg_type=MsgType.OPEN_INDEX):
    """Reveal packed shares to both parties."""
    peer = yield msg_type, packed.tobytes()
    if len(peer) != packed.size:
        raise ProtocolError("opening payload size mismatch")
    return packed ^ np.frombuffer(peer, dtype=np.uint8).reshape(packed.shape)


def evaluate(p: Party, circuit: Circuit, inputs: np.ndarray):
    """Evaluate ``circuit`` on packed input shares of shape (n_inputs, nbytes).

    Returns packed output shares of shape (n_outputs, nbytes).
    """
    inputs = np.asarray(inputs, dtype=np.uint8)
    if inputs.shape[0] != len(circuit.inputs):
        raise ProtocolError(f"circuit expects {len(circuit.inputs)} inputs, got {inputs.shape[0]}")
    nbytes = inputs.shape[1]
    vals = np.zeros((circuit.n_wires, nbytes), dtype=np.uint8)
    vals[circuit.inputs] = inputs
    ones = np.full(nbytes, 0xFF if p.party == 0 else 0, dtype=np.uint8)
    for depth, layer in enumerate(circuit.schedule()):
        if depth > 0 and len(layer.and_out):
            vals[layer.and_out] = yield from beaver_and(p, vals[layer.and_a], vals[layer.and_b])
        for op, out, a, b in layer.free:
            if op == XOR:
                vals[out] = vals[a] ^ vals[b]
            else:
                vals[out] = vals[a] ^ ones
    zeros = np.zeros(nbytes, dtype=np.uint8)
    result = np.empty((len(circuit.outputs), nbytes), dtype=np.uint8)
    for i, w in enumerate(circuit.outputs):
        result[i] = zeros if w == ZERO else ones if w == ONE else vals[w]
    return result


def predicted_traffic(circuit: Circuit, nbytes: int, header: int = 5) -> tuple[int, int]:
    """(rounds, bytes sent per party) for one evaluation of ``circuit``."""
    sizes = circuit.layer_sizes()
    return len(sizes), sum(header + 2 * g * nbytes for g in sizes)


# -- drivers ----------------------------------------------------------------------

def _lockstep(gens, channel: ChannelPair):
    results = [None, None]
    done = [False, False]

    def step(i, value):
        try:
            return gens[i].send(value)
        except StopIteration as stop:
            done[i] = True
            results[i] = stop.value
            return None

    msgs = [step(0, None), step(1, None)]
    while not all(done):
        if done[0] != done[1]:
            raise ProtocolError("parties fell out of lockstep")
        for i in (0, 1):
            channel[i].send_frame(*msgs[i])
        replies = [channel[i].recv_frame(timeout=0) for i in (0, 1)]
        for i in (0, 1):
            if replies[i][0] != msgs[i][0]:
                raise ProtocolError(
                    f"party {i} sent {MsgType(msgs[i][0]).name}, got {MsgType(replies[i][0]).name}")
        msgs = [step(i, replies[i][1]) for i in (0, 1)]
    return results


def _drive_one(gen, endpoint, timeout):
    try:
        msg = next(gen)
        while True:
            endpoint.send_frame(*msg)
            mtype, payload = endpoint.recv_frame(timeout=timeout)
            if mtype != msg[0]:
                raise ProtocolError(f"party {endpoint.party} sent {MsgType(msg[0]).name}, "
                                    f"got {MsgType(mtype).name}")
            msg = gen.send(payload)
    except StopIteration as stop:
        return stop.value
    except BaseException:
        endpoint.close()
        raise


def run_parties(gen0, gen1, channel: ChannelPair, runner: str | None = None,
                timeout: float = 300.0):
    """Drive two party generators to completion; return both results.

    Socket channels default to threads, since lockstep would need the kernel
    to buffer a whole message before the peer reads it.
    """
    runner = runner or ("threads" if channel.mode == "socket" else "lockstep")
    if runner == "lockstep":
        return _lockstep((gen0, gen1), channel)
    if runner == "threads":
        try:
            return run_threads(lambda: _drive_one(gen0, channel[0], timeout),
                               lambda: _drive_one(gen1, channel[1], timeout))
        except ChannelClosedError as exc:
            raise ProtocolError(f"two-party run aborted: {exc}") from exc
    raise ValueError(f"unknown runner {runner!r}")
