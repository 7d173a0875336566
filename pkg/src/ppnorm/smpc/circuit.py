"""Boolean circuit builder with constant folding and AND-depth scheduling.

Wires are non-negative ints; the constants are ``ZERO`` and ``ONE``. XOR and
NOT gates are free under GMW, so the cost model is the number of AND gates
and the AND depth (one communication round per AND layer).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

ZERO = -1
ONE = -2

XOR, AND, INV = 0, 1, 2


def is_const(w: int) -> bool:
    return w < 0


@dataclass
class Layer:
    """AND gates sharing one depth, followed by the free gates of that depth."""

    and_out: np.ndarray
    and_a: np.ndarray
    and_b: np.ndarray
    free: list  # [(op, out, a, b)] index arrays grouped by local level


class Circuit:
    def __init__(self):
        self.n_wires = 0
        self.gates: list[tuple[int, int, int, int]] = []
        self.inputs: list[int] = []
        self.outputs: list[int] = []
        self._depth: list[int] = []
        self._schedule = None

    # -- construction ------------------------------------------------------
    def _new(self, depth: int) -> int:
        w = self.n_wires
        self.n_wires += 1
        self._depth.append(depth)
        self._schedule = None
        return w

    def depth_of(self, w: int) -> int:
        return 0 if is_const(w) else self._depth[w]

    def input(self, count: int = 1) -> list[int]:
        ws = [self._new(0) for _ in range(count)]
        self.inputs.extend(ws)
        return ws

    def xor(self, a: int, b: int) -> int:
        if a == ZERO:
            return b
        if b == ZERO:
            return a
        if a == ONE:
            return self.not_(b)
        if b == ONE:
            return self.not_(a)
        if a == b:
            return ZERO
        out = self._new(max(self._depth[a], self._depth[b]))
        self.gates.append((XOR, out, a, b))
        return out

    def not_(self, a: int) -> int:
        if a == ZERO:
            return ONE
        if a == ONE:
            return ZERO
        out = self._new(self._depth[a])
        self.gates.append((INV, out, a, a))
        return out

    def and_(self, a: int, b: int) -> int:
        if a == ZERO or b == ZERO:
            return ZERO
        if a == ONE:
            return b
        if b == ONE:
            return a
        if a == b:
            return a
        out = self._new(max(self._depth[a], self._depth[b]) + 1)
        self.gates.append((AND, out, a, b))
        return out

    def mux(self, sel: int, x: int, y: int) -> int:
        """``y`` if ``sel`` else ``x``; one AND unless folded."""
        return self.xor(x, self.and_(sel, self.xor(x, y)))

    def set_outputs(self, wires) -> None:
        self.outputs = list(wires)
        self._schedule = None

    # -- cost model ------------------------------------------------------------
    @property
    def and_count(self) -> int:
        return sum(1 for g in self.gates if g[0] == AND)

    @property
    def and_depth(self) -> int:
        return max((self._depth[g[1]] for g in self.gates if g[0] == AND), default=0)

    def layer_sizes(self) -> list[int]:
        """AND gates per communication round."""
        return [len(layer.and_out) for layer in self.schedule()[1:]]

    def schedule(self) -> list[Layer]:
        """Layer 0 holds free gates over the inputs; layer d>0 starts with
        the AND gates of depth d."""
        if self._schedule is not None:
            return self._schedule
        depth = self._depth
        local = [0] * self.n_wires
        by_depth: dict[int, dict] = {}
        for op, out, a, b in self.gates:
            d = depth[out]
            slot = by_depth.setdefault(d, {"and": [], "free": {}})
            if op == AND:
                slot["and"].append((out, a, b))
                continue
            lvl = 1 + max(local[a] if depth[a] == d else 0,
                          local[b] if depth[b] == d else 0)
            local[out] = lvl
            slot["free"].setdefault(lvl, {XOR: [], INV: []})[op].append((out, a, b))
        layers = []
        for d in range(self.and_depth + 1):
            slot = by_depth.get(d, {"and": [], "free": {}})
            ands = np.array(slot["and"], dtype=np.int64).reshape(-1, 3)
            free = []
            for lvl in sorted(slot["free"]):
                for op in (XOR, INV):
                    g = slot["free"][lvl][op]
                    if g:
                        arr = np.array(g, dtype=np.int64)
                        free.append((op, arr[:, 0], arr[:, 1], arr[:, 2]))
            layers.append(Layer(ands[:, 0], ands[:, 1], ands[:, 2], free))
        self._schedule = layers
        return layers


# -- building blocks ------------------------------------------------------------

def _full_add(c: Circuit, a: int, b: int, cin: int, need_carry: bool):
    """Sum and carry with a single AND: carry = ((a^cin)&(b^cin))^cin."""
    s = c.xor(c.xor(a, b), cin)
    if not need_carry:
        return s, ZERO
    carry = c.xor(c.and_(c.xor(a, cin), c.xor(b, cin)), cin)
    return s, carry


def add_with_carry(c: Circuit, x: list[int], y: list[int], cin: int, max_value: int) -> list[int]:
    """Ripple-carry ``x + y + cin``; output trimmed to ``max_value.bit_length()`` bits."""
    width = max(len(x), len(y))
    out_width = max(1, max_value.bit_length())
    out = []
    carry = cin
    for i in range(width):
        a = x[i] if i < len(x) else ZERO
        b = y[i] if i < len(y) else ZERO
        need = i + 1 < out_width
        s, carry = _full_add(c, a, b, carry, need)
        out.append(s)
    if out_width > width:
        out.append(carry)
    return out[:out_width]


def hamming_weight(c: Circuit, bits: list[int]) -> list[int]:
    """Popcount as a tree of ripple-carry adders (Boyar-Peralta style).

    With 2^k the largest power of two <= n, the first bit is the carry-in of
    an adder joining the counts of the next 2^k - 1 bits and of the rest.
    This costs exactly n - popcount(n) AND gates.
    """
    n = len(bits)
    if n == 0:
        return [ZERO]
    if n == 1:
        return [bits[0]]
    top = 1 << (n.bit_length() - 1)
    left = hamming_weight(c, bits[1:top])
    right = hamming_weight(c, bits[top:]) if n > top else [ZERO]
    return add_with_carry(c, left, right, bits[0], n)


def greater_than(c: Circuit, a: list[int], b: list[int]) -> int:
    """1 iff a > b (unsigned, little-endian), via the borrow chain of b - a."""
    if len(a) != len(b):
        raise ValueError("comparator operands must have equal width")
    borrow = ZERO
    for ai, bi in zip(a, b):
        nb = c.not_(bi)
        # borrow-out of (b - a) = majority(~b_i, a_i, borrow)
        borrow = c.xor(c.and_(c.xor(nb, borrow), c.xor(ai, borrow)), borrow)
    return borrow


def tournament_max(c: Circuit, keys: list[list[int]]) -> list[int]:
    """Index bits of the maximal key; ties go to the lowest index.

    Leaves carry public index constants; each internal node picks the right
    child only when its key is strictly larger, and left subtrees always hold
    lower indices than right subtrees.
    """
    count = len(keys)
    idx_width = max(1, (count - 1).bit_length())
    nodes = [(list(k), [ONE if (i >> j) & 1 else ZERO for j in range(idx_width)])
             for i, k in enumerate(keys)]
    while len(nodes) > 1:
        nxt = []
        for j in range(0, len(nodes) - 1, 2):
            (kl, il), (kr, ir) = nodes[j], nodes[j + 1]
            s = greater_than(c, kr, kl)
            key = [c.mux(s, x, y) for x, y in zip(kl, kr)]
            idx = [c.mux(s, x, y) for x, y in zip(il, ir)]
            nxt.append((key, idx))
        if len(nodes) % 2:
            nxt.append(nodes[-1])
        nodes = nxt
    return nodes[0][1]


# -- cached circuits -----------------------------------------------------------------

def hw_width(n: int) -> int:
    return max(1, n.bit_length())


@lru_cache(maxsize=32)
def hamming_circuit(n: int) -> Circuit:
    c = Circuit()
    xs = c.input(n)
    out = hamming_weight(c, xs)
    out = out + [ZERO] * (hw_width(n) - len(out))
    c.set_outputs(out)
    return c


@lru_cache(maxsize=32)
def comparator_circuit(width: int) -> Circuit:
    c = Circuit()
    a = c.input(width)
    b = c.input(width)
    c.set_outputs([greater_than(c, a, b)])
    return c


@lru_cache(maxsize=32)
def tournament_circuit(count: int, key_width: int) -> Circuit:
    """Inputs: ``count`` keys of ``key_width`` bits, entry-major, LSB first."""
    c = Circuit()
    keys = [c.input(key_width) for _ in range(count)]
    c.set_outputs(tournament_max(c, keys))
    return c
