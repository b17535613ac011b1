"""Arithmetic coder driven by a :class:`KTModel`.

The coder state is an interval ``[low, low + R) * 2**-S`` held in Python
integers, so carries never need explicit handling.  Every sub-interval is
rounded inward (ceil of the lower end, floor of the upper end), which keeps
the final width at or below the model probability of the packet: the
codelength can never undercut ``model_bits``.  ``R`` is renormalised to at
least 2**96, so the rounding loss stays far below a millibit per packet.  The
codeword is the shortest dyadic interval inside the final interval, at most
``ceil(-log2 width) + 1`` bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..sources import Packet
from .model import HALF, ONE, KTModel

PRECISION = 96
R_MIN = 1 << PRECISION
_RENORM = PRECISION + 8


class DecodeError(ValueError):
    """Payload is not a valid encoding under the given model."""


@dataclass(frozen=True)
class CodecOutput:
    payload: bytes
    codelength_bits: int
    model_bits: float
    n: int

    @property
    def bits_per_symbol(self) -> float:
        return self.codelength_bits / self.n


class _Row:
    """Fenwick tree over the quantised counts of one context."""

    __slots__ = ("tree", "cnt", "total", "size", "top")

    def __init__(self, tree: list[int], cnt: list[int], total: int):
        self.tree = tree
        self.cnt = cnt
        self.total = total
        self.size = len(cnt)
        self.top = 1 << (self.size.bit_length() - 1)

    @staticmethod
    def build(counts: np.ndarray) -> tuple[list[int], list[int], int]:
        size = counts.shape[0]
        cs = np.concatenate(([0], np.cumsum(counts, dtype=np.int64)))
        idx = np.arange(size + 1)
        tree = cs - cs[idx - (idx & -idx)]
        return tree.tolist(), counts.tolist(), int(cs[-1])

    def prefix(self, x: int) -> int:
        tree = self.tree
        s = 0
        while x > 0:
            s += tree[x]
            x &= x - 1
        return s

    def add(self, x: int, delta: int) -> None:
        tree = self.tree
        self.cnt[x] += delta
        self.total += delta
        i = x + 1
        size = self.size
        while i <= size:
            tree[i] += delta
            i += i & -i

    def find(self, target: int, half: int) -> int:
        """Largest x with sum_{y<x} (cnt[y] + half) <= target."""
        tree = self.tree
        pos = 0
        step = self.top
        while step:
            nxt = pos + step
            if nxt <= self.size:
                val = tree[nxt] + step * half
                if val <= target:
                    pos = nxt
                    target -= val
            step >>= 1
        return pos


class _Rows:
    """Working copies of the model rows, built on first use."""

    def __init__(self, model: KTModel):
        self.model = model
        self.rows: dict = {}

    def get(self, ctx) -> _Row:
        row = self.rows.get(ctx)
        if row is None:
            base = self.model._fenwick.get(ctx)
            if base is None:
                base = _Row.build(self.model.row(ctx))
                self.model._fenwick[ctx] = base
            tree, cnt, total = base
            row = _Row(tree[:], cnt[:], total)
            self.rows[ctx] = row
        return row


def _finish(low: int, R: int, S: int) -> tuple[int, int]:
    """Shortest (c, L) with [c, c+1) * 2**-L inside [low, low+R) * 2**-S."""
    L = max(S - R.bit_length(), 0)
    while True:
        sh = S - L
        c = -((-low) >> sh)
        if (c + 1) << sh <= low + R:
            return c, L
        L += 1


def _payload(c: int, L: int) -> bytes:
    nbytes = (L + 7) // 8
    return (c << (8 * nbytes - L)).to_bytes(nbytes, "big")


def encode(packet: Packet, model: KTModel) -> CodecOutput:
    """Adaptively encode ``packet``; the model is not modified."""
    syms = model._check(packet).tolist()
    A = model.alphabet
    ah = A * HALF
    rows = _Rows(model)
    order1 = model.order == 1
    ctx = model.start_context
    row = rows.get(ctx)
    low, R, S = 0, R_MIN, PRECISION
    log_tot = log_sym = 0.0
    log2 = math.log2
    for x in syms:
        if order1:
            row = rows.get(ctx)
            ctx = x
        cl = row.prefix(x) + x * HALF
        cx = row.cnt[x] + HALF
        tot = row.total + ah
        a = -((-R * cl) // tot)
        b = (R * (cl + cx)) // tot
        low += a
        R = b - a
        log_tot += log2(tot)
        log_sym += log2(cx)
        row.add(x, ONE)
        if R < R_MIN:
            s = _RENORM - R.bit_length()
            R <<= s
            low <<= s
            S += s
    c, L = _finish(low, R, S)
    return CodecOutput(_payload(c, L), L, log_tot - log_sym, len(syms))


def _value_bits(V: int, LV: int, k: int) -> int:
    """floor(v * 2**k) for v = V * 2**-LV."""
    return V >> (LV - k) if k <= LV else V << (k - LV)


def decode(payload: bytes, n: int, model: KTModel) -> Packet:
    """Invert :func:`encode`; raises DecodeError on any inconsistency."""
    if n < 1:
        raise DecodeError("packet length must be >= 1")
    A = model.alphabet
    ah = A * HALF
    rows = _Rows(model)
    order1 = model.order == 1
    ctx = model.start_context
    row = rows.get(ctx)
    V = int.from_bytes(payload, "big")
    LV = 8 * len(payload)
    low, R, S = 0, R_MIN, PRECISION
    X = _value_bits(V, LV, S)  # floor(v * 2**S) - low
    out = bytearray(n)
    for i in range(n):
        if not 0 <= X < R:
            raise DecodeError(f"code value left the coding interval at symbol {i}")
        if order1:
            row = rows.get(ctx)
        tot = row.total + ah
        x = row.find((X * tot) // R, HALF)
        if x >= A:
            raise DecodeError(f"no symbol matches the code value at symbol {i}")
        cl = row.prefix(x) + x * HALF
        cx = row.cnt[x] + HALF
        a = -((-R * cl) // tot)
        b = (R * (cl + cx)) // tot
        if not a <= X < b:
            raise DecodeError(f"code value falls between symbol intervals at symbol {i}")
        out[i] = x
        ctx = x
        low += a
        X -= a
        R = b - a
        row.add(x, ONE)
        if R < R_MIN:
            s = _RENORM - R.bit_length()
            R <<= s
            low <<= s
            X = (X << s) + (_value_bits(V, LV, S + s) - (_value_bits(V, LV, S) << s))
            S += s
    c, L = _finish(low, R, S)
    if _payload(c, L) != bytes(payload):
        raise DecodeError("payload is not the canonical encoding of the decoded packet")
    return Packet(bytes(out), None, A)
