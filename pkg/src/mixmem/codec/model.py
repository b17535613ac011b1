"""Krichevsky-Trofimov (add-1/2) sequential model with primable counts."""
from __future__ import annotations

import math
from typing import Iterable, Optional

import numpy as np
from scipy.special import gammaln

from ..sources import Packet

# Counts are stored as integers in units of 2**-QUANT_BITS so that fractional
# priming weights keep the coder arithmetic exact.
QUANT_BITS = 20
ONE = 1 << QUANT_BITS
HALF = ONE >> 1
_LN2 = math.log(2)


class AlphabetMismatch(ValueError):
    pass


class KTModel:
    """Add-1/2 estimator of order 0 or 1.

    Order 1 keeps A + 1 count rows: row ``s`` conditions on previous symbol
    ``s`` and row ``A`` (the start row) predicts the first symbol of a packet.
    Instances are treated as immutable; :meth:`prime` returns a new model.
    """

    __slots__ = ("order", "alphabet", "_q", "_fenwick")

    def __init__(self, alphabet: int, order: int = 0, counts: Optional[np.ndarray] = None):
        if order not in (0, 1):
            raise ValueError("order must be 0 or 1")
        if not 2 <= alphabet <= 256:
            raise ValueError("alphabet must lie in [2, 256]")
        self.order = order
        self.alphabet = alphabet
        shape = (alphabet,) if order == 0 else (alphabet + 1, alphabet)
        if counts is None:
            q = np.zeros(shape, dtype=np.int64)
        else:
            q = np.array(counts, dtype=np.int64)
            if q.shape != shape or np.any(q < 0):
                raise ValueError(f"quantised counts must be a nonnegative array of shape {shape}")
        q.setflags(write=False)
        self._q = q
        self._fenwick: dict = {}  # coder row cache, valid because counts never change

    @property
    def start_context(self) -> Optional[int]:
        return None if self.order == 0 else self.alphabet

    @property
    def quantised_counts(self) -> np.ndarray:
        return self._q

    @property
    def counts(self) -> np.ndarray:
        return self._q / ONE

    def row(self, context: Optional[int] = None) -> np.ndarray:
        if self.order == 0:
            return self._q
        return self._q[self.alphabet if context is None else context]

    def probability(self, symbol: int, context: Optional[int] = None) -> float:
        r = self.row(context)
        return (int(r[symbol]) + HALF) / (int(r.sum()) + self.alphabet * HALF)

    def distribution(self, context: Optional[int] = None) -> np.ndarray:
        r = self.row(context).astype(np.float64) / ONE + 0.5
        return r / r.sum()

    def _check(self, packet: Packet) -> np.ndarray:
        if packet.alphabet != self.alphabet:
            raise AlphabetMismatch(
                f"packet alphabet {packet.alphabet} does not fit model alphabet {self.alphabet}"
            )
        return packet.symbols

    def empirical_counts(self, packets: Iterable[Packet]) -> np.ndarray:
        """Raw symbol counts of ``packets`` laid out like the model rows."""
        A = self.alphabet
        if self.order == 0:
            acc = np.zeros(A, dtype=np.int64)
            for p in packets:
                acc += np.bincount(self._check(p), minlength=A)
            return acc
        acc = np.zeros((A + 1) * A, dtype=np.int64)
        for p in packets:
            s = self._check(p).astype(np.int64)
            acc[A * A + s[0]] += 1
            if len(s) > 1:
                acc += np.bincount(s[:-1] * A + s[1:], minlength=(A + 1) * A)
        return acc.reshape(A + 1, A)

    def prime(self, packets: Iterable[Packet], weight: float = 1.0) -> "KTModel":
        """Add ``weight`` times the packets' counts; the receiver is unchanged.

        Weighted counts are rounded to the 2**-20 quantum.
        """
        if not weight > 0:
            raise ValueError("priming weight must be positive")
        raw = self.empirical_counts(packets)
        if weight == 1.0:
            add = raw * ONE
        else:
            add = np.rint(raw * (weight * ONE)).astype(np.int64)
        return KTModel(self.alphabet, self.order, self._q + add)

    def codelength(self, packet: Packet) -> float:
        """Ideal adaptive codelength -log2 P(packet) in bits (closed form).

        Equals the ``model_bits`` the encoder accumulates symbol by symbol.
        """
        c0 = self.counts
        add = self.empirical_counts([packet])
        A = self.alphabet
        c0 = np.atleast_2d(c0)
        add = np.atleast_2d(add)
        used = add.sum(axis=1) > 0
        c0, add = c0[used], add[used]
        t0 = c0.sum(axis=1)
        nats = (gammaln(t0 + add.sum(axis=1) + A / 2) - gammaln(t0 + A / 2)).sum()
        nats -= (gammaln(c0 + add + 0.5) - gammaln(c0 + 0.5)).sum()
        return float(nats / _LN2)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, KTModel)
            and self.order == other.order
            and self.alphabet == other.alphabet
            and np.array_equal(self._q, other._q)
        )

    def __repr__(self) -> str:
        return f"KTModel(alphabet={self.alphabet}, order={self.order}, total={self._q.sum() / ONE:g})"
