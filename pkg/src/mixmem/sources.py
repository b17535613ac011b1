"""Parametric sources over a finite alphabet.

Two families are supported: memoryless (one symbol distribution) and
first-order Markov (one conditional distribution per previous symbol plus an
initial distribution).  Parameters can be drawn from the Jeffreys prior,
which for the multinomial family is the symmetric Dirichlet(1/2, ..., 1/2).
"""
from __future__ import annotations

import enum
import math
import struct
from collections import deque
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

ROW_TOL = 1e-12
STATIONARY_TOL = 1e-12
_MAX_POWER_ITERS = 1_000_000


class SourceKind(str, enum.Enum):
    MEMORYLESS = "memoryless"
    MARKOV1 = "markov1"


class ErgodicityError(ValueError):
    """Markov chain without a unique stationary distribution."""


def check_alphabet(A: int) -> int:
    A = int(A)
    if A < 2:
        raise ValueError(f"alphabet size must be >= 2, got {A}")
    return A


def dimension(kind: SourceKind, A: int) -> int:
    """Number of free parameters of a source of the given family."""
    kind = SourceKind(kind)
    A = check_alphabet(A)
    if kind is SourceKind.MEMORYLESS:
        return A - 1
    return A * (A - 1)


def _as_rows(theta: np.ndarray, name: str) -> np.ndarray:
    theta = np.array(theta, dtype=np.float64)
    if np.any(theta < 0) or not np.all(np.isfinite(theta)):
        raise ValueError(f"{name} must be finite and nonnegative")
    sums = theta.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_TOL):
        raise ValueError(f"{name} rows must sum to 1 (got {sums})")
    theta.setflags(write=False)
    return theta


@dataclass(frozen=True, eq=False)
class ParamSource:
    """A parametric source.

    ``theta`` is a length-A vector for memoryless sources and an (A, A) row
    stochastic matrix for Markov sources (row = previous symbol).  Markov
    sources also carry ``initial``, the distribution of the first symbol; when
    omitted it is set to the stationary distribution of the chain.
    """

    kind: SourceKind
    theta: np.ndarray
    initial: Optional[np.ndarray] = None
    dim: int = field(init=False)

    def __post_init__(self):
        kind = SourceKind(self.kind)
        object.__setattr__(self, "kind", kind)
        theta = _as_rows(self.theta, "theta")
        if kind is SourceKind.MEMORYLESS:
            if theta.ndim != 1:
                raise ValueError("memoryless theta must be a vector")
            A = check_alphabet(theta.shape[0])
            if self.initial is not None:
                raise ValueError("memoryless sources take no initial distribution")
        else:
            if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
                raise ValueError("Markov theta must be a square matrix")
            A = check_alphabet(theta.shape[0])
            initial = self.initial
            if initial is None:
                initial = stationary_distribution(theta)
            initial = _as_rows(initial, "initial")
            if initial.shape != (A,):
                raise ValueError("initial distribution has the wrong length")
            object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "dim", dimension(kind, A))

    @property
    def alphabet(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def memoryless(cls, theta: Sequence[float]) -> "ParamSource":
        return cls(SourceKind.MEMORYLESS, np.asarray(theta, dtype=np.float64))

    @classmethod
    def markov(cls, rows, initial=None) -> "ParamSource":
        init = None if initial is None else np.asarray(initial, dtype=np.float64)
        return cls(SourceKind.MARKOV1, np.asarray(rows, dtype=np.float64), init)

    def marginal(self) -> np.ndarray:
        """Per-symbol marginal (the stationary law for Markov sources)."""
        if self.kind is SourceKind.MEMORYLESS:
            return self.theta
        return self.initial

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "theta": self.theta.tolist()}
        if self.kind is SourceKind.MARKOV1:
            d["initial"] = self.initial.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSource":
        if SourceKind(d["kind"]) is SourceKind.MEMORYLESS:
            return cls.memoryless(d["theta"])
        return cls.markov(d["theta"], d.get("initial"))


@dataclass(frozen=True)
class Packet:
    """A length-n symbol sequence, one byte per symbol."""

    data: bytes
    source_index: Optional[int] = None
    alphabet: int = 256

    def __post_init__(self):
        if isinstance(self.data, np.ndarray):
            object.__setattr__(self, "data", self.data.astype(np.uint8).tobytes())
        elif not isinstance(self.data, bytes):
            object.__setattr__(self, "data", bytes(self.data))
        check_alphabet(self.alphabet)
        if self.alphabet > 256:
            raise ValueError("packets hold byte symbols; alphabet must be <= 256")
        if len(self.data) < 1:
            raise ValueError("packets must hold at least one symbol")
        if self.alphabet < 256 and max(self.data) >= self.alphabet:
            raise ValueError(f"symbol outside alphabet of size {self.alphabet}")

    def __len__(self) -> int:
        return len(self.data)

    @property
    def symbols(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8)


def _support_mask(A: int, support, rng: np.random.Generator) -> np.ndarray:
    if support is None:
        return np.ones(A, dtype=bool)
    if isinstance(support, (int, np.integer)):
        if not 2 <= support <= A:
            raise ValueError("support size must lie in [2, A]")
        idx = rng.choice(A, size=int(support), replace=False)
    else:
        idx = np.asarray(list(support), dtype=int)
    mask = np.zeros(A, dtype=bool)
    mask[idx] = True
    return mask


def _dirichlet_half(rng: np.random.Generator, mask: np.ndarray, rows: int = 0) -> np.ndarray:
    k = int(mask.sum())
    shape = (rows, k) if rows else (k,)
    draw = rng.dirichlet(np.full(k, 0.5), size=rows or None).reshape(shape)
    out = np.zeros(shape[:-1] + (mask.shape[0],))
    out[..., mask] = draw
    out /= out.sum(axis=-1, keepdims=True)
    return out


def sample_jeffreys(kind, alphabet: int, rng_seed, support=None) -> ParamSource:
    """Draw a source from the Jeffreys prior of its family.

    Memoryless parameters are Dirichlet(1/2, ..., 1/2); each Markov row is an
    independent Dirichlet(1/2) draw.  ``support`` optionally restricts the
    draw to a sub-simplex: an int picks that many symbols at random, an
    iterable names them.  Symbols outside the support get probability zero.
    """
    A = check_alphabet(alphabet)
    kind = SourceKind(kind)
    rng = np.random.default_rng(rng_seed)
    mask = _support_mask(A, support, rng)
    if kind is SourceKind.MEMORYLESS:
        return ParamSource(kind, _dirichlet_half(rng, mask))
    return ParamSource(kind, _dirichlet_half(rng, mask, rows=A))


def generate(source: ParamSource, n: int, rng_seed, source_index: Optional[int] = None) -> Packet:
    """Draw one packet of ``n`` symbols from ``source``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    A = source.alphabet
    if source.kind is SourceKind.MEMORYLESS:
        cdf = np.cumsum(source.theta)
        u = rng.random(n) * cdf[-1]
        syms = np.minimum(np.searchsorted(cdf, u, side="right"), A - 1)
        return Packet(syms.astype(np.uint8), source_index, A)

    cdf = np.cumsum(source.theta, axis=1)
    cdf0 = np.cumsum(source.initial)
    u = rng.random(n)
    out = np.empty(n, dtype=np.int64)
    s = min(int(np.searchsorted(cdf0, u[0] * cdf0[-1], side="right")), A - 1)
    out[0] = s
    rows = [r.tolist() for r in cdf]
    for t in range(1, n):
        row = rows[s]
        s = min(bisect_right(row, u[t] * row[-1]), A - 1)
        out[t] = s
    return Packet(out.astype(np.uint8), source_index, A)


def _entropy_bits(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def shannon_entropy(p) -> float:
    """Entropy in bits with 0 log 0 = 0."""
    return float(_entropy_bits(p))


def stationary_distribution(rows) -> np.ndarray:
    """Unique stationary distribution of an ergodic chain, by power iteration.

    Raises ErgodicityError if the chain has more than one closed class or its
    closed class is periodic.
    """
    P = np.asarray(rows, dtype=np.float64)
    A = P.shape[0]
    graph = csr_matrix(P > 0)
    n_comp, labels = connected_components(graph, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = labels == c
        if not np.any(P[members][:, ~members] > 0):
            closed.append(np.flatnonzero(members))
    if len(closed) != 1:
        raise ErgodicityError(f"chain has {len(closed)} closed classes; stationary law not unique")
    period = _period(P > 0, closed[0])
    if period != 1:
        raise ErgodicityError(f"chain is periodic with period {period}")

    pi = np.full(A, 1.0 / A)
    for _ in range(_MAX_POWER_ITERS):
        nxt = pi @ P
        if np.abs(nxt - pi).sum() < STATIONARY_TOL:
            nxt /= nxt.sum()
            return nxt
        pi = nxt
    raise ErgodicityError("power iteration did not converge")


def _period(adj: np.ndarray, states: np.ndarray) -> int:
    """Period of an irreducible class: gcd of level differences along edges."""
    inside = set(states.tolist())
    level = {int(states[0]): 0}
    queue = deque([int(states[0])])
    g = 0
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]).tolist():
            if v not in inside:
                continue
            if v in level:
                g = math.gcd(g, level[u] + 1 - level[v])
            else:
                level[v] = level[u] + 1
                queue.append(v)
    return g


def entropy_per_packet(source: ParamSource, n: int) -> float:
    """Entropy H_n(theta) in bits of a length-n block from ``source``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if source.kind is SourceKind.MEMORYLESS:
        return n * shannon_entropy(source.theta)
    pi = stationary_distribution(source.theta)
    rate = float(pi @ _entropy_bits(source.theta))
    return shannon_entropy(source.initial) + (n - 1) * rate


def empirical_entropy(symbols) -> float:
    """Order-0 empirical entropy of a symbol sequence, in bits per symbol."""
    if isinstance(symbols, (bytes, bytearray)):
        symbols = np.frombuffer(symbols, dtype=np.uint8)
    counts = np.bincount(np.asarray(symbols))
    return shannon_entropy(counts / counts.sum())


# Packet file format: u32 count, then per packet a u32 length, a u8 alphabet
# exponent (A = 2**e, 0 means 256), an i32 source index (-1 unknown) and the
# raw symbol bytes.  All integers little-endian.
_HEADER = struct.Struct("<I")
_PACKET_HEADER = struct.Struct("<IBi")


class PacketFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at byte offset {offset}")
        self.offset = offset


def _alphabet_flag(A: int) -> int:
    if A == 256:
        return 0
    e = max(1, int(np.ceil(np.log2(A))))
    return e if e < 8 else 0


def write_packets(fh: BinaryIO, packets: Iterable[Packet]) -> None:
    packets = list(packets)
    fh.write(_HEADER.pack(len(packets)))
    for p in packets:
        idx = -1 if p.source_index is None else int(p.source_index)
        fh.write(_PACKET_HEADER.pack(len(p.data), _alphabet_flag(p.alphabet), idx))
        fh.write(p.data)


def read_packets(fh: BinaryIO) -> list[Packet]:
    buf = fh.read()
    if len(buf) < _HEADER.size:
        raise PacketFormatError("truncated file header", 0)
    (count,) = _HEADER.unpack_from(buf, 0)
    off = _HEADER.size
    out = []
    for i in range(count):
        if off + _PACKET_HEADER.size > len(buf):
            raise PacketFormatError(f"truncated header of packet {i}", off)
        length, flag, idx = _PACKET_HEADER.unpack_from(buf, off)
        off += _PACKET_HEADER.size
        if flag > 7:
            raise PacketFormatError(f"bad alphabet flag {flag} in packet {i}", off - 5)
        if off + length > len(buf):
            raise PacketFormatError(f"packet {i} declares {length} bytes past end of file", off)
        try:
            pkt = Packet(buf[off:off + length], None if idx < 0 else idx, 256 if flag == 0 else 1 << flag)
        except ValueError as exc:
            raise PacketFormatError(f"invalid packet {i}: {exc}", off) from None
        out.append(pkt)
        off += length
    if off != len(buf):
        raise PacketFormatError("trailing bytes after last packet", off)
    return out
