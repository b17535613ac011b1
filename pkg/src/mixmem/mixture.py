"""Mixtures of parametric sources and the side information they generate."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sources import Packet, ParamSource, SourceKind, generate, shannon_entropy

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class DimGroup:
    """Sources sharing one parameter dimension d (the set Delta_d)."""

    d: int
    kind: SourceKind
    members: tuple[int, ...]
    v: float
    w_hat: tuple[float, ...]

    @property
    def count(self) -> int:
        return len(self.members)


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """K sources with selection weights w."""

    sources: tuple[ParamSource, ...]
    weights: np.ndarray
    groups: tuple[DimGroup, ...] = field(init=False)

    def __post_init__(self):
        sources = tuple(self.sources)
        if not sources:
            raise ValueError("a mixture needs at least one source")
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (len(sources),):
            raise ValueError("one weight per source is required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must be a probability vector")
        if len({s.alphabet for s in sources}) != 1:
            raise ValueError("all sources must share one alphabet")
        w.setflags(write=False)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "groups", _group_by_dim(sources, w))

    @property
    def K(self) -> int:
        return len(self.sources)

    @property
    def alphabet(self) -> int:
        return self.sources[0].alphabet

    @property
    def d_max(self) -> int:
        return max(s.dim for s in self.sources)

    @classmethod
    def uniform(cls, sources) -> "MixtureSpec":
        sources = tuple(sources)
        return cls(sources, np.full(len(sources), 1.0 / len(sources)))


def _group_by_dim(sources, w) -> tuple[DimGroup, ...]:
    groups = []
    for d in sorted({s.dim for s in sources}):
        members = tuple(i for i, s in enumerate(sources) if s.dim == d)
        v = float(sum(w[i] for i in members))
        if v > 0:
            w_hat = tuple(float(w[i] / v) for i in members)
        else:
            w_hat = tuple(1.0 / len(members) for _ in members)
        groups.append(DimGroup(d, sources[members[0]].kind, members, v, w_hat))
    return tuple(groups)


@dataclass(frozen=True)
class SideInfo:
    """T packets shared by encoder and decoder, with their true source indices."""

    packets: tuple[Packet, ...]
    true_indices: tuple[int, ...]
    n: int

    @property
    def T(self) -> int:
        return len(self.packets)

    @property
    def m(self) -> int:
        return self.n * self.T


def draw_index(spec: MixtureSpec, rng_seed) -> int:
    """Pick a source index (0-based) with probability w_i."""
    rng = np.random.default_rng(rng_seed)
    return int(rng.choice(spec.K, p=spec.weights))


def packet_seed(rng_seed, t: int) -> np.random.SeedSequence:
    """Independent per-packet seed derived from an experiment seed."""
    return np.random.SeedSequence([int(rng_seed), int(t)])


def generate_packet(spec: MixtureSpec, n: int, seed) -> Packet:
    rng = np.random.default_rng(seed)
    z = int(rng.choice(spec.K, p=spec.weights))
    return generate(spec.sources[z], n, rng, source_index=z)


def generate_side_info(spec: MixtureSpec, n: int, T: int, rng_seed, offset: int = 0) -> SideInfo:
    """Generate T packets, each from a freshly drawn source index.

    Packet t uses the derived seed (rng_seed, offset + t), so any subset of
    packets can be regenerated independently of the others.
    """
    if n < 1 or T < 0:
        raise ValueError("need n >= 1 and T >= 0")
    packets = tuple(generate_packet(spec, n, packet_seed(rng_seed, offset + t)) for t in range(T))
    return SideInfo(packets, tuple(p.source_index for p in packets), n)


def mixture_weight_entropy(spec_or_weights) -> float:
    """H(w) in bits."""
    w = spec_or_weights.weights if isinstance(spec_or_weights, MixtureSpec) else spec_or_weights
    return shannon_entropy(np.asarray(w, dtype=np.float64))


def decompose_weights(spec: MixtureSpec) -> tuple[dict[int, float], dict[int, np.ndarray]]:
    """Aggregate weights v_d and normalised in-group weights w_hat_d, keyed by d."""
    v = {g.d: g.v for g in spec.groups}
    w_hat = {g.d: np.array(g.w_hat) for g in spec.groups}
    return v, w_hat


def source_marginal_mixture(spec: MixtureSpec, indices: Optional[list[int]] = None) -> np.ndarray:
    """Weighted per-symbol marginal of the mixture (optionally over a subset)."""
    idx = range(spec.K) if indices is None else indices
    out = sum(spec.weights[i] * spec.sources[i].marginal() for i in idx)
    return np.asarray(out) / np.sum(out)
