"""Closed-form redundancy limits for universal compression of mixtures.

All quantities are in bits and drop the o(1) terms of the asymptotic
expressions they come from.  Every report lists the approximations that were
made in ``validity_notes``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mixture import MixtureSpec
from .sources import SourceKind, check_alphabet, dimension, shannon_entropy

LOG2_2PIE = math.log2(2 * math.pi * math.e)


class Regime(str, enum.Enum):
    WEIGHT_ENTROPY = "WeightEntropy"
    MINIMAX = "Minimax"


def log2_jeffreys_integral(family, alphabet: int) -> float:
    """log2 of the integral of sqrt(det Fisher information) over the simplex.

    Memoryless: Gamma(1/2)^A / Gamma(A/2) = pi^(A/2) / Gamma(A/2).
    Markov order 1: product of A memoryless integrals, one per state.
    """
    A = check_alphabet(alphabet)
    per_row = (A / 2) * math.log2(math.pi) - math.lgamma(A / 2) / math.log(2)
    if SourceKind(family) is SourceKind.MEMORYLESS:
        return per_row
    return A * per_row


def minimax_redundancy_raw(n: int, d: int, family, alphabet: int) -> float:
    """(d/2) log2(n / 2 pi e) + log2 Jeffreys integral, unclamped."""
    if n < 2:
        raise ValueError("n must be >= 2")
    expected = dimension(family, alphabet)
    if d != expected:
        raise ValueError(f"d={d} inconsistent with {SourceKind(family).value} over A={alphabet} (d={expected})")
    return 0.5 * d * (math.log2(n) - LOG2_2PIE) + log2_jeffreys_integral(family, alphabet)


def minimax_redundancy(n: int, d: int, family, alphabet: int) -> float:
    """Average minimax redundancy of a d-parameter family, clamped at zero."""
    return max(minimax_redundancy_raw(n, d, family, alphabet), 0.0)


@dataclass(frozen=True)
class GroupInputs:
    d: int
    family: SourceKind
    alphabet: int
    v: float
    w_hat: tuple[float, ...]
    members: tuple[int, ...] = ()


@dataclass(frozen=True)
class LimitInputs:
    """Everything the limit formulas need.

    ``delta`` is the slack constant added to each low-entropy memory term;
    ``hysteresis`` scales the regime threshold (d/2) log2 n; and
    ``small_memory_allowance`` is the O(1) gain credited to memory when m < n.
    """

    n: int
    m: int
    groups: tuple[GroupInputs, ...]
    delta: float = 0.0
    hysteresis: float = 1.0
    small_memory_allowance: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        total = sum(g.v for g in self.groups)
        if abs(total - 1.0) > 1e-9:
            raise ValueError("aggregate weights v must sum to 1")
        for g in self.groups:
            if g.w_hat and abs(sum(g.w_hat) - 1.0) > 1e-9:
                raise ValueError(f"normalised weights of group d={g.d} must sum to 1")

    @classmethod
    def from_spec(cls, spec: MixtureSpec, n: int, m: int, **kw) -> "LimitInputs":
        groups = tuple(
            GroupInputs(g.d, g.kind, spec.alphabet, g.v, g.w_hat, g.members) for g in spec.groups
        )
        return cls(n, m, groups, **kw)

    @classmethod
    def single(cls, n: int, m: int, family, alphabet: int, **kw) -> "LimitInputs":
        d = dimension(family, alphabet)
        return cls(n, m, (GroupInputs(d, SourceKind(family), alphabet, 1.0, (1.0,), (0,)),), **kw)

    @classmethod
    def from_groups(cls, n: int, m: int, groups: Sequence[tuple], **kw) -> "LimitInputs":
        """Build from ``(family, alphabet, v, w_hat)`` tuples."""
        out = []
        for family, A, v, w_hat in groups:
            out.append(GroupInputs(dimension(family, A), SourceKind(family), A, float(v), tuple(map(float, w_hat))))
        return cls(n, m, tuple(out), **kw)


@dataclass(frozen=True)
class HdBranches:
    """Both candidate values of H_d and the one selected by the regime rule."""

    d: int
    weight_entropy: float
    minimax: float
    threshold: float
    regime: Regime

    @property
    def value(self) -> float:
        return self.weight_entropy if self.regime is Regime.WEIGHT_ENTROPY else self.minimax


def regime_threshold(d: int, n: int) -> float:
    return 0.5 * d * math.log2(n)


def h_d_branches(inputs: LimitInputs, g: GroupInputs) -> HdBranches:
    h = shannon_entropy(np.asarray(g.w_hat))
    thr = inputs.hysteresis * regime_threshold(g.d, inputs.n)
    regime = Regime.WEIGHT_ENTROPY if h <= thr else Regime.MINIMAX
    return HdBranches(g.d, h, minimax_redundancy(inputs.n, g.d, g.family, g.alphabet), thr, regime)


def mixture_entropy(inputs: LimitInputs, base_entropies: Sequence[float]) -> float:
    """Entropy H_n(Delta) of the mixture when all parameters are known.

    ``base_entropies[i]`` is H_n(theta_i) for source i (group ``members``
    index into it).  Returns H_n(Delta, Z) + H(v) + sum_d v_d H_d.
    """
    base = np.asarray(base_entropies, dtype=np.float64)
    h_known = 0.0
    extra = shannon_entropy(np.array([g.v for g in inputs.groups]))
    for g in inputs.groups:
        if len(g.members) != len(g.w_hat):
            raise ValueError("group member indices are required for the mixture entropy")
        h_known += g.v * float(np.dot(g.w_hat, base[list(g.members)]))
        extra += g.v * h_d_branches(inputs, g).value
    return h_known + extra


def redundancy_ucomp(inputs: LimitInputs) -> float:
    """Minimax redundancy without side information: sum_d v_d (R_{n,d} - H_d)."""
    total = 0.0
    for g in inputs.groups:
        b = h_d_branches(inputs, g)
        total += g.v * (b.minimax - b.value)
    return max(total, 0.0)


def _memory_term(inputs: LimitInputs, g: GroupInputs) -> float:
    b = h_d_branches(inputs, g)
    if b.regime is Regime.MINIMAX:
        return 0.0
    acc = 0.0
    for w in g.w_hat:
        if w > 0:
            acc += w * (0.5 * g.d * math.log2(1.0 + inputs.n / (w * inputs.m)) + inputs.delta)
    return acc


def redundancy_ucompm(inputs: LimitInputs) -> float:
    """Minimax redundancy with m symbols of shared memory.

    For m < n the memory buys at most a constant; the result is then the
    no-memory redundancy less ``small_memory_allowance``.
    """
    if inputs.m < inputs.n:
        return max(redundancy_ucomp(inputs) - inputs.small_memory_allowance, 0.0)
    return max(sum(g.v * _memory_term(inputs, g) for g in inputs.groups), 0.0)


def redundancy_ucompms(inputs: LimitInputs) -> float:
    """Minimax redundancy with memory and known source indices.

    Same leading term as :func:`redundancy_ucompm`.
    """
    return redundancy_ucompm(inputs)


@dataclass
class RedundancyReport:
    n: int
    m: int
    r_minimax_per_dim: dict[int, float]
    h_d: dict[int, dict]
    r_ucomp: float
    r_ucompm: float
    r_ucompms: float
    delta_slack: float
    validity_notes: list[str] = field(default_factory=list)
    mixture_entropy: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["r_minimax_per_dim"] = {str(k): v for k, v in self.r_minimax_per_dim.items()}
        d["h_d"] = {str(k): v for k, v in self.h_d.items()}
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "RedundancyReport":
        d = dict(d)
        d["r_minimax_per_dim"] = {int(k): v for k, v in d["r_minimax_per_dim"].items()}
        d["h_d"] = {int(k): v for k, v in d["h_d"].items()}
        return cls(**d)


def build_report(inputs: LimitInputs, base_entropies: Optional[Sequence[float]] = None) -> RedundancyReport:
    """Evaluate every limit for ``inputs`` and collect caveats."""
    notes = ["o(1) terms dropped from all asymptotic expressions"]
    r_dim, h_d = {}, {}
    for g in inputs.groups:
        raw = minimax_redundancy_raw(inputs.n, g.d, g.family, g.alphabet)
        if raw < 0:
            notes.append(f"R_n,d for d={g.d} is negative ({raw:.4g}) at n={inputs.n}; clamped to 0")
        if g.d > inputs.n:
            notes.append(f"d={g.d} exceeds n={inputs.n}; asymptotic regime not reached for this group")
        b = h_d_branches(inputs, g)
        r_dim[g.d] = b.minimax
        h_d[g.d] = {
            "value": b.value,
            "regime": b.regime.value,
            "weight_entropy_branch": b.weight_entropy,
            "minimax_branch": b.minimax,
            "threshold": b.threshold,
        }

    unclamped_ucomp = sum(g.v * (r_dim[g.d] - h_d[g.d]["value"]) for g in inputs.groups)
    if unclamped_ucomp < 0:
        notes.append(f"Ucomp formula negative ({unclamped_ucomp:.4g}); clamped to 0")
    r_ucomp = redundancy_ucomp(inputs)
    r_m = redundancy_ucompm(inputs)
    r_ms = redundancy_ucompms(inputs)
    if inputs.m < inputs.n:
        notes.append(
            f"m={inputs.m} < n={inputs.n}: memory gain bounded by a constant; "
            f"allowance {inputs.small_memory_allowance} bits subtracted from Ucomp"
        )
    if r_m > r_ucomp:
        notes.append(
            f"memory formula ({r_m:.4g}) exceeds Ucomp ({r_ucomp:.4g}); capped at Ucomp "
            "since a memory-assisted code may ignore its memory"
        )
        r_m = r_ucomp
        r_ms = min(r_ms, r_m)

    mix_h = None
    if base_entropies is not None:
        mix_h = mixture_entropy(inputs, base_entropies)
    return RedundancyReport(
        n=inputs.n,
        m=inputs.m,
        r_minimax_per_dim=r_dim,
        h_d=h_d,
        r_ucomp=r_ucomp,
        r_ucompm=r_m,
        r_ucompms=r_ms,
        delta_slack=inputs.delta,
        validity_notes=notes,
        mixture_entropy=mix_h,
    )


def ordering_check(report: RedundancyReport) -> bool:
    """True iff r_ucompms <= r_ucompm <= r_ucomp."""
    return report.r_ucompms <= report.r_ucompm <= report.r_ucomp
