"""Side-information clustering: gate, byte-pdf features, Hellinger k-means,
sub-cluster k-nearest selection, and nearest-cluster classification."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .sources import Packet, empirical_entropy

log = logging.getLogger(__name__)

DEFAULT_GATE_THRESHOLD = 7.5
HELLINGER_MAX = math.sqrt(2) / 2


class GateVerdict(str, enum.Enum):
    COMPRESSIBLE = "Compressible"
    INCOMPRESSIBLE = "Incompressible"


def compressibility_gate(packet: Packet, threshold_bits_per_byte: float = DEFAULT_GATE_THRESHOLD) -> GateVerdict:
    if empirical_entropy(packet.symbols) > threshold_bits_per_byte:
        return GateVerdict.INCOMPRESSIBLE
    return GateVerdict.COMPRESSIBLE


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Empirical symbol pdf of a packet and the packet length it came from."""

    pdf: np.ndarray
    n: int

    def __post_init__(self):
        pdf = np.array(self.pdf, dtype=np.float64)
        if pdf.ndim != 1 or np.any(pdf < 0) or abs(pdf.sum() - 1.0) > 1e-12:
            raise ValueError("feature pdf must be a nonnegative vector summing to 1")
        pdf.setflags(write=False)
        object.__setattr__(self, "pdf", pdf)

    @classmethod
    def from_packet(cls, packet: Packet, alphabet: Optional[int] = None) -> "FeatureVector":
        A = alphabet or packet.alphabet
        counts = np.bincount(packet.symbols, minlength=A)
        return cls(counts / counts.sum(), len(packet))

    @property
    def counts(self) -> np.ndarray:
        return self.pdf * self.n


def _pdf(x) -> np.ndarray:
    return x.pdf if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)


def hellinger(p, q) -> float:
    """(1/2) sqrt(sum_x (sqrt p(x) - sqrt q(x))^2), in [0, sqrt(2)/2]."""
    p, q = _pdf(p), _pdf(q)
    if p.shape != q.shape:
        raise ValueError("distributions must share an alphabet")
    diff = np.sqrt(p) - np.sqrt(q)
    return 0.5 * math.sqrt(float(np.dot(diff, diff)))


def _rowwise(Rp: np.ndarray, Rq: np.ndarray) -> np.ndarray:
    """Hellinger distance between matching rows of two sqrt-pdf matrices."""
    diff = Rp - Rq
    return 0.5 * np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _approx_pairwise(Rp: np.ndarray, Rq: np.ndarray) -> np.ndarray:
    sq = (Rp * Rp).sum(1)[:, None] + (Rq * Rq).sum(1)[None, :] - 2.0 * Rp @ Rq.T
    return 0.5 * np.sqrt(np.maximum(sq, 0.0))


def feature_matrix(features: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    pdfs = np.stack([f.pdf for f in features])
    lengths = np.array([f.n for f in features], dtype=np.float64)
    return pdfs, lengths


def noise_floor(pdfs: np.ndarray, lengths: np.ndarray) -> float:
    """Typical Hellinger distance between two packets of one memoryless source.

    With s observed symbols and length n, sum_x (sqrt p_hat - sqrt p)^2 is
    about (s - 1) / (4 n), so two independent packets sit about
    sqrt((s - 1) / (8 n)) apart on the 1/2-scaled Hellinger scale.
    """
    s = (pdfs > 0).sum(axis=1)
    return float(np.median(np.sqrt(np.maximum(s - 1, 0) / (8.0 * lengths))))


@dataclass
class KMeansConfig:
    """``separation`` controls seeding: a new seed is only placed when the
    farthest packet lies more than this Hellinger distance from every seed.
    ``"auto"`` uses ``separation_factor`` times the sampling noise floor;
    ``0`` places all k seeds (as long as distinct packets remain)."""

    max_iters: int = 100
    tol: float = 1e-9
    seed: int = 0
    separation: Union[str, float] = "auto"
    separation_factor: float = 3.0


@dataclass
class Clustering:
    k: int
    centers: list  # per cluster: pdf as np.ndarray, or None when empty
    assignments: np.ndarray
    objective: float
    trace: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def nonempty_count(self) -> int:
        return sum(c is not None for c in self.centers)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == j)

    def recompute_objective(self, features: Sequence[FeatureVector]) -> float:
        return float(sum(hellinger(f, self.centers[j]) for f, j in zip(features, self.assignments)))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "centers": [None if c is None else c.tolist() for c in self.centers],
            "assignments": self.assignments.tolist(),
            "J": self.objective,
            "trace": list(self.trace),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Clustering":
        centers = [None if c is None else np.asarray(c, dtype=np.float64) for c in d["centers"]]
        return cls(d["k"], centers, np.asarray(d["assignments"], dtype=np.int64), d["J"], d.get("trace", []), d.get("config", {}))


def _seed_centers(R: np.ndarray, k: int, separation: float, rng: np.random.Generator) -> list[int]:
    chosen = [int(rng.integers(len(R)))]
    nearest = _rowwise(R, np.broadcast_to(R[chosen[0]], R.shape))
    while len(chosen) < k:
        far = int(np.argmax(nearest))
        if nearest[far] <= separation:
            break
        chosen.append(far)
        nearest = np.minimum(nearest, _rowwise(R, np.broadcast_to(R[far], R.shape)))
    return chosen


def _assign(R: np.ndarray, C: np.ndarray, live: np.ndarray, current: Optional[np.ndarray]):
    """Nearest live center per row; a row only moves if strictly closer."""
    approx = _approx_pairwise(R, C)
    approx[:, ~live] = np.inf
    cand = np.argmin(approx, axis=1)
    d_cand = _rowwise(R, C[cand])
    if current is None:
        return cand, d_cand
    d_cur = _rowwise(R, C[current])
    move = d_cand < d_cur
    return np.where(move, cand, current), np.where(move, d_cand, d_cur)


def kmeans(features: Sequence[FeatureVector], k: int, config: Optional[KMeansConfig] = None) -> Clustering:
    """Hellinger k-means with pooled-count centers.

    Alternates nearest-center assignment with a center update to the pooled
    (count-weighted) pdf of the members.  A pooled center is only adopted if
    it does not raise that cluster's share of the objective, so J never
    increases.  Clusters without members stay empty.
    """
    config = config or KMeansConfig()
    if k < 1:
        raise ValueError("k must be >= 1")
    if not features:
        raise ValueError("k-means needs at least one feature vector")
    pdfs, lengths = feature_matrix(features)
    R = np.sqrt(pdfs)
    A = pdfs.shape[1]

    if config.separation == "auto":
        separation = config.separation_factor * noise_floor(pdfs, lengths)
    else:
        separation = float(config.separation)
    rng = np.random.default_rng(config.seed)
    seeds = _seed_centers(R, k, separation, rng)

    C = np.zeros((k, A))
    live = np.zeros(k, dtype=bool)
    C[: len(seeds)] = R[seeds]
    live[: len(seeds)] = True

    assign, dist = _assign(R, C, live, None)
    J = float(dist.sum())
    trace = [J]
    for it in range(config.max_iters):
        counts = pdfs * lengths[:, None]
        for j in np.flatnonzero(live):
            mask = assign == j
            if not mask.any():
                live[j] = False
                C[j] = 0.0
                continue
            pooled = counts[mask].sum(axis=0)
            cand = np.sqrt(pooled / pooled.sum())
            new = _rowwise(R[mask], np.broadcast_to(cand, (mask.sum(), A)))
            if new.sum() <= dist[mask].sum():
                C[j] = cand
                dist[mask] = new
        assign, dist = _assign(R, C, live, assign)
        J_new = float(dist.sum())
        if J_new > J + 1e-12:
            raise RuntimeError(f"k-means objective increased at iteration {it}: {J} -> {J_new}")
        trace.append(J_new)
        log.debug("kmeans iter %d J=%.12g", it, J_new)
        done = J - J_new < config.tol
        J = J_new
        if done:
            break

    used = np.zeros(k, dtype=bool)
    used[np.unique(assign)] = True
    centers = [C[j] ** 2 / (C[j] ** 2).sum() if used[j] else None for j in range(k)]
    clustering = Clustering(k, centers, assign.astype(np.int64), 0.0, trace, asdict(config) | {"separation_used": separation})
    # Report J against the normalised centers exactly as stored.
    clustering.objective = float(
        _rowwise(R, np.sqrt(np.stack([centers[j] for j in assign]))).sum()
    )
    return clustering


def classify(x: Union[FeatureVector, np.ndarray], clustering: Clustering) -> int:
    """Index of the nearest nonempty cluster; ties go to the lowest index."""
    best, best_d = -1, math.inf
    for j, c in enumerate(clustering.centers):
        if c is None:
            continue
        d = hellinger(x, c)
        if d < best_d:
            best, best_d = j, d
    if best < 0:
        raise ValueError("all clusters are empty")
    return best


@dataclass
class SubClusterIndex:
    """Fine-grained partition of the memory used for k-nearest selection."""

    centers: list[np.ndarray]
    members: list[list[int]]

    @property
    def m(self) -> int:
        return len(self.centers)

    def to_dict(self) -> dict:
        return {"centers": [c.tolist() for c in self.centers], "members": self.members}

    @classmethod
    def from_dict(cls, d: dict) -> "SubClusterIndex":
        return cls([np.asarray(c, dtype=np.float64) for c in d["centers"]], [list(map(int, m)) for m in d["members"]])


def build_subclusters(features: Sequence[FeatureVector], m: int, config: Optional[KMeansConfig] = None) -> SubClusterIndex:
    """Partition the memory into m sub-clusters with k-means (all seeds placed)."""
    if m < 1 or m > len(features):
        raise ValueError(f"sub-cluster count m={m} must lie in [1, {len(features)}]")
    base = config or KMeansConfig()
    cfg = KMeansConfig(base.max_iters, base.tol, base.seed, separation=0.0)
    cl = kmeans(features, m, cfg)
    centers, members = [], []
    for j in range(m):
        ids = cl.members(j)
        if len(ids):
            centers.append(cl.centers[j])
            members.append(ids.tolist())
    return SubClusterIndex(centers, members)


def knearest_training_set(
    x: Union[FeatureVector, np.ndarray], index: SubClusterIndex, min_training_num: int = 200
) -> tuple[list[int], list[int]]:
    """Merge nearest sub-clusters until ``min_training_num`` packets are selected.

    Returns (packet ids, merged sub-cluster ids in merge order).
    """
    if min_training_num < 1:
        raise ValueError("min_training_num must be >= 1")
    dists = [hellinger(x, c) for c in index.centers]
    order = sorted(range(index.m), key=lambda i: (dists[i], i))
    ids: list[int] = []
    merged: list[int] = []
    for i in order:
        if len(ids) >= min_training_num:
            break
        merged.append(i)
        ids.extend(index.members[i])
    return ids, merged
