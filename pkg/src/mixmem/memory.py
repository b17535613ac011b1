"""The memory shared by encoder and decoder."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .clustering import (
    DEFAULT_GATE_THRESHOLD,
    Clustering,
    FeatureVector,
    GateVerdict,
    KMeansConfig,
    SubClusterIndex,
    build_subclusters,
    compressibility_gate,
    kmeans,
)
from .mixture import SideInfo
from .sources import Packet, read_packets, write_packets

PACKETS_FILE = "packets.bin"
META_FILE = "memory.json"
CLUSTERING_FILE = "clustering.json"
SUBCLUSTERS_FILE = "subclusters.json"


@dataclass
class MemoryStore:
    """Memory packets with gate verdicts, features and optional clusterings.

    Cluster assignments and sub-cluster members index into
    ``compressible_ids`` order, not into ``packets``.
    """

    packets: list[Packet]
    gate: list[GateVerdict]
    alphabet: int = 256
    threshold: float = DEFAULT_GATE_THRESHOLD
    clustering: Optional[Clustering] = None
    subclusters: Optional[SubClusterIndex] = None
    _features: Optional[list[FeatureVector]] = field(default=None, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def build(cls, packets: Iterable[Packet], threshold: float = DEFAULT_GATE_THRESHOLD, alphabet: Optional[int] = None) -> "MemoryStore":
        packets = list(packets)
        if alphabet is None:
            alphabet = packets[0].alphabet if packets else 256
        if any(p.alphabet != alphabet for p in packets):
            raise ValueError(f"memory packets must all use alphabet {alphabet}")
        gate = [compressibility_gate(p, threshold) for p in packets]
        return cls(packets, gate, alphabet, threshold)

    @classmethod
    def from_side_info(cls, side: SideInfo, threshold: float = DEFAULT_GATE_THRESHOLD, alphabet: Optional[int] = None) -> "MemoryStore":
        return cls.build(side.packets, threshold, alphabet)

    @property
    def T(self) -> int:
        return len(self.packets)

    @property
    def m(self) -> int:
        return sum(len(p) for p in self.packets)

    @property
    def compressible_ids(self) -> list[int]:
        return [i for i, g in enumerate(self.gate) if g is GateVerdict.COMPRESSIBLE]

    @property
    def rejected_ids(self) -> list[int]:
        return [i for i, g in enumerate(self.gate) if g is GateVerdict.INCOMPRESSIBLE]

    @property
    def has_true_indices(self) -> bool:
        return all(p.source_index is not None for p in self.packets)

    @property
    def features(self) -> list[FeatureVector]:
        if self._features is None:
            self._features = [FeatureVector.from_packet(self.packets[i], self.alphabet) for i in self.compressible_ids]
        return self._features

    def cluster(self, k: int, config: Optional[KMeansConfig] = None) -> "MemoryStore":
        """Copy of the store with a k-means clustering of the compressible packets."""
        feats = self.features
        if not feats:
            cl = Clustering(k, [None] * k, np.zeros(0, dtype=np.int64), 0.0, [0.0], {})
        else:
            cl = kmeans(feats, k, config)
        return replace(self, clustering=cl, _cache={})

    def with_subclusters(self, m: Optional[int] = None, config: Optional[KMeansConfig] = None) -> "MemoryStore":
        feats = self.features
        if not feats:
            return replace(self, subclusters=SubClusterIndex([], []), _cache={})
        m = m or max(1, len(feats) // 10)
        return replace(self, subclusters=build_subclusters(feats, min(m, len(feats)), config), _cache={})

    def packets_at(self, positions: Iterable[int]) -> list[Packet]:
        """Packets at positions of the compressible list."""
        ids = self.compressible_ids
        return [self.packets[ids[j]] for j in positions]

    def cluster_packets(self, j: int) -> list[Packet]:
        if self.clustering is None:
            raise ValueError("memory has not been clustered")
        return self.packets_at(self.clustering.members(j))

    def source_packets(self, z: int) -> list[Packet]:
        if not self.has_true_indices:
            raise ValueError("memory carries no true source indices")
        return [self.packets[i] for i in self.compressible_ids if self.packets[i].source_index == z]

    def compressible_packets(self) -> list[Packet]:
        return [self.packets[i] for i in self.compressible_ids]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / PACKETS_FILE, "wb") as fh:
            write_packets(fh, self.packets)
        meta = {
            "alphabet": self.alphabet,
            "threshold": self.threshold,
            "gate": [g.value for g in self.gate],
        }
        (d / META_FILE).write_text(json.dumps(meta, indent=1))
        if self.clustering is not None:
            (d / CLUSTERING_FILE).write_text(json.dumps(self.clustering.to_dict()))
        if self.subclusters is not None:
            (d / SUBCLUSTERS_FILE).write_text(json.dumps(self.subclusters.to_dict()))

    @classmethod
    def load(cls, directory) -> "MemoryStore":
        d = Path(directory)
        with open(d / PACKETS_FILE, "rb") as fh:
            packets = read_packets(fh)
        meta = json.loads((d / META_FILE).read_text())
        gate = [GateVerdict(g) for g in meta["gate"]]
        if len(gate) != len(packets):
            raise ValueError("gate verdicts do not match the packet file")
        packets = [Packet(p.data, p.source_index, meta["alphabet"]) for p in packets]
        store = cls(packets, gate, meta["alphabet"], meta["threshold"])
        if (d / CLUSTERING_FILE).exists():
            store.clustering = Clustering.from_dict(json.loads((d / CLUSTERING_FILE).read_text()))
        if (d / SUBCLUSTERS_FILE).exists():
            store.subclusters = SubClusterIndex.from_dict(json.loads((d / SUBCLUSTERS_FILE).read_text()))
        return store
