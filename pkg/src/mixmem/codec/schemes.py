"""Compression schemes as priming policies over a shared memory.

Container layout (little-endian)::

    u8  scheme tag   0 Ucomp, 1 UcompM1, 2 UcompMc (k-means), 3 UcompMS,
                     4 UcompMc (k-nearest selection)
    u8  model order  0 or 1
    u16 cluster id                       (tag 2 only)
    u16 count, count x u16 sub-cluster   (tag 4 only)
    u32 original length
    ... payload
    u32 CRC-32 of everything above

UcompMS needs the packet's true source index at both ends; it travels out of
band and is not stored in the container.  The CRC lets the decoder reject a
corrupted container outright; a bare arithmetic-coded payload has no
redundancy left to catch every bit flip on its own.
"""
from __future__ import annotations

import enum
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

from ..clustering import FeatureVector, classify, knearest_training_set
from ..memory import MemoryStore
from ..sources import Packet
from .coder import CodecOutput, DecodeError, decode, encode
from .model import KTModel


class Scheme(str, enum.Enum):
    UCOMP = "Ucomp"
    UCOMP_M1 = "UcompM1"
    UCOMP_MC = "UcompMc"
    UCOMP_MS = "UcompMS"


ALL_SCHEMES = tuple(Scheme)

_TAG_KNEAREST = 4
_TAGS = {Scheme.UCOMP: 0, Scheme.UCOMP_M1: 1, Scheme.UCOMP_MC: 2, Scheme.UCOMP_MS: 3}
_SCHEME_OF_TAG = {v: k for k, v in _TAGS.items()} | {_TAG_KNEAREST: Scheme.UCOMP_MC}


class SchemePrerequisiteError(ValueError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    order: int = 0
    prime_weight: float = 1.0
    selection: str = "kmeans"  # or "knearest"
    min_training_num: int = 200

    def __post_init__(self):
        if self.selection not in ("kmeans", "knearest"):
            raise ValueError("selection must be 'kmeans' or 'knearest'")


@dataclass
class SchemeResult:
    scheme: Scheme
    output: CodecOutput
    header_bits: int = 0
    cluster_id: Optional[int] = None
    subclusters: list[int] = field(default_factory=list)
    training_size: int = 0
    container: bytes = b""

    @property
    def total_bits(self) -> int:
        return self.output.codelength_bits + self.header_bits

    @property
    def bits_per_byte(self) -> float:
        return self.total_bits / self.output.n


def _id_bits(count: int) -> int:
    return math.ceil(math.log2(count)) if count > 1 else 0


def priming_positions(
    memory: MemoryStore,
    scheme: Scheme,
    *,
    cluster_id: Optional[int] = None,
    subclusters: Optional[list[int]] = None,
    source_index: Optional[int] = None,
) -> tuple[object, list[int]]:
    """Cache key and compressible-list positions of the packets to prime with."""
    scheme = Scheme(scheme)
    if scheme is Scheme.UCOMP:
        return "fresh", []
    if scheme is Scheme.UCOMP_M1:
        return "all", list(range(len(memory.compressible_ids)))
    if scheme is Scheme.UCOMP_MS:
        if source_index is None or not memory.has_true_indices:
            raise SchemePrerequisiteError("UcompMS needs true source indices for memory and packet")
        ids = memory.compressible_ids
        pos = [j for j, i in enumerate(ids) if memory.packets[i].source_index == source_index]
        return ("source", source_index), pos
    if subclusters is not None:
        index = memory.subclusters
        if index is None:
            raise SchemePrerequisiteError("k-nearest selection needs a sub-cluster index")
        if any(not 0 <= s < index.m for s in subclusters):
            raise DecodeError("sub-cluster id out of range")
        return ("subclusters", tuple(subclusters)), [p for s in subclusters for p in index.members[s]]
    cl = memory.clustering
    if cl is None:
        raise SchemePrerequisiteError("UcompMc needs a clustered memory")
    if cl.nonempty_count == 0:
        return "fresh", []
    if cluster_id is None or not 0 <= cluster_id < cl.k:
        raise DecodeError(f"cluster id {cluster_id} out of range")
    return ("cluster", cluster_id), cl.members(cluster_id).tolist()


def starting_model(memory: MemoryStore, scheme, config: SchemeConfig, **selector) -> tuple[KTModel, int]:
    """The model both ends start from, and the number of priming packets."""
    key, positions = priming_positions(memory, scheme, **selector)
    cache_key = (key, config.order, config.prime_weight)
    model = memory._cache.get(cache_key)
    if model is None:
        model = KTModel(memory.alphabet, config.order)
        if positions:
            model = model.prime(memory.packets_at(positions), config.prime_weight)
        memory._cache[cache_key] = model
    return model, len(positions)


def compress_scheme(packet: Packet, memory: MemoryStore, scheme, config: Optional[SchemeConfig] = None) -> SchemeResult:
    """Encode ``packet`` under ``scheme`` using ``memory`` as side information."""
    config = config or SchemeConfig()
    scheme = Scheme(scheme)
    cluster_id = None
    subclusters = None
    header_bits = 0
    kw = {}
    if scheme is Scheme.UCOMP_MC:
        feat = FeatureVector.from_packet(packet, memory.alphabet)
        if config.selection == "knearest":
            if memory.subclusters is None:
                raise SchemePrerequisiteError("k-nearest selection needs a sub-cluster index")
            if memory.subclusters.m:
                _, subclusters = knearest_training_set(feat, memory.subclusters, config.min_training_num)
            else:
                subclusters = []
            m = memory.subclusters.m
            header_bits = _id_bits(m + 1) + len(subclusters) * _id_bits(m)
            kw["subclusters"] = subclusters
        else:
            if memory.clustering is None:
                raise SchemePrerequisiteError("UcompMc needs a clustered memory")
            cl = memory.clustering
            cluster_id = classify(feat, cl) if cl.nonempty_count else 0
            # Both ends know which clusters are empty, so the id only has to
            # distinguish the nonempty ones.
            header_bits = _id_bits(cl.nonempty_count)
            kw["cluster_id"] = cluster_id
    elif scheme is Scheme.UCOMP_MS:
        kw["source_index"] = packet.source_index

    model, training = starting_model(memory, scheme, config, **kw)
    out = encode(packet, model)
    container = pack_container(scheme, config.order, out, cluster_id, subclusters)
    return SchemeResult(scheme, out, header_bits, cluster_id, subclusters or [], training, container)


def pack_container(scheme: Scheme, order: int, out: CodecOutput, cluster_id=None, subclusters=None) -> bytes:
    scheme = Scheme(scheme)
    tag = _TAG_KNEAREST if subclusters is not None else _TAGS[scheme]
    parts = [struct.pack("<BB", tag, order)]
    if tag == _TAGS[Scheme.UCOMP_MC]:
        parts.append(struct.pack("<H", cluster_id))
    elif tag == _TAG_KNEAREST:
        parts.append(struct.pack(f"<H{len(subclusters)}H", len(subclusters), *subclusters))
    parts.append(struct.pack("<I", out.n))
    parts.append(out.payload)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


@dataclass(frozen=True)
class Container:
    scheme: Scheme
    order: int
    n: int
    payload: bytes
    cluster_id: Optional[int] = None
    subclusters: Optional[list[int]] = None


def unpack_container(blob: bytes) -> Container:
    blob = bytes(blob)
    if len(blob) < 4 or zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise DecodeError("container checksum mismatch")
    blob = blob[:-4]
    try:
        tag, order = struct.unpack_from("<BB", blob, 0)
        off = 2
        if tag not in _SCHEME_OF_TAG:
            raise DecodeError(f"unknown scheme tag {tag}")
        if order not in (0, 1):
            raise DecodeError(f"bad model order {order}")
        cluster_id = subclusters = None
        if tag == _TAGS[Scheme.UCOMP_MC]:
            (cluster_id,) = struct.unpack_from("<H", blob, off)
            off += 2
        elif tag == _TAG_KNEAREST:
            (count,) = struct.unpack_from("<H", blob, off)
            off += 2
            subclusters = list(struct.unpack_from(f"<{count}H", blob, off))
            off += 2 * count
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
    except struct.error as exc:
        raise DecodeError(f"truncated container: {exc}") from None
    return Container(_SCHEME_OF_TAG[tag], order, n, bytes(blob[off:]), cluster_id, subclusters)


def decompress_scheme(
    blob: bytes, memory: MemoryStore, config: Optional[SchemeConfig] = None, source_index: Optional[int] = None
) -> Packet:
    """Decode a container produced by :func:`compress_scheme`."""
    config = config or SchemeConfig()
    c = unpack_container(blob)
    if c.order != config.order:
        config = SchemeConfig(c.order, config.prime_weight, config.selection, config.min_training_num)
    kw = {}
    if c.cluster_id is not None:
        kw["cluster_id"] = c.cluster_id
    if c.subclusters is not None:
        kw["subclusters"] = c.subclusters
    if c.scheme is Scheme.UCOMP_MS:
        kw["source_index"] = source_index
    model, _ = starting_model(memory, c.scheme, config, **kw)
    pkt = decode(c.payload, c.n, model)
    return Packet(pkt.data, source_index, memory.alphabet)
