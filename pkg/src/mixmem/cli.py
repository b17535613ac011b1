"""Command-line entry point: ``mixmem <command> ...``.

Commands::

    generate    synthesize memory and test packets from an experiment config
    cluster     k-means (and optionally sub-cluster) a saved memory
    compress    encode a packet file under one scheme
    decompress  decode a container file back to packets
    limits      theoretical redundancy report for a config
    run         full benchmark, writes report.json and report.csv
"""
from __future__ import annotations

import argparse
import json
import logging
import struct
import sys
from pathlib import Path

from .clustering import KMeansConfig
from .codec.coder import DecodeError
from .codec.schemes import Scheme, SchemeConfig, compress_scheme, decompress_scheme
from .harness import (
    ConfigError,
    fig3_config,
    limits_report,
    load_config,
    normalize_config,
    prepare,
    report_json,
    run_experiment,
    write_report,
)
from .memory import MemoryStore
from .sources import Packet, PacketFormatError, read_packets, write_packets

log = logging.getLogger("mixmem")


def write_containers(fh, blobs) -> None:
    fh.write(struct.pack("<I", len(blobs)))
    for b in blobs:
        fh.write(struct.pack("<I", len(b)))
        fh.write(b)


def read_containers(fh) -> list[bytes]:
    data = fh.read()
    try:
        (count,) = struct.unpack_from("<I", data, 0)
        off, out = 4, []
        for _ in range(count):
            (size,) = struct.unpack_from("<I", data, off)
            off += 4
            if off + size > len(data):
                raise DecodeError(f"container truncated at byte {off}")
            out.append(data[off:off + size])
            off += size
    except struct.error:
        raise DecodeError("truncated container file") from None
    return out


def _config(args) -> dict:
    cfg = load_config(args.config) if args.config else fig3_config()
    over = {}
    for key in ("n", "T", "seed", "order", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "test_packets", None) is not None:
        over["test_packets"] = args.test_packets
    if getattr(args, "schemes", None):
        over["schemes"] = args.schemes.split(",")
    if getattr(args, "k", None) is not None:
        over.setdefault("clustering", {})["k"] = args.k
    cfg = {**cfg, **{k: v for k, v in over.items() if k != "clustering"}}
    if "clustering" in over:
        cfg["clustering"] = {**cfg["clustering"], **over["clustering"]}
    return normalize_config(cfg)


def cmd_generate(args) -> None:
    cfg = _config(args)
    work = prepare(cfg)
    out = Path(args.out)
    work.memory.save(out / "memory")
    with open(out / "test.bin", "wb") as fh:
        write_packets(fh, work.test)
    (out / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))
    print(f"memory: {work.memory.T} packets ({len(work.memory.rejected_ids)} gate-rejected) -> {out / 'memory'}")
    print(f"test:   {len(work.test)} packets -> {out / 'test.bin'}")


def cmd_cluster(args) -> None:
    memory = MemoryStore.load(args.memory)
    kcfg = KMeansConfig(max_iters=args.max_iters, seed=args.seed)
    memory = memory.cluster(args.k, kcfg)
    if args.subclusters is not None:
        memory = memory.with_subclusters(args.subclusters or None, kcfg)
    memory.save(args.memory)
    cl = memory.clustering
    print(f"k={cl.k} nonempty={cl.nonempty_count} J={cl.objective:.6f} iterations={len(cl.trace) - 1}")
    if memory.subclusters is not None:
        print(f"sub-clusters: {memory.subclusters.m}")


def _scheme_config(args) -> SchemeConfig:
    return SchemeConfig(args.order, args.prime_weight, args.selection, args.min_training_num)


def cmd_compress(args) -> None:
    memory = MemoryStore.load(args.memory)
    with open(args.input, "rb") as fh:
        packets = [Packet(p.data, p.source_index, memory.alphabet) for p in read_packets(fh)]
    scfg = _scheme_config(args)
    blobs, bits, n = [], 0, 0
    for p in packets:
        r = compress_scheme(p, memory, args.scheme, scfg)
        blobs.append(r.container)
        bits += r.total_bits
        n += len(p)
    with open(args.out, "wb") as fh:
        write_containers(fh, blobs)
    rate = bits / n if n else 0.0
    print(f"{len(packets)} packets, {n} bytes -> {bits} bits ({rate:.4f} bits/byte) under {Scheme(args.scheme).value}")


def cmd_decompress(args) -> None:
    memory = MemoryStore.load(args.memory)
    with open(args.input, "rb") as fh:
        blobs = read_containers(fh)
    indices = [None] * len(blobs)
    if args.indices:
        with open(args.indices, "rb") as fh:
            indices = [p.source_index for p in read_packets(fh)]
        if len(indices) != len(blobs):
            raise DecodeError("index file does not match the container count")
    scfg = _scheme_config(args)
    packets = [decompress_scheme(b, memory, scfg, z) for b, z in zip(blobs, indices)]
    with open(args.out, "wb") as fh:
        write_packets(fh, packets)
    print(f"{len(packets)} packets -> {args.out}")


def cmd_limits(args) -> None:
    report = limits_report(_config(args))
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def cmd_run(args) -> None:
    report = run_experiment(_config(args))
    if args.out:
        jp, cp = write_report(report, args.out)
        log.info("wrote %s and %s", jp, cp)
    else:
        print(report_json(report))
        return
    for s, res in report["schemes"].items():
        print(f"{s:9s} {res['mean']:.4f} +- {res['stddev']:.4f} bits/byte over {res['count']} packets")
    if "adjusted_rand_index" in report["memory"]:
        print(f"ARI {report['memory']['adjusted_rand_index']:.4f}")


def _add_config_args(p) -> None:
    p.add_argument("--config", help="experiment config JSON (default: built-in man-made mixture)")
    p.add_argument("--n", type=int, help="packet length")
    p.add_argument("--T", type=int, help="memory size in packets")
    p.add_argument("--test-packets", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--order", type=int, choices=(0, 1))
    p.add_argument("--k", type=int, help="number of clusters")
    p.add_argument("--schemes", help="comma-separated scheme names")
    p.add_argument("--workers", type=int)


def _add_scheme_args(p) -> None:
    p.add_argument("--memory", required=True, help="memory directory")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int, choices=(0, 1), default=0)
    p.add_argument("--prime-weight", type=float, default=1.0)
    p.add_argument("--selection", choices=("kmeans", "knearest"), default="kmeans")
    p.add_argument("--min-training-num", type=int, default=200)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixmem", description="Memory-assisted universal compression benchmark")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize memory and test packets")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("cluster", help="cluster a saved memory")
    p.add_argument("--memory", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--subclusters", type=int, nargs="?", const=0, help="also build m sub-clusters (default T/10)")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("compress", help="encode packets under one scheme")
    _add_scheme_args(p)
    p.add_argument("--scheme", required=True, choices=[s.value for s in Scheme])
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode a container file")
    _add_scheme_args(p)
    p.add_argument("--indices", help="packet file supplying source indices (UcompMS)")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("limits", help="theoretical redundancy report")
    _add_config_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("run", help="full benchmark")
    _add_config_args(p)
    p.add_argument("--out", help="output directory for report.json / report.csv")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, DecodeError, PacketFormatError, ValueError, OSError) as exc:
        print(f"mixmem: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
