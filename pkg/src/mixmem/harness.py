"""Experiment orchestration: build memory, cluster, compress, compare to limits.

Experiment config (JSON)::

    {
      "seed": 1, "n": 1500, "T": 1800, "test_packets": 200,
      "schemes": ["Ucomp", "UcompM1", "UcompMc", "UcompMS"],
      "order": 1, "prime_weight": 1.0, "incompressible_fraction": 0.0,
      "workers": 1,
      "mixture": {
        "alphabet": 256,
        "weights": null,                     # null = uniform
        "sources": [
          {"kind": "memoryless", "seed": 100, "support": 64, "pool": 64},
          {"kind": "markov1", "seed": 200, "support": 24, "pool": 64},
          {"kind": "memoryless", "theta": [...]}            # explicit parameters
        ]
      },
      "trace": null,                         # or {"memory": path, "test": path}
      "clustering": {"k": null, "selection": "kmeans", "m": null,
                     "min_training_num": 200, "gate_threshold": 7.5,
                     "max_iters": 100, "seed": 0, "separation": "auto"},
      "limits": {"delta": 0.0, "hysteresis": 1.0, "small_memory_allowance": 0.0}
    }

A source with an integer ``support`` draws from Dirichlet(1/2) restricted to
that many symbols picked (with the source seed) from ``range(pool)``.  A null
``k`` means twice the number of sources.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.metrics import adjusted_rand_score

from .clustering import (
    DEFAULT_GATE_THRESHOLD,
    FeatureVector,
    GateVerdict,
    KMeansConfig,
    classify,
    compressibility_gate,
    knearest_training_set,
)
from .codec.schemes import ALL_SCHEMES, Scheme, SchemeConfig, compress_scheme, priming_positions
from .limits import LimitInputs, RedundancyReport, build_report
from .memory import MemoryStore
from .mixture import MixtureSpec, generate_side_info, packet_seed
from .sources import Packet, ParamSource, entropy_per_packet, read_packets, sample_jeffreys

log = logging.getLogger(__name__)

DEFAULT_CLUSTERING = {
    "k": None,
    "selection": "kmeans",
    "m": None,
    "min_training_num": 200,
    "gate_threshold": DEFAULT_GATE_THRESHOLD,
    "max_iters": 100,
    "seed": 0,
    "separation": "auto",
}
DEFAULT_LIMITS = {"delta": 0.0, "hysteresis": 1.0, "small_memory_allowance": 0.0}
DEFAULT_CONFIG = {
    "seed": 0,
    "n": 1500,
    "T": 1800,
    "test_packets": 200,
    "schemes": [s.value for s in ALL_SCHEMES],
    "order": 1,
    "prime_weight": 1.0,
    "incompressible_fraction": 0.0,
    "workers": 1,
    "mixture": None,
    "trace": None,
    "clustering": DEFAULT_CLUSTERING,
    "limits": DEFAULT_LIMITS,
}


class ConfigError(ValueError):
    pass


def fig3_mixture(n_memoryless: int = 3, n_markov: int = 3, alphabet: int = 256, pool: int = 64,
                 markov_support: int = 24, seed: int = 100) -> dict:
    """Desk-scale analogue of the 3 memoryless + 3 Markov man-made mixture.

    Memoryless sources spread over the whole pool; each Markov source lives on
    its own random subset of it, so the sources overlap but stay separable.
    """
    sources = [{"kind": "memoryless", "seed": seed + i, "support": pool, "pool": pool} for i in range(n_memoryless)]
    sources += [
        {"kind": "markov1", "seed": seed + 100 + i, "support": markov_support, "pool": pool} for i in range(n_markov)
    ]
    return {"alphabet": alphabet, "weights": None, "sources": sources}


def fig3_config(**overrides) -> dict:
    cfg = normalize_config({"seed": 1, "mixture": fig3_mixture()})
    cfg.update(overrides)
    return normalize_config(cfg)


def normalize_config(raw: dict) -> dict:
    """Fill defaults and validate an experiment config."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for key, val in raw.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        if key in ("clustering", "limits") and val is not None:
            unknown = set(val) - set(cfg[key])
            if unknown:
                raise ConfigError(f"unknown {key} keys {sorted(unknown)}")
            cfg[key] = {**cfg[key], **val}
        else:
            cfg[key] = copy.deepcopy(val)
    if (cfg["mixture"] is None) == (cfg["trace"] is None):
        raise ConfigError("exactly one of 'mixture' and 'trace' must be given")
    try:
        cfg["schemes"] = [Scheme(s).value for s in cfg["schemes"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["n"] < 2 or cfg["T"] < 0 or cfg["test_packets"] < 0:
        raise ConfigError("need n >= 2, T >= 0 and test_packets >= 0")
    if cfg["order"] not in (0, 1):
        raise ConfigError("order must be 0 or 1")
    if not 0.0 <= cfg["incompressible_fraction"] < 1.0:
        raise ConfigError("incompressible_fraction must lie in [0, 1)")
    if cfg["clustering"]["selection"] not in ("kmeans", "knearest"):
        raise ConfigError("clustering.selection must be 'kmeans' or 'knearest'")
    return cfg


def build_mixture(mix: dict) -> MixtureSpec:
    A = int(mix.get("alphabet", 256))
    sources = []
    for i, s in enumerate(mix["sources"]):
        if "theta" in s:
            sources.append(ParamSource.from_dict(s))
            continue
        support = s.get("support")
        if isinstance(support, int):
            pool = int(s.get("pool", A))
            rng = np.random.default_rng([int(s["seed"]), 1])
            support = sorted(rng.choice(pool, size=support, replace=False).tolist())
        sources.append(sample_jeffreys(s["kind"], A, s["seed"], support=support))
    weights = mix.get("weights")
    if weights is None:
        return MixtureSpec.uniform(sources)
    return MixtureSpec(tuple(sources), np.asarray(weights, dtype=np.float64))


def _noise_packets(packets, fraction: float, seed: int, n: int, noise_index: int, salt: int) -> list[Packet]:
    if fraction <= 0:
        return list(packets)
    out = []
    for t, p in enumerate(packets):
        rng = np.random.default_rng(packet_seed(seed, salt + t))
        if rng.random() < fraction:
            p = Packet(rng.integers(0, 256, n, dtype=np.uint8).tobytes(), noise_index, p.alphabet)
        out.append(p)
    return out


_TEST_OFFSET = 1 << 40
_NOISE_SALT = 1 << 41


def ingest_trace(path, threshold: float = DEFAULT_GATE_THRESHOLD, alphabet: Optional[int] = None) -> MemoryStore:
    """Load a packet file as a gated memory store."""
    with open(path, "rb") as fh:
        packets = read_packets(fh)
    if alphabet is not None:
        packets = [Packet(p.data, p.source_index, alphabet) for p in packets]
    return MemoryStore.build(packets, threshold, alphabet or (packets[0].alphabet if packets else 256))


@dataclass
class Workload:
    memory: MemoryStore
    test: list[Packet]
    spec: Optional[MixtureSpec]
    n: int


def prepare(cfg: dict) -> Workload:
    """Generate or load memory and test packets; gate the memory."""
    cl = cfg["clustering"]
    if cfg["trace"] is not None:
        memory = ingest_trace(cfg["trace"]["memory"], cl["gate_threshold"])
        with open(cfg["trace"]["test"], "rb") as fh:
            test = read_packets(fh)
        test = [Packet(p.data, p.source_index, memory.alphabet) for p in test]
        return Workload(memory, test, None, cfg["n"])

    spec = build_mixture(cfg["mixture"])
    n, seed = cfg["n"], cfg["seed"]
    side = generate_side_info(spec, n, cfg["T"], seed)
    test = generate_side_info(spec, n, cfg["test_packets"], seed, offset=_TEST_OFFSET).packets
    frac = cfg["incompressible_fraction"]
    mem_packets = _noise_packets(side.packets, frac, seed, n, spec.K, _NOISE_SALT)
    test = _noise_packets(test, frac, seed, n, spec.K, _NOISE_SALT + _TEST_OFFSET)
    memory = MemoryStore.build(mem_packets, cl["gate_threshold"], spec.alphabet)
    return Workload(memory, test, spec, n)


def cluster_memory(memory: MemoryStore, cfg: dict, n_sources: Optional[int]) -> MemoryStore:
    cl = cfg["clustering"]
    kcfg = KMeansConfig(max_iters=cl["max_iters"], seed=cl["seed"], separation=cl["separation"])
    k = cl["k"] or 2 * (n_sources or 8)
    memory = memory.cluster(k, kcfg)
    if cl["selection"] == "knearest":
        memory = memory.with_subclusters(cl["m"], kcfg)
    return memory


def limits_report(cfg: dict, spec: Optional[MixtureSpec] = None) -> RedundancyReport:
    """Theoretical limits for the config's (n, m = n T, w, d)."""
    cfg = normalize_config(cfg)
    if spec is None:
        if cfg["mixture"] is None:
            raise ConfigError("limits need a mixture description, not a trace")
        spec = build_mixture(cfg["mixture"])
    n, m = cfg["n"], cfg["n"] * cfg["T"]
    inputs = LimitInputs.from_spec(spec, n, m, **cfg["limits"])
    try:
        base = [entropy_per_packet(s, n) for s in spec.sources]
    except ValueError:
        base = None
    return build_report(inputs, base)


def _summary(values) -> dict:
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return {"mean": None, "stddev": None, "count": 0}
    return {"mean": float(a.mean()), "stddev": float(a.std(ddof=1)) if a.size > 1 else 0.0, "count": int(a.size)}


def _compress_chunk(args):
    memory, packets, schemes, scfg = args
    rows = []
    for p in packets:
        for s in schemes:
            r = compress_scheme(p, memory, s, scfg)
            rows.append((s, r.bits_per_byte, r.header_bits, r.training_size))
    return rows


def run_experiment(config: dict) -> dict:
    """Run every configured scheme on every test packet and collect a report."""
    cfg = normalize_config(config)
    work = prepare(cfg)
    memory, spec = work.memory, work.spec
    schemes = [Scheme(s) for s in cfg["schemes"]]
    has_idx = memory.has_true_indices and all(p.source_index is not None for p in work.test)
    if Scheme.UCOMP_MS in schemes and not has_idx:
        raise ConfigError("UcompMS requires true source indices for memory and test packets")

    memory = cluster_memory(memory, cfg, spec.K if spec else None)
    log.info(
        "memory: %d packets, %d gate-rejected, %d nonempty clusters",
        memory.T, len(memory.rejected_ids), memory.clustering.nonempty_count,
    )
    cl = cfg["clustering"]
    scfg = SchemeConfig(cfg["order"], cfg["prime_weight"], cl["selection"], cl["min_training_num"])

    gated = [compressibility_gate(p, memory.threshold) is GateVerdict.COMPRESSIBLE for p in work.test]
    accepted = [p for p, ok in zip(work.test, gated) if ok]
    rejected = [p for p, ok in zip(work.test, gated) if not ok]

    workers = max(1, int(cfg["workers"]))
    if workers > 1 and accepted:
        chunks = [accepted[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_compress_chunk, [(memory, c, schemes, scfg) for c in chunks]))
        # Re-interleave so results follow test-packet order.
        per = len(schemes)
        rows = []
        for i in range(len(accepted)):
            part = parts[i % workers]
            j = i // workers
            rows.extend(part[j * per:(j + 1) * per])
    else:
        rows = _compress_chunk((memory, accepted, schemes, scfg))

    per_scheme = {s.value: {"all": [], "by_source": {}} for s in schemes}
    headers = {s.value: [] for s in schemes}
    for i, (s, bpb, hb, _) in enumerate(rows):
        p = accepted[i // len(schemes)]
        entry = per_scheme[s.value]
        entry["all"].append(bpb)
        key = "unknown" if p.source_index is None else str(p.source_index)
        entry["by_source"].setdefault(key, []).append(bpb)
        headers[s.value].append(hb)

    results = {}
    for s, entry in per_scheme.items():
        results[s] = _summary(entry["all"])
        results[s]["per_source"] = {k: _summary(v) for k, v in sorted(entry["by_source"].items(), key=lambda kv: _source_key(kv[0]))}
        results[s]["mean_header_bits"] = float(np.mean(headers[s])) if headers[s] else 0.0

    rejected_by_source = {}
    for p in rejected:
        key = "unknown" if p.source_index is None else str(p.source_index)
        rejected_by_source[key] = rejected_by_source.get(key, 0) + 1

    audit = _audit_priming(memory, accepted, schemes, scfg)

    report = {
        "config": cfg,
        "memory": {
            "T": memory.T,
            "compressible": len(memory.compressible_ids),
            "gate_rejected": len(memory.rejected_ids),
            "k": memory.clustering.k,
            "clusters_nonempty": memory.clustering.nonempty_count,
            "objective_J": memory.clustering.objective,
            "subclusters": memory.subclusters.m if memory.subclusters is not None else None,
        },
        "schemes": results,
        "gate_rejected_test": {"count": len(rejected), "per_source": rejected_by_source, "bits_per_byte": 8.0},
        "audit": audit,
    }
    if memory.has_true_indices and memory.compressible_ids:
        truth = [memory.packets[i].source_index for i in memory.compressible_ids]
        report["memory"]["adjusted_rand_index"] = float(adjusted_rand_score(truth, memory.clustering.assignments))
    if spec is not None:
        report["limits"] = limits_report(cfg, spec).to_dict()
        report["entropy_bits_per_byte"] = {}
        for i, src in enumerate(spec.sources):
            try:
                report["entropy_bits_per_byte"][str(i)] = entropy_per_packet(src, work.n) / work.n
            except ValueError:
                report["entropy_bits_per_byte"][str(i)] = None
    return report


def _source_key(k: str):
    return (1, 0) if k == "unknown" else (0, int(k))


def _audit_priming(memory: MemoryStore, packets, schemes, scfg) -> dict:
    """Check that no gate-rejected memory packet is ever used for priming."""
    rejected = set(memory.rejected_ids)
    ids = memory.compressible_ids
    used: set[int] = set()
    keys = set()
    for p in packets:
        for s in schemes:
            kw = {}
            if s is Scheme.UCOMP_MC:
                f = FeatureVector.from_packet(p, memory.alphabet)
                if scfg.selection == "knearest":
                    kw["subclusters"] = knearest_training_set(f, memory.subclusters, scfg.min_training_num)[1] if memory.subclusters.m else []
                else:
                    cl = memory.clustering
                    kw["cluster_id"] = classify(f, cl) if cl.nonempty_count else 0
            elif s is Scheme.UCOMP_MS:
                kw["source_index"] = p.source_index
            key, positions = priming_positions(memory, s, **kw)
            if key in keys:
                continue
            keys.add(key)
            used.update(ids[j] for j in positions)
    leaked = sorted(used & rejected)
    return {"priming_sets": len(keys), "rejected_in_priming": len(leaked), "ok": not leaked}


def report_csv(report: dict) -> str:
    """Flat CSV: scheme, source, mean_bits_per_byte, stddev, n, T, k."""
    cfg = report["config"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "source", "mean_bits_per_byte", "stddev", "n", "T", "k"])
    k = report["memory"]["k"]
    for s, res in report["schemes"].items():
        w.writerow([s, "all", _fmt(res["mean"]), _fmt(res["stddev"]), cfg["n"], cfg["T"], k])
        for src, sub in res["per_source"].items():
            w.writerow([s, src, _fmt(sub["mean"]), _fmt(sub["stddev"]), cfg["n"], cfg["T"], k])
    return buf.getvalue()


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1)


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jp, cp = out / "report.json", out / "report.csv"
    jp.write_text(report_json(report))
    cp.write_text(report_csv(report))
    return jp, cp


def load_config(path) -> dict:
    with open(path) as fh:
        return normalize_config(json.load(fh))
