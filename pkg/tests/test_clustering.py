import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixmem.clustering import (
    HELLINGER_MAX,
    Clustering,
    FeatureVector,
    GateVerdict,
    KMeansConfig,
    SubClusterIndex,
    build_subclusters,
    classify,
    compressibility_gate,
    hellinger,
    kmeans,
    knearest_training_set,
)
from mixmem.sources import Packet, empirical_entropy, generate, sample_jeffreys


def _fv(p):
    p = np.asarray(p, dtype=float)
    return FeatureVector(p / p.sum(), 100)


def _group_packets(rng, lo, hi, count, n=400, A=256):
    return [Packet(rng.integers(lo, hi, n).astype(np.uint8).tobytes(), None, A) for _ in range(count)]


def test_gate_examples():
    assert compressibility_gate(Packet(bytes(100), None)) is GateVerdict.COMPRESSIBLE
    alt = Packet(bytes([3, 9] * 50), None)
    assert empirical_entropy(alt.symbols) == pytest.approx(1.0)
    assert compressibility_gate(alt) is GateVerdict.COMPRESSIBLE
    rng = np.random.default_rng(0)
    for _ in range(5):
        noise = Packet(rng.integers(0, 256, 1500, dtype=np.uint8).tobytes(), None)
        assert 7.7 < empirical_entropy(noise.symbols) < 8.0
        assert compressibility_gate(noise) is GateVerdict.INCOMPRESSIBLE


@settings(max_examples=100, deadline=None)
@given(data=st.binary(min_size=1, max_size=600), thr=st.floats(0.0, 8.0))
def test_gate_consistency(data, thr):
    p = Packet(data, None)
    verdict = compressibility_gate(p, thr)
    assert (verdict is GateVerdict.COMPRESSIBLE) == (empirical_entropy(p.symbols) <= thr)


def test_feature_vector():
    f = FeatureVector.from_packet(Packet(bytes([0, 0, 1, 3]), None, 4))
    assert f.pdf.tolist() == [0.5, 0.25, 0.0, 0.25]
    assert f.n == 4
    np.testing.assert_allclose(f.counts, [2, 1, 0, 1])
    with pytest.raises(ValueError):
        FeatureVector(np.array([0.5, 0.6]), 3)


def test_hellinger_examples():
    assert hellinger([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert hellinger([1, 0], [0, 1]) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)
    assert hellinger([1, 0], [0.5, 0.5]) == pytest.approx(0.5 * math.sqrt((1 - math.sqrt(0.5)) ** 2 + 0.5), abs=1e-12)
    assert hellinger([1, 0], [0.5, 0.5]) == pytest.approx(0.38268343236509, abs=1e-9)
    with pytest.raises(ValueError):
        hellinger([1, 0], [1, 0, 0])


_pdf = st.integers(2, 12).flatmap(
    lambda A: st.lists(st.lists(st.floats(0, 1), min_size=A, max_size=A).filter(lambda v: sum(v) > 1e-3), min_size=3, max_size=3)
)


@settings(max_examples=300, deadline=None)
@given(triple=_pdf)
def test_hellinger_metric_properties(triple):
    p, q, r = (np.array(v) / sum(v) for v in triple)
    assert hellinger(p, q) == hellinger(q, p)
    assert hellinger(p, p) == 0.0
    assert 0.0 <= hellinger(p, q) <= HELLINGER_MAX + 1e-15
    assert hellinger(p, r) <= hellinger(p, q) + hellinger(q, r) + 1e-12


def test_kmeans_single_cluster_is_pooled():
    rng = np.random.default_rng(1)
    pkts = [Packet(rng.integers(0, 8, int(rng.integers(10, 200))).astype(np.uint8).tobytes(), None, 8) for _ in range(30)]
    feats = [FeatureVector.from_packet(p) for p in pkts]
    cl = kmeans(feats, 1)
    pooled = sum(f.counts for f in feats)
    np.testing.assert_allclose(cl.centers[0], pooled / pooled.sum(), atol=1e-12)
    assert set(cl.assignments.tolist()) == {0}


def test_kmeans_two_disjoint_groups():
    rng = np.random.default_rng(2)
    pkts = _group_packets(rng, 0, 16, 20) + _group_packets(rng, 100, 116, 20)
    truth = [0] * 20 + [1] * 20
    feats = [FeatureVector.from_packet(p) for p in pkts]
    cl = kmeans(feats, 2, KMeansConfig(seed=4))
    a = cl.assignments.tolist()
    assert all(a[i] == a[0] for i in range(20)) and all(a[i] == a[20] for i in range(20, 40)) and a[0] != a[20]
    single = kmeans(feats, 1).objective
    assert cl.objective < single
    # Brute force over the two group-respecting partitions with pooled centers.
    def J(labels):
        total = 0.0
        for g in set(labels):
            members = [f for f, l in zip(feats, labels) if l == g]
            pooled = sum(f.counts for f in members)
            total += sum(hellinger(f, pooled / pooled.sum()) for f in members)
        return total
    assert J(truth) < J([0] * 40)
    assert cl.objective == pytest.approx(J(truth), abs=1e-9)


def _mixture_features(K=4, T=600, n=1500, seed=0):
    sources = [sample_jeffreys("memoryless", 256, 1000 + i) for i in range(K)]
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, T)
    pkts = [generate(sources[zi], n, [seed, t]) for t, zi in enumerate(z)]
    return sources, z, [FeatureVector.from_packet(p) for p in pkts]


@pytest.mark.parametrize("k,separation", [(3, "auto"), (8, "auto"), (8, 0.0), (20, 0.0)])
def test_kmeans_objective_monotone_and_recomputable(k, separation):
    _, _, feats = _mixture_features(T=300)
    cl = kmeans(feats, k, KMeansConfig(seed=3, separation=separation))
    assert all(b <= a + 1e-12 for a, b in zip(cl.trace, cl.trace[1:]))
    assert cl.recompute_objective(feats) == pytest.approx(cl.objective, abs=1e-9)
    assert cl.assignments.shape == (len(feats),)
    assert all(cl.centers[j] is not None for j in set(cl.assignments.tolist()))
    assert cl.nonempty_count == len(set(cl.assignments.tolist()))


def test_kmeans_with_large_k_leaves_clusters_empty():
    sources, z, feats = _mixture_features(K=4, T=400)
    cl = kmeans(feats, 12)
    assert cl.nonempty_count == 4
    assert sum(c is None for c in cl.centers) == 8


def test_kmeans_rejects_bad_input():
    with pytest.raises(ValueError):
        kmeans([], 2)
    with pytest.raises(ValueError):
        kmeans([_fv([1, 1])], 0)


def test_kmeans_deterministic_and_serialisable():
    _, _, feats = _mixture_features(T=200)
    a = kmeans(feats, 6, KMeansConfig(seed=9))
    b = kmeans(feats, 6, KMeansConfig(seed=9))
    assert a.to_dict() == b.to_dict()
    back = Clustering.from_dict(a.to_dict())
    assert back.to_dict() == a.to_dict()


def test_classify_rules():
    cl = Clustering(3, [np.array([1.0, 0, 0]), None, np.array([0, 0, 1.0])], np.array([0, 2]), 0.0)
    assert classify(_fv([0, 0, 1]), cl) == 2
    assert classify(_fv([1, 0, 0]), cl) == 0
    assert classify(_fv([1, 0, 1]), cl) == 0  # equidistant: lower id
    with pytest.raises(ValueError):
        classify(_fv([1, 0, 0]), Clustering(2, [None, None], np.zeros(0, dtype=int), 0.0))


def test_classify_is_length_invariant():
    cl = Clustering(2, [np.array([0.7, 0.2, 0.1, 0.0]), np.array([0.1, 0.1, 0.4, 0.4])], np.array([0, 1]), 0.0)
    short = FeatureVector.from_packet(Packet(bytes([0, 0, 1, 2, 3]), None, 4))
    long = FeatureVector.from_packet(Packet(bytes([0, 0, 1, 2, 3] * 37), None, 4))
    assert np.array_equal(short.pdf, long.pdf)
    assert classify(short, cl) == classify(long, cl)


def test_classify_recovers_generating_source():
    sources, z, feats = _mixture_features(K=4, T=400)
    cl = kmeans(feats, 8)
    dominant = {}
    for j in set(cl.assignments.tolist()):
        members = z[cl.assignments == j]
        dominant[j] = np.bincount(members, minlength=4).argmax()
    hits = 0
    for t in range(1000):
        i = t % 4
        x = FeatureVector.from_packet(generate(sources[i], 1500, [77, t]))
        hits += dominant[classify(x, cl)] == i
    assert hits / 1000 >= 0.95


def test_subclusters_extremes():
    _, _, feats = _mixture_features(T=40)
    singles = build_subclusters(feats, 40)
    assert singles.m == 40
    assert sorted(i for m in singles.members for i in m) == list(range(40))
    for c, m in zip(singles.centers, singles.members):
        assert len(m) == 1
        np.testing.assert_allclose(c, feats[m[0]].pdf, atol=1e-12)
    one = build_subclusters(feats, 1)
    assert one.m == 1 and sorted(one.members[0]) == list(range(40))
    with pytest.raises(ValueError):
        build_subclusters(feats, 41)


def test_subclusters_do_not_mix_groups():
    rng = np.random.default_rng(5)
    pkts = _group_packets(rng, 0, 16, 50) + _group_packets(rng, 100, 116, 50)
    feats = [FeatureVector.from_packet(p) for p in pkts]
    index = build_subclusters(feats, 10)
    assert sorted(i for m in index.members for i in m) == list(range(100))
    for m in index.members:
        assert len({i < 50 for i in m}) == 1


def test_knearest_hand_trace():
    # Centers on a 1-parameter path so the distances to x are exactly 0.1..0.4
    x = np.array([1.0, 0.0])

    def at(dist):
        # hellinger((1,0),(a,1-a)) = 0.5*sqrt(2 - 2 sqrt(a))
        a = (1 - 2 * dist**2) ** 2
        return np.array([a, 1 - a])

    order = [2, 0, 3, 1]
    centers = [None] * 4
    for rank, i in enumerate(order):
        centers[i] = at(0.1 * (rank + 1))
    members = [list(range(50 * i, 50 * i + 50)) for i in range(4)]
    index = SubClusterIndex(centers, members)
    assert [round(hellinger(x, c), 12) for c in centers] == [0.2, 0.4, 0.1, 0.3]
    ids, merged = knearest_training_set(x, index, 120)
    assert merged == [2, 0, 3]
    assert ids == members[2] + members[0] + members[3]
    ids, merged = knearest_training_set(x, index, 50)
    assert merged == [2]
    ids, merged = knearest_training_set(x, index, 10_000)
    assert merged == order and len(ids) == 200
    with pytest.raises(ValueError):
        knearest_training_set(x, index, 0)


def test_subcluster_index_serialisation():
    index = SubClusterIndex([np.array([0.5, 0.5])], [[0, 1, 2]])
    assert SubClusterIndex.from_dict(index.to_dict()).to_dict() == index.to_dict()
