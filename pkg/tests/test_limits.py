import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mixmem.limits import (
    LimitInputs,
    Regime,
    RedundancyReport,
    build_report,
    h_d_branches,
    log2_jeffreys_integral,
    minimax_redundancy,
    minimax_redundancy_raw,
    mixture_entropy,
    ordering_check,
    redundancy_ucomp,
    redundancy_ucompm,
    redundancy_ucompms,
    regime_threshold,
)
from mixmem.mixture import MixtureSpec
from mixmem.sources import ParamSource, entropy_per_packet, sample_jeffreys

# Closed form evaluated at 40 digits with mpmath.
BINARY_R_1024 = 4.604400544291677695
UCOMPM_D255 = 0.917426429035999627


def _jeffreys_binary_quadrature():
    val, _ = integrate.quad(lambda t: 1.0, 0, 1, weight="alg", wvar=(-0.5, -0.5), epsabs=1e-13, epsrel=1e-13)
    return val


def _jeffreys_ternary_quadrature():
    def inner(x):
        val, _ = integrate.quad(lambda y: 1.0, 0, 1 - x, weight="alg", wvar=(-0.5, -0.5), epsabs=1e-13, epsrel=1e-13)
        return val

    val, _ = integrate.quad(inner, 0, 1, weight="alg", wvar=(-0.5, 0.0), epsabs=1e-12, epsrel=1e-12)
    return val


def test_jeffreys_integral_binary_is_pi():
    q = _jeffreys_binary_quadrature()
    assert q == pytest.approx(math.pi, abs=1e-10)
    assert 2 ** log2_jeffreys_integral("memoryless", 2) == pytest.approx(q, abs=1e-10)


def test_jeffreys_integral_ternary_is_two_pi():
    q = _jeffreys_ternary_quadrature()
    assert q == pytest.approx(2 * math.pi, abs=1e-8)
    assert 2 ** log2_jeffreys_integral("memoryless", 3) == pytest.approx(q, abs=1e-8)


def test_markov_integral_is_product_of_rows():
    for A in (2, 3, 5):
        assert log2_jeffreys_integral("markov1", A) == pytest.approx(A * log2_jeffreys_integral("memoryless", A))


def test_binary_minimax_redundancy():
    assert minimax_redundancy(1024, 1, "memoryless", 2) == pytest.approx(BINARY_R_1024, abs=1e-12)
    oracle = 0.5 * math.log2(1024 / (2 * math.pi * math.e)) + math.log2(_jeffreys_binary_quadrature())
    assert minimax_redundancy(1024, 1, "memoryless", 2) == pytest.approx(oracle, abs=1e-6)


def test_minimax_leading_term_dominates():
    n = 2**30
    assert minimax_redundancy(n, 1, "memoryless", 2) / (0.5 * math.log2(n)) == pytest.approx(1.0, abs=0.05)


def test_minimax_clamps_small_n():
    assert minimax_redundancy_raw(2, 255, "memoryless", 256) < 0
    assert minimax_redundancy(2, 255, "memoryless", 256) == 0.0
    rep = build_report(LimitInputs.single(2, 2, "memoryless", 256))
    assert any("clamped" in note for note in rep.validity_notes)


def test_minimax_rejects_bad_inputs():
    with pytest.raises(ValueError):
        minimax_redundancy(1, 1, "memoryless", 2)
    with pytest.raises(ValueError):
        minimax_redundancy(100, 2, "memoryless", 2)


def test_mixture_entropy_single_source():
    src = sample_jeffreys("memoryless", 4, 3)
    spec = MixtureSpec((src,), [1.0])
    h = entropy_per_packet(src, 500)
    assert mixture_entropy(LimitInputs.from_spec(spec, 500, 0), [h]) == pytest.approx(h)


def test_mixture_entropy_two_binary_sources():
    a, b = ParamSource.memoryless([0.2, 0.8]), ParamSource.memoryless([0.6, 0.4])
    spec = MixtureSpec.uniform([a, b])
    ha, hb = entropy_per_packet(a, 1024), entropy_per_packet(b, 1024)
    inputs = LimitInputs.from_spec(spec, 1024, 1024)
    assert h_d_branches(inputs, inputs.groups[0]).regime is Regime.WEIGHT_ENTROPY
    assert mixture_entropy(inputs, [ha, hb]) == pytest.approx(0.5 * (ha + hb) + 1.0, abs=1e-12)


def test_mixture_entropy_one_source_per_dimension():
    a = ParamSource.memoryless([0.3, 0.7])
    b = ParamSource.markov([[0.9, 0.1], [0.4, 0.6]])
    spec = MixtureSpec.uniform([a, b])
    base = [entropy_per_packet(a, 1000), entropy_per_packet(b, 1000)]
    inputs = LimitInputs.from_spec(spec, 1000, 0)
    assert mixture_entropy(inputs, base) - 0.5 * sum(base) == pytest.approx(1.0, abs=1e-12)


def test_mixture_entropy_minimax_regime():
    # Four binary sources at n=4: H(w_hat)=2 > (1/2) log2 4 = 1, so H_d is the minimax term.
    spec = MixtureSpec.uniform([ParamSource.memoryless([p, 1 - p]) for p in (0.1, 0.3, 0.6, 0.9)])
    inputs = LimitInputs.from_spec(spec, 4, 0)
    br = h_d_branches(inputs, inputs.groups[0])
    assert br.regime is Regime.MINIMAX
    assert br.value == pytest.approx(minimax_redundancy(4, 1, "memoryless", 2))
    assert redundancy_ucomp(inputs) == 0.0


def test_hysteresis_moves_the_boundary():
    g = [("memoryless", 2, 1.0, [0.25] * 4)]
    assert h_d_branches(LimitInputs.from_groups(4, 0, g), LimitInputs.from_groups(4, 0, g).groups[0]).regime is Regime.MINIMAX
    wide = LimitInputs.from_groups(4, 0, g, hysteresis=2.0)
    assert h_d_branches(wide, wide.groups[0]).regime is Regime.WEIGHT_ENTROPY
    assert regime_threshold(255, 1500) == pytest.approx(127.5 * math.log2(1500))


def test_ucomp_examples():
    assert redundancy_ucomp(LimitInputs.single(1024, 0, "memoryless", 2)) == pytest.approx(BINARY_R_1024, abs=1e-12)
    two = LimitInputs.from_groups(1024, 0, [("memoryless", 2, 1.0, [0.5, 0.5])])
    assert redundancy_ucomp(two) == pytest.approx(BINARY_R_1024 - 1, abs=1e-12)


def test_ucompm_examples():
    for d_A in (2, 5, 256):
        single = LimitInputs.single(777, 777, "memoryless", d_A)
        assert redundancy_ucompm(single) == pytest.approx((d_A - 1) / 2)
    five = LimitInputs.from_groups(1500, 1_500_000, [("memoryless", 256, 1.0, [0.2] * 5)])
    assert redundancy_ucompm(five) == pytest.approx(UCOMPM_D255, abs=1e-12)
    big = LimitInputs.single(1500, 10**15, "memoryless", 256)
    assert redundancy_ucompm(big) < 1e-6


def test_ucompm_delta_slack():
    base = LimitInputs.single(1024, 4096, "memoryless", 4)
    slack = LimitInputs.single(1024, 4096, "memoryless", 4, delta=0.25)
    assert redundancy_ucompm(slack) == pytest.approx(redundancy_ucompm(base) + 0.25)
    assert build_report(slack).delta_slack == 0.25


def test_ucompm_small_memory():
    inputs = LimitInputs.single(1024, 100, "memoryless", 4)
    assert redundancy_ucompm(inputs) == redundancy_ucomp(inputs)
    inputs = LimitInputs.single(1024, 100, "memoryless", 4, small_memory_allowance=0.5)
    assert redundancy_ucompm(inputs) == pytest.approx(redundancy_ucomp(inputs) - 0.5)
    assert any("m=100 < n=1024" in note for note in build_report(inputs).validity_notes)


def test_ucompm_high_entropy_regime_vanishes():
    inputs = LimitInputs.from_groups(4, 400, [("memoryless", 2, 1.0, [0.25] * 4)])
    assert redundancy_ucompm(inputs) == 0.0


def test_report_serialisation_roundtrip():
    spec = MixtureSpec.uniform([sample_jeffreys("memoryless", 4, 1), sample_jeffreys("markov1", 4, 2)])
    rep = build_report(LimitInputs.from_spec(spec, 1024, 8192), [100.0, 200.0])
    text = rep.to_json()
    back = RedundancyReport.from_dict(json.loads(text))
    assert back == rep
    for key in ("r_minimax_per_dim", "h_d", "r_ucomp", "r_ucompm", "r_ucompms", "delta_slack", "validity_notes"):
        assert key in json.loads(text)


def test_report_caps_memory_term_at_ucomp():
    # Tiny memory relative to n with many equally weighted sources: the memory
    # formula overshoots the no-memory term, and the report caps it.
    inputs = LimitInputs.from_groups(64, 64, [("memoryless", 4, 1.0, [0.125] * 8)])
    raw = redundancy_ucompm(inputs)
    rep = build_report(inputs)
    assert raw > redundancy_ucomp(inputs)
    assert rep.r_ucompm == rep.r_ucomp
    assert ordering_check(rep)
    assert any("capped" in note for note in rep.validity_notes)


_groups = st.lists(
    st.tuples(
        st.sampled_from(["memoryless", "markov1"]),
        st.integers(2, 16),
        st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6),
    ),
    min_size=1,
    max_size=3,
    unique_by=lambda g: g[0],
)


@settings(max_examples=300, deadline=None)
@given(groups=_groups, n=st.integers(2, 10**6), T=st.integers(0, 10**4), data=st.data())
def test_report_invariants(groups, n, T, data):
    A = groups[0][1]
    vs = np.array([data.draw(st.floats(0.05, 1.0)) for _ in groups])
    vs /= vs.sum()
    spec = [(fam, A, v, np.array(w) / sum(w)) for (fam, _, w), v in zip(groups, vs)]
    inputs = LimitInputs.from_groups(n, n * T, spec)
    rep = build_report(inputs)
    assert rep.r_ucomp >= 0 and rep.r_ucompm >= 0 and rep.r_ucompms >= 0
    assert ordering_check(rep)
    assert redundancy_ucompm(inputs) == redundancy_ucompms(inputs)
