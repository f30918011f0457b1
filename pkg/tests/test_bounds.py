import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bernoulli_mixing.bounds import (
    B_const,
    C1,
    Lambda,
    N_mix,
    check_pcmix,
    dis_lower_integer,
    dis_upper_integers,
    eta_const,
    lattice_sup,
    pcmix_bound,
    relate_tmix_tdis,
    structural_constants,
    theoretical_time_bounds,
    tmix_lower_integers,
)
from bernoulli_mixing.errors import DomainError
from bernoulli_mixing.kernels import NoiseKernel
from bernoulli_mixing.maps import enumerate_partition, make_map, preset
from oracles import C1_exact, Lambda_formula

DOUBLING = preset("doubling")
INTRO = preset("intro3")
QUAD = preset("quad2d")
MAPS = {"doubling": DOUBLING, "intro3": INTRO, "quad2d": QUAD}


def test_structural_examples():
    assert C1(DOUBLING) == 2 == C1_exact(Fraction(1, 2), 1)
    assert C1(QUAD) == 16
    assert Lambda(DOUBLING, 1, 0.5) == 16
    assert N_mix(DOUBLING, 2.0**-10, eta_const(math.pi**2 / 2, 2)) == 9
    assert eta_const(math.pi**2 / 2, 2) == pytest.approx(math.pi)


def test_domain_errors():
    single = preset("identity")
    with pytest.raises(DomainError):
        C1(single)
    with pytest.raises(DomainError):
        Lambda(DOUBLING, 3, 0.5)
    with pytest.raises(DomainError):
        tmix_lower_integers(DOUBLING, 0.01, 1.0)


@given(st.sampled_from(sorted(MAPS)), st.sampled_from([1, 2]), st.floats(0.01, 0.99))
def test_Lambda_matches_formula_and_is_monotone(name, p, delta):
    phi = MAPS[name]
    pmin, pmax = float(phi.p_min), float(phi.p_max)
    ref = Lambda_formula(float(C1_exact(phi.p_min, phi.d)), p, delta, pmin, pmax, phi.d)
    assert Lambda(phi, p, delta) == pytest.approx(ref, rel=1e-12)
    assert Lambda(phi, p, delta * 0.9) > Lambda(phi, p, delta)
    assert B_const(phi, p, delta) > 0


def test_tmix_lower_frozen_integers():
    eps = [2.0**-k for k in range(5, 13)]
    assert [tmix_lower_integers(DOUBLING, e, 0.5)["tmix_lower"] for e in eps] == [0, 0, 1, 2, 3, 4, 5, 6]
    assert [tmix_lower_integers(INTRO, e, 0.5)["tmix_lower"] for e in eps] == [0, 0, 0, 1, 3, 5, 6, 8]
    w = tmix_lower_integers(INTRO, 2.0**-10, 0.5)
    assert w["branch"] == 2 and w["witness_word"] == (2,) * w["N"]


@given(st.sampled_from(sorted(MAPS)), st.floats(1e-6, 0.2), st.floats(0.05, 0.95))
def test_time_integers_monotone_in_eps(name, eps, delta):
    phi = MAPS[name]
    a = tmix_lower_integers(phi, eps, delta)["tmix_lower"]
    b = tmix_lower_integers(phi, eps / 2, delta)["tmix_lower"]
    assert b >= a
    if phi.d == 1:
        # the 2-d partition at these scales has millions of cylinders
        assert dis_lower_integer(phi, eps / 2, delta)["N"] >= dis_lower_integer(phi, eps, delta)["N"]


def test_dis_upper_doubling_against_independent_formula():
    for e, frozen in ((2.0**-6, 2291), (2.0**-8, 36811), (2.0**-10, 589126)):
        out = dis_upper_integers(DOUBLING, NoiseKernel("gaussian", e), 0.5)
        # the cutoff is below the first lattice frequency, so rho is the k = 1 multiplier
        rho = math.exp(-2 * math.pi**2 * e * e)
        assert out["rho"] == pytest.approx(rho, rel=1e-12)
        q = 0.25 * (1 - rho**2) / (4 * rho**2)
        assert out["N1"] == math.ceil(2 * math.log(0.5) / math.log(1 - q))
        assert out["N1_printed"] == math.ceil(math.log(0.5) / math.log(1 - q))
        assert out["tdis_upper"] == frozen


def test_delta_cap_applies_when_noise_is_strong():
    # with a wide kernel rho is small, and delta^2 > 2 rho^2 / (1 - rho^2)
    out = dis_upper_integers(DOUBLING, NoiseKernel("gaussian", 0.25), 0.9)
    rho = out["rho"]
    assert out["delta_eff"] == pytest.approx(math.sqrt(2 * rho**2 / (1 - rho**2)))
    assert out["delta_eff"] < 0.9


def test_lattice_sup_examples():
    g = NoiseKernel("gaussian", 0.05)
    assert lattice_sup(g, 3.2) == pytest.approx(math.exp(-2 * math.pi**2 * 0.0025 * 16), rel=1e-12)
    b = NoiseKernel("ball", 0.05)
    ks = range(4, 2000)
    ref = max(abs(math.sin(2 * math.pi * k * 0.05) / (2 * math.pi * k * 0.05)) for k in ks)
    assert lattice_sup(b, 4) == pytest.approx(ref, rel=1e-12)
    g2 = NoiseKernel("gaussian", 0.05, d=2)
    assert lattice_sup(g2, 2.5) == pytest.approx(math.exp(-2 * math.pi**2 * 0.0025 * 8), rel=1e-12)


def test_report_slopes_and_units():
    rep = theoretical_time_bounds(DOUBLING, NoiseKernel("gaussian", 2.0**-8), 0.5)
    d = rep.as_dict()
    assert d["tmix_slope_per_bit"] == pytest.approx(1.0)
    assert d["tdis_lower_slope_per_bit"] == pytest.approx(1.0)
    assert rep.tmix_lower == 2 and rep.tdis_lower == 0
    rep3 = theoretical_time_bounds(INTRO, NoiseKernel("gaussian", 2.0**-8), 0.5)
    assert rep3.tmix_slope == pytest.approx(1 / math.log(1.5))
    assert rep3.tdis_lower_slope == pytest.approx(1 / math.log(3))
    assert rep3.uniform_tmix is None
    s = structural_constants(DOUBLING, 2, 0.5, math.pi**2 / 2, 2, 2.0**-10)
    assert s.N_mix == 9


def test_pcmix_factor_example():
    eps = 2.0**-8
    S = enumerate_partition(DOUBLING, eps * Lambda(DOUBLING, 1, 0.5))
    assert len(S) == 16
    N = max(len(c.word) for c in S)
    assert N == 4
    # H of sigma^n S is 2 * 2^(4 - n) for n < 4 and 0 once the torus is reached
    assert pcmix_bound(DOUBLING, S, eps, 1, N) == pytest.approx(eps * (16 + 8 + 4), rel=1e-14)
    assert pcmix_bound(DOUBLING, S, eps, 1, N) == 0.109375


def test_check_pcmix_intro_ball():
    out = check_pcmix(INTRO, NoiseKernel("ball", 2.0**-8), 0.5, 1, 5, seed=3, m=3**8)
    assert out["violations"] == 0
    assert 0 < out["max_ratio"] < 0.05
    with pytest.raises(DomainError):
        check_pcmix(DOUBLING, NoiseKernel("ball", 0.1), 0.5, 1, 1, seed=0, m=256)


def test_relate_counts_violations():
    eps = [0.1, 0.05]
    ok = relate_tmix_tdis(eps, {0.1: 3, 0.05: 4}, {0.1: 4, 0.05: 5}, {0.1: 2, 0.05: 3}, 0.5, 0.5, {0.1: 0.53, 0.05: 0.53}, 1)
    assert ok["violations"] == 0
    bad = relate_tmix_tdis(eps, {0.1: 9, 0.05: 4}, {0.1: 4, 0.05: 5}, {0.1: 2, 0.05: 30}, 0.5, 0.5, {0.1: 0.53, 0.05: 0.53}, 1)
    assert bad["violations"] == 2
    row = ok["rows"][0]
    arg = 0.5 * math.sqrt(0.1) / 0.53
    assert row["tmix_bound_from_tdis"] == pytest.approx(2 + math.log(arg) / math.log(0.5) * 3)


def test_uniform_base_closed_forms():
    t3 = make_map(
        {"d": 1, "branches": [{"origin": [Fraction(i, 3)], "side": "1/3", "e": [-i]} for i in range(3)]}
    )
    rep = theoretical_time_bounds(t3, NoiseKernel("gaussian", 2.0**-8), 0.5)
    lead = 8 * math.log(2) / math.log(3)
    assert rep.uniform_tdis == pytest.approx(lead + 0.5 * math.log(math.log(2)) / math.log(3))
