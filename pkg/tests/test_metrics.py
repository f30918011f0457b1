import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bernoulli_mixing.density import Evolution
from bernoulli_mixing.errors import InsufficientData, NonConvergence
from bernoulli_mixing.kernels import NoiseKernel
from bernoulli_mixing.maps import preset
from bernoulli_mixing.metrics import (
    SWEEP_COLUMNS,
    TimeMeasurement,
    density_tv_trace,
    dissipation_witness,
    fit_scaling,
    grid_size_for,
    histogram_tv_trace,
    measure_tdis,
    measure_tmix,
    operator_norm,
    simulate_ensemble,
    start_family,
    sweep,
)
from oracles import brute_tmix, dense_T_star, mean_zero_norm

DOUBLING = preset("doubling")
INTRO = preset("intro3")
QUAD = preset("quad2d")


def test_grid_size_for_uses_map_primes():
    assert grid_size_for(DOUBLING, 1000) == 1024
    assert grid_size_for(INTRO, 1000) == 2187
    assert grid_size_for(QUAD, 100) == 128


def test_start_family_masses():
    fam = start_family(DOUBLING, 64, 8)
    assert fam.shape == (8, 64)
    assert np.allclose(fam.mean(axis=1), 1.0)
    fam2 = start_family(QUAD, 16, 9)
    assert fam2.shape == (9, 16, 16)


def test_tmix_matches_brute_force_with_every_start():
    m = 128
    for phi, eps in ((DOUBLING, 1 / 16), (INTRO, 1 / 20)):
        m_ = grid_size_for(phi, m)
        k = NoiseKernel("gaussian", eps)
        evo = Evolution(phi, k, m_)
        A = dense_T_star(evo)
        for delta in (0.5, 0.25):
            full = measure_tmix(phi, k, delta, m=m_, n_starts=m_, witness=False).t
            assert full == brute_tmix(A, delta)
            # a sparser start family can only under-estimate the worst case
            assert measure_tmix(phi, k, delta, m=m_, n_starts=8, witness=False).t <= full


def test_operator_norm_matches_svd():
    m = 64
    evo = Evolution(DOUBLING, NoiseKernel("gaussian", 0.05), m)
    A = dense_T_star(evo)
    for n in (1, 2, 3):
        est, *_, ok = operator_norm(evo, n, rtol=1e-10, max_rounds=500)
        assert ok
        assert est == pytest.approx(mean_zero_norm(A, n), rel=1e-6)


def test_tdis_matches_svd_first_passage():
    m = 81
    k = NoiseKernel("gaussian", 0.06)
    evo = Evolution(INTRO, k, m)
    A = dense_T_star(evo)
    meas = measure_tdis(INTRO, k, 0.5, m=m, rtol=1e-10, max_rounds=500)
    ref = next(n for n in range(1, 100) if mean_zero_norm(A, n) <= 0.5)
    assert meas.t == ref


def test_frozen_doubling_times():
    for e, tdis, tmix in ((6, 5, 4), (8, 7, 6)):
        k = NoiseKernel("gaussian", 2.0**-e)
        assert measure_tdis(DOUBLING, k, 0.5).t == tdis
        mix = measure_tmix(DOUBLING, k, 0.5)
        assert mix.t == tmix == e - 2
        assert mix.diagnostics["witness"]["holds"]


def test_tmix_list_and_nonconvergence():
    k = NoiseKernel("gaussian", 1 / 32)
    out = measure_tmix(DOUBLING, k, [0.5, 0.1], m=512)
    assert [o.t for o in out] == sorted(o.t for o in out)
    assert isinstance(out[0], TimeMeasurement)
    with pytest.raises(NonConvergence):
        measure_tmix(DOUBLING, k, 0.01, m=512, horizon=2)


def test_dissipation_witness_holds():
    k = NoiseKernel("gaussian", 2.0**-10)
    w = dissipation_witness(DOUBLING, k, 0.5, 2**12)
    assert w["N"] == 2 and w["holds"] and w["ratio_at_N"] >= 0.5


def test_ensemble_is_seeded_and_tracks_density():
    k = NoiseKernel("gaussian", 2.0**-6)
    m = 256
    a = simulate_ensemble(DOUBLING, k, 6, 20000, seed=11, m=m, start=0.3, start_m=16)
    b = simulate_ensemble(DOUBLING, k, 6, 20000, seed=11, m=m, start=0.3, start_m=16)
    assert np.array_equal(a, b)
    assert np.allclose(a.mean(axis=1), 1.0)
    f0 = np.zeros(m)
    j = int(0.3 * 16)
    f0[j * 16:(j + 1) * 16] = 16.0
    dens = density_tv_trace(Evolution(DOUBLING, k, m), f0, 6, coarse_m=16)
    hist = histogram_tv_trace(np.stack([x.reshape(16, 16).mean(axis=1) for x in a]), 1)
    assert np.max(np.abs(dens - hist)) < 0.05
    assert dens[0] == pytest.approx(15 / 16)


def test_fit_scaling_recovers_line():
    pts = [(2.0**-k, 3 * k + 1) for k in range(4, 10)]
    fit = fit_scaling(pts)
    assert fit.slope == pytest.approx(3) and fit.intercept == pytest.approx(1) and fit.residual < 1e-12
    with pytest.raises(InsufficientData):
        fit_scaling(pts[:3])
    with pytest.raises(InsufficientData):
        fit_scaling([(2.0**-k, k) for k in (4, 4.5, 5, 5.5, 6)])


@given(st.floats(-5, 5), st.floats(-20, 20), st.integers(5, 10))
def test_fit_scaling_exact_on_lines(slope, icpt, n):
    pts = [(2.0**-k, slope * k + icpt) for k in range(2, 2 + n)]
    fit = fit_scaling(pts)
    assert fit.slope == pytest.approx(slope, abs=1e-9)
    assert fit.intercept == pytest.approx(icpt, abs=1e-8)


def test_sweep_rows_and_running_slope():
    eps = [2.0**-k for k in range(5, 11)]
    rows = sweep(DOUBLING, NoiseKernel("gaussian", 0.1), eps, 0.5, "mix", workers=2)
    assert [r["epsilon"] for r in rows] == sorted(eps, reverse=True)
    assert [r["t_mix"] for r in rows] == [3, 4, 5, 6, 7, 8]
    assert all(r["slope_fit_running"] is None for r in rows[:4])
    assert rows[-1]["slope_fit_running"] == pytest.approx(1.0)
    assert all(r["theory_lower"] <= r["t_mix"] for r in rows)
    assert set(SWEEP_COLUMNS) <= set(rows[0])
    with pytest.raises(ValueError):
        sweep(DOUBLING, NoiseKernel("gaussian", 0.1), eps, 0.5, "both")


def test_identity_needs_explicit_horizon_and_is_slow():
    ident = preset("identity")
    k = NoiseKernel("gaussian", 2.0**-3)
    t = measure_tmix(ident, k, 0.5, m=1024, horizon=200, witness=False).t
    assert t == 1
    t6 = measure_tmix(ident, NoiseKernel("gaussian", 2.0**-6), 0.5, m=1024, horizon=20000, witness=False).t
    # diffusion alone needs time of order eps^-2
    assert t6 == 62 and t6 > 4 ** 3 * t * 0.9
