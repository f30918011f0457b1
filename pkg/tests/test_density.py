import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bernoulli_mixing.density import (
    Evolution,
    coarsen,
    convolve_noise,
    distances,
    freq_split,
    indicator_density,
    point_density,
    pullback_U,
    pushforward_U,
    refinement_factor,
    step_T,
    step_T_star,
)
from bernoulli_mixing.errors import AlignmentError, AlignmentWarning, SizeMismatchError
from bernoulli_mixing.grid import GridDensity
from bernoulli_mixing.kernels import NoiseKernel, grid_dft, kernel_fourier, kernel_grid
from bernoulli_mixing.maps import make_map, preset, shift
from oracles import push_by_subsampling

DOUBLING = preset("doubling")
INTRO = preset("intro3")
QUAD = preset("quad2d")
GAUSS = NoiseKernel("gaussian", 0.03)


def test_pushforward_indicator_example():
    f = indicator_density(DOUBLING, (1, 2), 8)
    assert np.array_equal(f.values, np.array([0, 0, 4, 4, 0, 0, 0, 0], dtype=float))
    out = pushforward_U(DOUBLING, f)
    assert np.array_equal(out.values, np.array([0, 0, 0, 0, 2, 2, 2, 2], dtype=float))


def test_constant_is_stationary():
    for phi, m in ((DOUBLING, 64), (INTRO, 81), (QUAD, 16)):
        one = GridDensity(np.ones((m,) * phi.d))
        assert np.allclose(pushforward_U(phi, one).values, 1.0, atol=1e-14)
        k = NoiseKernel("gaussian", 0.05, d=phi.d)
        assert np.allclose(step_T_star(phi, k, one).values, 1.0, atol=1e-13)
        assert np.allclose(step_T(phi, k, one).values, 1.0, atol=1e-13)


def test_pushforward_of_cosine_has_even_modes_only():
    m = 1024
    x = (np.arange(m) + 0.5) / m
    f = GridDensity(1 + np.cos(2 * math.pi * x))
    out = pushforward_U(DOUBLING, f)
    assert out.mean() == pytest.approx(1.0, abs=1e-14)
    spec = np.abs(np.fft.fft(out.values)) / m
    odd = spec[1::2]
    assert odd.max() < 1e-12


def test_convolution_examples():
    m = 64
    kg = kernel_grid(NoiseKernel("gaussian", 0.05), m)
    one = GridDensity(np.ones(m))
    assert np.allclose(convolve_noise(kg, one).values, 1.0, atol=1e-14)
    delta = np.zeros(m)
    delta[5] = m
    out = convolve_noise(kg, GridDensity(delta)).values
    assert np.allclose(out, np.roll(kg.values, 5), atol=1e-12)
    k = 3
    x = np.arange(m) / m
    mode = np.cos(2 * math.pi * k * x)
    conv = convolve_noise(kg, GridDensity(mode)).values
    # exact multiplier is the grid symbol; the continuous symbol agrees to O((pi k/m)^2)
    assert np.allclose(conv, grid_dft(kg)[k] * mode, atol=1e-12)
    exact = kernel_fourier(NoiseKernel("gaussian", 0.05), [k])
    assert abs(grid_dft(kg)[k] - exact) <= exact * (math.pi * k / m) ** 2 / 6


def test_duality_random_pairs():
    rng = np.random.default_rng(0)
    for phi, m, d in ((DOUBLING, 128, 1), (INTRO, 243, 1), (QUAD, 32, 2)):
        evo = Evolution(phi, NoiseKernel("gaussian", 0.04, d=d), m)
        for _ in range(20 if d == 1 else 5):
            f = rng.standard_normal((m,) * d)
            g = rng.standard_normal((m,) * d)
            lhs = np.mean(evo.T(f) * g)
            rhs = np.mean(f * evo.T_star(g))
            assert abs(lhs - rhs) < 1e-8


def test_strict_contraction_on_mean_zero():
    m = 256
    rng = np.random.default_rng(1)
    f = rng.standard_normal(m)
    f -= f.mean()
    out = step_T_star(DOUBLING, GAUSS, GridDensity(f))
    assert out.lp_norm(2) < GridDensity(f).lp_norm(2)


def test_distance_examples():
    assert distances(GridDensity(np.ones(16)))["tv"] == 0
    half = np.zeros(16)
    half[:8] = 2
    assert distances(GridDensity(half))["tv"] == 0.5
    f = indicator_density(DOUBLING, (1, 2), 16)
    assert distances(f)["tv"] == 0.75


def test_freq_split_examples():
    m = 64
    x = (np.arange(m) + 0.5) / m
    rng = np.random.default_rng(2)
    f = GridDensity(rng.standard_normal(m))
    low, high = freq_split(f, m / 2)
    assert np.allclose(low.values, f.values) and np.allclose(high.values, 0)
    g = GridDensity(f.values - f.values.mean())
    low, high = freq_split(g, 0.5)
    assert np.allclose(low.values, 0, atol=1e-14) and np.allclose(high.values, g.values)
    c = GridDensity(np.cos(2 * math.pi * 3 * x))
    low, high = freq_split(c, 2)
    assert np.allclose(low.values, 0, atol=1e-13) and np.allclose(high.values, c.values)


def test_indicator_examples():
    assert np.array_equal(indicator_density(DOUBLING, (), 8).values, np.ones(8))
    f = indicator_density(DOUBLING, (1, 1), 8)
    assert np.array_equal(f.values, np.array([4, 4, 0, 0, 0, 0, 0, 0], dtype=float))
    with pytest.raises(AlignmentError):
        indicator_density(INTRO, (1, 1), 8)


def test_indicator_spreads_after_word_length():
    word = (2, 1, 2, 2)
    f = indicator_density(INTRO, word, 3**5)
    for _ in range(len(word)):
        f = pushforward_U(INTRO, f)
    assert np.array_equal(f.values, np.ones(3**5))


def test_point_density_and_mismatch():
    p = point_density(0.3, 10)
    assert p.values[3] == 10 and p.mean() == 1
    with pytest.raises(SizeMismatchError):
        point_density([0.1, 0.2], 10)


def test_pushforward_matches_subsampling_oracle():
    rng = np.random.default_rng(3)
    for phi, m in ((DOUBLING, 64), (INTRO, 48)):
        f = rng.random(m)
        assert np.allclose(pushforward_U(phi, GridDensity(f)).values, push_by_subsampling(phi, f), atol=1e-13)


def test_misaligned_grid_warns_and_conserves_mass():
    with pytest.warns(AlignmentWarning):
        out = pushforward_U(INTRO, GridDensity(np.random.default_rng(4).random(64) + 0.5))
    assert out.values.shape == (64,)


def test_refinement_factor_and_coarsen():
    assert refinement_factor(DOUBLING) == 2
    f = GridDensity(np.arange(8, dtype=float))
    assert np.array_equal(coarsen(f, 2).values, np.array([0.5, 2.5, 4.5, 6.5]))
    with pytest.raises(SizeMismatchError):
        coarsen(f, 3)


def test_pullback_is_composition_on_aligned_cells():
    # on cells that map into single cells, pulling back is composition with phi
    m = 32
    g = np.random.default_rng(5).random(m)
    out = pullback_U(DOUBLING, GridDensity(g)).values
    j = np.arange(m)
    expected = 0.5 * (g[(2 * j) % m] + g[(2 * j + 1) % m])
    assert np.allclose(out, expected, atol=1e-14)


# ---------------------------------------------------------------------------
# exact shift identity and invariants

FLIP = make_map(
    {
        "d": 2,
        "branches": [
            {"origin": [0, 0], "side": "1/2", "D": [[0, 1], [1, 0]], "e": [0, 0]},
            {"origin": ["1/2", 0], "side": "1/2", "D": [[-1, 0], [0, 1]], "e": [2, 0]},
            {"origin": [0, "1/2"], "side": "1/2", "D": [[1, 0], [0, -1]], "e": [0, 2]},
            {"origin": ["1/2", "1/2"], "side": "1/2", "D": [[1, 0], [0, 1]], "e": [-1, -1]},
        ],
    }
)


@pytest.mark.parametrize("phi,m", [(DOUBLING, 2**7), (INTRO, 3**7)])
def test_shift_identity_bit_exact_all_short_words(phi, m):
    for L in range(1, 7):
        for word in itertools.product(range(1, phi.M + 1), repeat=L):
            out = pushforward_U(phi, indicator_density(phi, word, m))
            assert np.array_equal(out.values, indicator_density(phi, shift(word), m).values), word


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_shift_identity_2d(word):
    m = 32
    out = pushforward_U(FLIP, indicator_density(FLIP, tuple(word), m))
    assert np.array_equal(out.values, indicator_density(FLIP, shift(tuple(word)), m).values)


@given(st.sampled_from(["doubling", "intro3", "quad2d", "flip"]), st.integers(0, 2**32 - 1), st.floats(0.01, 0.2))
def test_mass_and_contraction_properties(name, seed, eps):
    phi = {"doubling": DOUBLING, "intro3": INTRO, "quad2d": QUAD, "flip": FLIP}[name]
    m = {"doubling": 128, "intro3": 162, "quad2d": 32, "flip": 32}[name]
    rng = np.random.default_rng(seed)
    f = rng.random((m,) * phi.d) * 3
    evo = Evolution(phi, NoiseKernel("gaussian", eps, d=phi.d), m)
    pushed = evo.push(f)
    conv = evo.convolve(f)
    step = evo.T_star(f)
    for out in (pushed, conv, step):
        assert abs(out.mean() - f.mean()) < 1e-10
    for p in (1, 2):
        assert GridDensity(step).lp_norm(p) <= GridDensity(f).lp_norm(p) * (1 + 1e-12)
