from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bernoulli_mixing.errors import (
    BoundaryError,
    CoverageError,
    DepthError,
    MapError,
    NonCubeError,
    OverlapError,
)
from bernoulli_mixing.maps import (
    apply_map,
    cylinder_of,
    enumerate_partition,
    make_map,
    perimeter_volume_H,
    preset,
    shift,
    shifted_partition,
    uniform_expanding,
    validate_map,
)
from oracles import partition_oracle

F = Fraction
DOUBLING = preset("doubling")
INTRO = preset("intro3")
QUAD = preset("quad2d")

# two 1-d maps and one 2-d map with mixed slopes and orientations
TEST_MAPS = {
    "doubling": DOUBLING,
    "intro3": INTRO,
    "quad2d": QUAD,
    "flip2d": make_map(
        {
            "d": 2,
            "branches": [
                {"origin": [0, 0], "side": "1/2", "D": [[0, 1], [1, 0]], "e": [0, 0]},
                {"origin": ["1/2", 0], "side": "1/2", "D": [[-1, 0], [0, 1]], "e": [2, 0]},
                {"origin": [0, "1/2"], "side": "1/2", "D": [[1, 0], [0, -1]], "e": [0, 2]},
                {"origin": ["1/2", "1/2"], "side": "1/2", "D": [[1, 0], [0, 1]], "e": [-1, -1]},
            ],
        },
        name="flip2d",
    ),
}


# ---------------------------------------------------------------------------
# validation


def test_doubling_is_valid():
    rep = validate_map(DOUBLING)
    assert rep.valid and rep.p_min == F(1, 2) and rep.p_max == F(1, 2)


def test_intro_map_weights():
    rep = validate_map(INTRO)
    assert rep.valid
    assert rep.p_min == F(1, 3) and rep.p_max == F(2, 3)


def test_rectangular_cylinders_rejected():
    # the first branch image starts a quarter turn in, so depth-2 cylinders split
    bad = make_map(
        {
            "d": 2,
            "branches": [
                {"origin": [0, 0], "side": "1/2", "e": ["1/4", 0]},
                {"origin": ["1/2", 0], "side": "1/2", "e": [-1, 0]},
                {"origin": [0, "1/2"], "side": "1/2", "e": [0, -1]},
                {"origin": ["1/2", "1/2"], "side": "1/2", "e": [-1, -1]},
            ],
        }
    )
    with pytest.raises(NonCubeError):
        validate_map(bad)


def test_overlap_and_coverage_errors():
    overlap = make_map(
        {"d": 1, "branches": [{"origin": [0], "side": "1/2"}, {"origin": ["1/4"], "side": "1/2", "e": ["-1/2"]}]}
    )
    with pytest.raises(OverlapError):
        validate_map(overlap)
    gap = make_map({"d": 1, "branches": [{"origin": [0], "side": "1/2"}, {"origin": ["1/2"], "side": "1/4", "e": [-2]}]})
    with pytest.raises(CoverageError):
        validate_map(gap)


def test_non_signed_permutation_rejected():
    with pytest.raises(MapError):
        make_map({"d": 2, "branches": [{"origin": [0, 0], "side": 1, "D": [[1, 1], [0, 1]]}]})


def test_boundary_error_for_single_branch_map():
    # with one branch the torus point 0 only has the preimage 0, on the boundary
    with pytest.raises(BoundaryError):
        validate_map(preset("identity"))


# ---------------------------------------------------------------------------
# evaluation and cylinders


def test_apply_map_examples():
    assert apply_map(DOUBLING, 0.3) == pytest.approx(0.6, abs=1e-15)
    assert apply_map(INTRO, F(1, 2)) == F(3, 4)
    assert apply_map(INTRO, F(1, 3)) == 0
    assert apply_map(INTRO, 0.5) == pytest.approx(0.75, abs=1e-15)


def test_cylinder_examples():
    c = cylinder_of(DOUBLING, (1, 2))
    assert c.origin == (F(1, 4),) and c.side == F(1, 4)
    assert cylinder_of(DOUBLING, ()).side == 1
    assert cylinder_of(QUAD, ()).origin == (0, 0)
    c = cylinder_of(INTRO, (1,))
    assert c.origin == (0,) and c.side == F(1, 3)


def test_partition_examples():
    words = [c.word for c in enumerate_partition(DOUBLING, 0.3)]
    assert words == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert [c.word for c in enumerate_partition(DOUBLING, 0.6)] == [(1,), (2,)]
    words = sorted(c.word for c in enumerate_partition(INTRO, F(2, 5)))
    assert words == [(1,), (2, 1), (2, 2, 1), (2, 2, 2)]


def test_partition_depth_guard():
    with pytest.raises(DepthError):
        enumerate_partition(DOUBLING, 1e-30)
    with pytest.raises(ValueError):
        enumerate_partition(DOUBLING, 1.5)


def test_H_examples():
    assert perimeter_volume_H(enumerate_partition(DOUBLING, 0.3)) == 8
    assert perimeter_volume_H([cylinder_of(DOUBLING, ())]) == 0
    assert perimeter_volume_H(enumerate_partition(QUAD, 0.6)) == 8


def test_shifted_partition_collapses_to_the_torus():
    S = enumerate_partition(DOUBLING, 0.1)
    assert [c.word for c in shifted_partition(DOUBLING, S, 4)] == [()]
    assert shift((1, 2, 3), 2) == (3,)


def test_uniform_expanding_matches_doubling():
    t2 = uniform_expanding(2)
    x = np.linspace(0, 0.999, 101)
    assert np.array_equal(apply_map(t2, x), apply_map(DOUBLING, x))


# ---------------------------------------------------------------------------
# properties


def _words(M, max_len):
    return st.lists(st.integers(1, M), max_size=max_len).map(tuple)


@given(st.sampled_from(sorted(TEST_MAPS)), st.data())
def test_pushforward_consistency(name, data):
    phi = TEST_MAPS[name]
    word = data.draw(_words(phi.M, 5))
    cyl = cylinder_of(phi, word)
    target = cylinder_of(phi, shift(word))
    u = data.draw(st.lists(st.fractions(0, 1).filter(lambda v: v < 1), min_size=phi.d, max_size=phi.d))
    x = tuple(o + cyl.side * v for o, v in zip(cyl.origin, u))
    y = apply_map(phi, x if phi.d > 1 else x[0])
    y = y if phi.d > 1 else (y,)
    assert all(o <= yi < o + target.side for o, yi in zip(target.origin, y))


@given(st.sampled_from(sorted(TEST_MAPS)), st.data())
def test_shift_geometry_exact(name, data):
    phi = TEST_MAPS[name]
    word = data.draw(_words(phi.M, 6).filter(bool))
    side = cylinder_of(phi, word).side
    parent = cylinder_of(phi, shift(word)).side
    assert side == parent * phi.branch(word[0]).cell.side
    # side^d is the cylinder measure, bracketed by p_min and p_max
    assert phi.p_min * parent**phi.d <= side**phi.d <= phi.p_max * parent**phi.d


@given(st.sampled_from(["doubling", "intro3", "quad2d"]), st.fractions(F(1, 40), F(99, 100)))
def test_partition_complete_and_matches_oracle(name, scale):
    phi = TEST_MAPS[name]
    S = enumerate_partition(phi, scale)
    assert sum(c.side**phi.d for c in S) == 1
    sides = [b.cell.side for b in phi.branches]
    assert [c.word for c in S] == partition_oracle(sides, scale)
    assert all(c.side <= scale for c in S)
