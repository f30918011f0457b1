"""Piecewise-affine Bernoulli maps on the torus and their cylinder sets.

A map is a list of branches.  Branch ``i`` lives on a half-open cube
``E_i = origin + [0, side)^d`` and sends it affinely onto the whole torus via
``x -> D x / side + e (mod 1)`` where ``D`` is a signed permutation matrix.
Words (tuples of 1-based branch indices) label cylinder sets
``C_s = {x : phi^k(x) in E_{s_k}}``.

Rational maps are stored with :class:`fractions.Fraction` coordinates so that
cylinder geometry is exact.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import (
    BoundaryError,
    CoverageError,
    DepthError,
    MapError,
    NonCubeError,
    OverlapError,
)

Number = Union[Fraction, float]
Word = tuple

SAFETY_DEPTH = 64


def parse_number(value) -> Number:
    """Read an int, float, Fraction or a ``"p/q"`` string.

    Ints and strings become exact fractions; floats stay floats.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (bool, np.bool_)):
        raise MapError(f"not a number: {value!r}")
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, (float, np.floating)):
        return float(value)
    raise MapError(f"not a number: {value!r}")


def _is_exact(*values) -> bool:
    return all(isinstance(v, Fraction) for v in values)


@dataclass(frozen=True)
class BranchCell:
    origin: tuple
    side: Number
    index: int

    @property
    def d(self) -> int:
        return len(self.origin)

    @property
    def weight(self) -> Number:
        return self.side ** self.d

    def contains(self, x: Sequence) -> bool:
        return all(o <= xi < o + self.side for o, xi in zip(self.origin, x))


@dataclass(frozen=True)
class AffineBranch:
    """One affine piece ``x -> D x / side + e`` of a Bernoulli map."""

    cell: BranchCell
    D: tuple
    e: tuple
    perm: tuple = field(init=False, repr=False)
    signs: tuple = field(init=False, repr=False)
    anchor: tuple = field(init=False, repr=False)

    def __post_init__(self):
        d = self.cell.d
        if len(self.D) != d or any(len(row) != d for row in self.D):
            raise MapError(f"branch {self.cell.index}: D must be {d}x{d}")
        perm, signs = [], []
        for row in self.D:
            nz = [j for j, v in enumerate(row) if v != 0]
            if len(nz) != 1 or row[nz[0]] not in (1, -1):
                raise MapError(
                    f"branch {self.cell.index}: D must be a signed permutation matrix"
                )
            perm.append(nz[0])
            signs.append(int(row[nz[0]]))
        if sorted(perm) != list(range(d)):
            raise MapError(f"branch {self.cell.index}: D is singular")
        if len(self.e) != d:
            raise MapError(f"branch {self.cell.index}: offset has wrong length")
        object.__setattr__(self, "perm", tuple(perm))
        object.__setattr__(self, "signs", tuple(signs))
        # image of the cell origin on the torus; the cell unrolls from here
        L = self.cell.side
        anchor = tuple(
            (s * self.cell.origin[q] / L + er) % 1
            for s, q, er in zip(signs, perm, self.e)
        )
        object.__setattr__(self, "anchor", anchor)

    @property
    def weight(self) -> Number:
        return self.cell.weight

    def affine(self, x: Sequence) -> tuple:
        """The unreduced affine formula ``D x / side + e`` on R^d."""
        L = self.cell.side
        return tuple(
            s * x[q] / L + er for s, q, er in zip(self.signs, self.perm, self.e)
        )

    def preimage_boxes(self, origin: Sequence, lengths: Sequence) -> list:
        """Preimage inside the cell of the box ``origin + prod [0, lengths)``.

        Returns a list of ``(origin, lengths)`` boxes.  More than one box means
        the target straddles the seam where the branch image wraps around.
        """
        L = self.cell.side
        d = self.cell.d
        pieces = [None] * d
        for r in range(d):
            q = self.perm[r]
            h = lengths[r]
            if h >= 1:
                spans = [(0, 1)]
            else:
                if self.signs[r] > 0:
                    start = (origin[r] - self.anchor[r]) % 1
                else:
                    start = (self.anchor[r] - origin[r] - h) % 1
                if start + h > 1:
                    spans = [(start, 1 - start), (0, start + h - 1)]
                else:
                    spans = [(start, h)]
            pieces[q] = [(self.cell.origin[q] + L * a, L * w) for a, w in spans]
        boxes = []
        for combo in itertools.product(*pieces):
            boxes.append((tuple(c[0] for c in combo), tuple(c[1] for c in combo)))
        return boxes


@dataclass(frozen=True)
class CylinderSet:
    word: tuple
    origin: tuple
    side: Number

    @property
    def lam(self) -> Number:
        return 1 / self.side

    @property
    def volume(self) -> Number:
        return self.side ** len(self.origin)


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    d: int
    n_branches: int
    p_min: Number
    p_max: Number
    depth: int
    bijective: bool
    boundary_ok: bool
    cubes_ok: bool
    n_cylinders: int

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["p_min"] = str(self.p_min)
        out["p_max"] = str(self.p_max)
        return out


class BernoulliMap:
    """Piecewise-affine expanding map of the torus with cube branch cells."""

    def __init__(self, branches: Sequence[AffineBranch], name: str = ""):
        if not branches:
            raise MapError("a map needs at least one branch")
        d = branches[0].cell.d
        if any(b.cell.d != d for b in branches):
            raise MapError("branches disagree on the dimension")
        for k, b in enumerate(branches, start=1):
            if b.cell.index != k:
                raise MapError("branch indices must run 1..M in order")
            if not b.cell.side > 0:
                raise MapError(f"branch {k}: side must be positive")
        self.d = d
        self.branches = tuple(branches)
        self.name = name
        self.exact = all(
            _is_exact(b.cell.side, *b.cell.origin, *b.e) for b in branches
        )
        self.weights = tuple(b.weight for b in branches)
        self.p_min = min(self.weights)
        self.p_max = max(self.weights)
        self._cyl_cache: dict = {(): ((Fraction(0),) * d if self.exact else (0.0,) * d)}

        # float views for vectorised evaluation
        self._origins = np.array([[float(o) for o in b.cell.origin] for b in branches])
        self._sides = np.array([float(b.cell.side) for b in branches])
        self._inv_sides = np.array([float(1 / b.cell.side) for b in branches])

    @property
    def M(self) -> int:
        return len(self.branches)

    def __repr__(self):
        label = self.name or "BernoulliMap"
        return f"<{label}: d={self.d}, M={self.M}>"

    def branch(self, i: int) -> AffineBranch:
        if not 1 <= i <= self.M:
            raise IndexError(f"branch index {i} outside 1..{self.M}")
        return self.branches[i - 1]

    def side_of(self, word: Iterable[int]) -> Number:
        side = Fraction(1) if self.exact else 1.0
        for i in word:
            side = side * self.branch(i).cell.side
        return side

    def branch_index(self, x: np.ndarray) -> np.ndarray:
        """1-based index of the half-open cell containing each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.zeros(len(x), dtype=int)
        for k in range(self.M):
            lo = self._origins[k]
            inside = np.all((x >= lo) & (x < lo + self._sides[k]), axis=1)
            idx = np.where((idx == 0) & inside, k + 1, idx)
        # points rounded onto 1.0 belong to the cell touching the top face
        if np.any(idx == 0):
            bad = x[idx == 0]
            raise MapError(f"points outside [0,1)^d: {bad[:3]}")
        return idx

    def to_dict(self) -> dict:
        def enc(v):
            return str(v) if isinstance(v, Fraction) else v

        return {
            "d": self.d,
            "branches": [
                {
                    "origin": [enc(o) for o in b.cell.origin],
                    "side": enc(b.cell.side),
                    "D": [list(row) for row in b.D],
                    "e": [enc(v) for v in b.e],
                }
                for b in self.branches
            ],
        }


def make_map(spec: dict, name: str = "") -> BernoulliMap:
    """Build a map from the JSON-style dictionary used in config files."""
    try:
        d = int(spec["d"])
        raw = spec["branches"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MapError(f"malformed map spec: {exc}") from exc
    branches = []
    for k, b in enumerate(raw, start=1):
        origin = tuple(parse_number(v) for v in b["origin"])
        if len(origin) != d:
            raise MapError(f"branch {k}: origin must have {d} coordinates")
        side = parse_number(b["side"])
        D = tuple(tuple(int(v) for v in row) for row in b.get("D", np.eye(d, dtype=int)))
        e = tuple(parse_number(v) for v in b.get("e", [0] * d))
        branches.append(AffineBranch(BranchCell(origin, side, k), D, e))
    return BernoulliMap(branches, name=name or spec.get("name", ""))


def load_map(path) -> BernoulliMap:
    with open(path) as fh:
        return make_map(json.load(fh))


def uniform_expanding(N: int, d: int = 1) -> BernoulliMap:
    """The map ``x -> N x (mod 1)`` on the d-torus as N^d branches."""
    side = Fraction(1, N)
    eye = [[int(r == c) for c in range(d)] for r in range(d)]
    branches = []
    for corner in itertools.product(range(N), repeat=d):
        branches.append(
            {
                "origin": [Fraction(c, N) for c in corner],
                "side": side,
                "D": eye,
                "e": [-c for c in corner],
            }
        )
    return make_map({"d": d, "branches": branches}, name=f"times{N}" + ("" if d == 1 else f"_d{d}"))


PRESET_SPECS = {
    "doubling": {
        "d": 1,
        "branches": [
            {"origin": [0], "side": "1/2", "D": [[1]], "e": [0]},
            {"origin": ["1/2"], "side": "1/2", "D": [[1]], "e": [-1]},
        ],
    },
    # 3x on [0,1/3) and 3(1-x)/2 on [1/3,1)
    "intro3": {
        "d": 1,
        "branches": [
            {"origin": [0], "side": "1/3", "D": [[1]], "e": [0]},
            {"origin": ["1/3"], "side": "2/3", "D": [[-1]], "e": ["3/2"]},
        ],
    },
    "quad2d": {
        "d": 2,
        "branches": [
            {"origin": [0, 0], "side": "1/2", "D": [[1, 0], [0, 1]], "e": [0, 0]},
            {"origin": ["1/2", 0], "side": "1/2", "D": [[1, 0], [0, 1]], "e": [-1, 0]},
            {"origin": [0, "1/2"], "side": "1/2", "D": [[1, 0], [0, 1]], "e": [0, -1]},
            {"origin": ["1/2", "1/2"], "side": "1/2", "D": [[1, 0], [0, 1]], "e": [-1, -1]},
        ],
    },
    # not mixing: kept as the no-stirring baseline
    "identity": {
        "d": 1,
        "branches": [{"origin": [0], "side": 1, "D": [[1]], "e": [0]}],
    },
}


def preset(name: str) -> BernoulliMap:
    try:
        spec = PRESET_SPECS[name]
    except KeyError:
        raise MapError(f"unknown preset {name!r}; choose from {sorted(PRESET_SPECS)}") from None
    return make_map(spec, name=name)


# ---------------------------------------------------------------------------
# evaluation


def apply_map(phi: BernoulliMap, x):
    """Evaluate the torus map.

    Exact for a single point given as ints/Fractions on a rational map;
    otherwise vectorised in float64 over rows of ``x``.
    """
    if phi.exact and _is_exact_point(x, phi.d):
        pt = tuple(Fraction(v) for v in (x if phi.d > 1 or np.ndim(x) else [x]))
        for b in phi.branches:
            if b.cell.contains(pt):
                y = tuple(v % 1 for v in b.affine(pt))
                return y if phi.d > 1 else y[0]
        raise MapError(f"point {x} outside [0,1)^d")

    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0 or (phi.d > 1 and arr.ndim == 1)
    pts = arr.reshape(-1, phi.d)
    idx = phi.branch_index(pts) - 1
    out = np.empty_like(pts)
    for k, b in enumerate(phi.branches):
        rows = idx == k
        if not rows.any():
            continue
        local = (pts[rows] - phi._origins[k]) * phi._inv_sides[k]
        for r in range(phi.d):
            q = b.perm[r]
            out[rows, r] = float(b.anchor[r]) + b.signs[r] * local[:, q]
    out = np.mod(out, 1.0)
    out[out >= 1.0] = 0.0
    if scalar:
        return float(out[0, 0]) if phi.d == 1 else out[0]
    return out.reshape(arr.shape)


def _is_exact_point(x, d) -> bool:
    vals = x if (d > 1 or np.ndim(x)) else [x]
    try:
        return len(vals) == d and all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in vals)
    except TypeError:
        return False


def cylinder_of(phi: BernoulliMap, word: Sequence[int]) -> CylinderSet:
    """Cube ``C_s`` for the word ``s``; the empty word gives the whole torus."""
    word = tuple(int(i) for i in word)
    for i in word:
        phi.branch(i)  # IndexError for bad letters
    origin = _cyl_origin(phi, word)
    return CylinderSet(word, origin, phi.side_of(word))


def _cyl_origin(phi: BernoulliMap, word: tuple) -> tuple:
    cache = phi._cyl_cache
    if word in cache:
        return cache[word]
    # extend the longest cached suffix one letter at a time
    start = 0
    while word[start:] not in cache:
        start += 1
    origin = cache[word[start:]]
    side = phi.side_of(word[start:])
    for pos in range(start - 1, -1, -1):
        b = phi.branches[word[pos] - 1]
        boxes = b.preimage_boxes(origin, (side,) * phi.d)
        if len(boxes) != 1:
            raise NonCubeError(f"cylinder {word[pos:]} splits into {len(boxes)} rectangles")
        origin = boxes[0][0]
        side = side * b.cell.side
        cache[word[pos:]] = origin
    return origin


def shift(word: Sequence[int], n: int = 1) -> tuple:
    """Left shift: drop the first ``n`` letters (the empty word is fixed)."""
    return tuple(word)[n:]


def enumerate_partition(phi: BernoulliMap, scale, max_depth: int = SAFETY_DEPTH) -> list:
    """Cylinders with side <= ``scale`` whose one-letter-shorter parent is larger.

    Descends the prefix tree, splitting every cylinder whose side exceeds
    ``scale``.  The leaves tile the torus.
    """
    if not 0 < scale < 1:
        raise ValueError("scale must lie in (0, 1)")
    leaves = []
    stack = [((), phi.side_of(()))]
    while stack:
        word, side = stack.pop()
        if side <= scale:
            leaves.append(word)
            continue
        if len(word) >= max_depth:
            raise DepthError(f"partition deeper than {max_depth} letters")
        for i in range(phi.M, 0, -1):
            stack.append((word + (i,), side * phi.branches[i - 1].cell.side))
    leaves.sort()
    return [cylinder_of(phi, w) for w in leaves]


def perimeter_volume_H(partition: Iterable) -> Number:
    """Largest perimeter-to-volume ratio ``2d / side`` over nonempty words."""
    best = 0
    for cyl in partition:
        if len(cyl.word) == 0:
            continue
        ratio = 2 * len(cyl.origin) / cyl.side
        best = max(best, ratio)
    return best


def shifted_partition(phi: BernoulliMap, partition: Sequence[CylinderSet], n: int) -> list:
    """The distinct cylinders ``C_{sigma^n s}`` for ``s`` in a partition."""
    words = sorted({shift(c.word, n) for c in partition})
    return [cylinder_of(phi, w) for w in words]


# ---------------------------------------------------------------------------
# validation


def _boxes_overlap(a: BranchCell, b: BranchCell) -> bool:
    return all(
        max(oa, ob) < min(oa + a.side, ob + b.side) for oa, ob in zip(a.origin, b.origin)
    )


def _close(a, b, exact) -> bool:
    return a == b if exact else abs(float(a) - float(b)) < 1e-12


def _boundary_trap_planes(b: AffineBranch) -> list:
    """Hyperplanes ``x_r = c`` whose branch preimage touches ``x_q = 0``.

    A torus point has a branch preimage on the face ``{y_q = 0}`` only when the
    cell sits on that face and the point lies on the image of the face.
    """
    planes = []
    for r in range(b.cell.d):
        q = b.perm[r]
        if b.cell.origin[q] == 0:
            planes.append((r, b.anchor[r]))
    return planes


def _boundary_covered(phi: BernoulliMap) -> bool:
    # a boundary point fails when every branch preimage sits on the boundary;
    # search for a consistent choice of one trap plane per branch on each face
    traps = [_boundary_trap_planes(b) for b in phi.branches]
    if any(not t for t in traps):
        return True
    for face in range(phi.d):
        def consistent(k, fixed):
            if k == len(traps):
                return True
            for r, c in traps[k]:
                if r in fixed and fixed[r] != c:
                    continue
                if consistent(k + 1, {**fixed, r: c}):
                    return True
            return False

        if consistent(0, {face: 0}):
            return False
    return True


def validate_map(phi: BernoulliMap, depth: int = 4) -> ValidationReport:
    """Check tiling, the boundary-preimage condition and cube cylinders.

    Raises the matching :mod:`errors` subclass on the first failure.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    exact = phi.exact
    for b in phi.branches:
        for o in b.cell.origin:
            if o < 0 or o + b.cell.side > 1 + (0 if exact else 1e-12):
                raise CoverageError(f"cell {b.cell.index} leaves the unit cube")
    for a, b in itertools.combinations(phi.branches, 2):
        if _boxes_overlap(a.cell, b.cell):
            raise OverlapError(f"cells {a.cell.index} and {b.cell.index} overlap")
    total = sum(phi.weights)
    if not _close(total, 1, exact):
        raise CoverageError(f"cell volumes sum to {total}, not 1")

    if not _boundary_covered(phi):
        raise BoundaryError("some boundary point has no preimage in the open cube")

    # breadth-first over words, prepending letters
    count = 0
    layer = [()]
    for _ in range(depth):
        nxt = []
        for w in layer:
            for i in range(1, phi.M + 1):
                cylinder_of(phi, (i,) + w)
                nxt.append((i,) + w)
        count += len(nxt)
        layer = nxt
    return ValidationReport(
        valid=True,
        d=phi.d,
        n_branches=phi.M,
        p_min=phi.p_min,
        p_max=phi.p_max,
        depth=depth,
        bijective=True,
        boundary_ok=True,
        cubes_ok=True,
        n_cylinders=count,
    )
