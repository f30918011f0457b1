"""Evolution operators on grid densities.

``U*``  transfer (pushforward) operator of the map
``K``   circular convolution with the noise kernel
``T*``  one step of the chain on densities, ``K o U*``
``T``   backward operator ``g -> (K g) o phi``, the grid adjoint of ``T*``

The pushforward works on cell averages: the value of ``U* f`` on a cell is
the mass ``f`` puts on the cell's preimage divided by the cell volume, with
``f`` taken piecewise constant on the grid.  Branch preimages of a cell are
boxes of side ``side/m`` and so overlap at most two input cells per axis, so
each axis is handled by a two-point gather.  ``T`` uses the exact matrix
transpose of that construction, which makes the duality
``<T f, g> = <f, T* g>`` hold to rounding error.

Functions taking raw arrays act on the trailing ``d`` axes; leading axes are
treated as a batch.
"""

from __future__ import annotations

import math
import warnings
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import AlignmentError, AlignmentWarning, SizeMismatchError
from .grid import GridDensity, SpectralField
from .kernels import NoiseKernel, kernel_grid
from .maps import BernoulliMap, cylinder_of

__all__ = [
    "GridDensity",
    "SpectralField",
    "TransferPlan",
    "Evolution",
    "pushforward_U",
    "pullback_U",
    "convolve_noise",
    "step_T_star",
    "step_T",
    "distances",
    "freq_split",
    "indicator_density",
    "point_density",
    "coarsen",
    "refinement_factor",
    "transfer_plan",
    "noise_operator",
    "tv_batch",
]


def _axis_gather(origin, side, m: int, exact: bool):
    """Two-point gather for resampling one cell axis onto ``m`` sub-cells.

    Returns ``(lo, hi, w)``: sub-cell ``j`` reads ``f[lo] + w (f[hi] - f[lo])``.
    """
    j = np.arange(m, dtype=np.int64)
    if exact:
        start, width = Fraction(origin) * m, Fraction(side)
        Q = math.lcm(start.denominator, width.denominator)
        A = start.numerator * (Q // start.denominator)
        B = width.numerator * (Q // width.denominator)
        lo = (A + B * j) // Q
        spill = A + B * (j + 1) - (lo + 1) * Q
        w = np.where(spill > 0, spill / B, 0.0)
    else:
        start, width = float(origin) * m, float(side)
        pos = start + width * j
        lo = np.floor(pos).astype(np.int64)
        spill = start + width * (j + 1) - (lo + 1)
        w = np.where(spill > 1e-12 * width, spill / width, 0.0)
    hi = np.minimum(lo + 1, m - 1)
    return lo, hi, w


class TransferPlan:
    """Precomputed index tables for ``U*`` and its adjoint on an ``m^d`` grid."""

    def __init__(self, phi: BernoulliMap, m: int):
        self.phi, self.m, self.d = phi, m, phi.d
        self.branches = []
        for b in phi.branches:
            inv_p = float(1 / b.weight)
            axes = []
            for q in range(self.d):
                axes.append(_axis_gather(b.cell.origin[q], b.cell.side, m, phi.exact))
            # output index along axis r for sub-cell j of the branch
            outs = []
            for r in range(self.d):
                shift = b.anchor[r] * m
                if phi.exact:
                    if Fraction(shift).denominator != 1:
                        raise AlignmentError(
                            f"branch {b.cell.index}: image seam {b.anchor[r]} is off the m={m} grid"
                        )
                    shift = int(shift)
                else:
                    if abs(shift - round(shift)) > 1e-9:
                        raise AlignmentError(f"branch {b.cell.index}: image seam off the grid")
                    shift = int(round(shift))
                j = np.arange(m)
                y = (shift + j) % m if b.signs[r] > 0 else (shift - j - 1) % m
                outs.append(y)
            mats = []
            for lo, hi, w in axes:
                R = sparse.coo_matrix(
                    (np.concatenate([1 - w, w]), (np.concatenate([np.arange(m)] * 2), np.concatenate([lo, hi]))),
                    shape=(m, m),
                ).tocsr()
                mats.append(R)
            self.branches.append((b, inv_p, axes, outs, mats))
        if phi.exact:
            misaligned = any(
                Fraction(o * m).denominator != 1 or Fraction(b.cell.side * m).denominator != 1
                for b in phi.branches
                for o in b.cell.origin
            )
        else:
            misaligned = any(
                abs(x * m - round(x * m)) > 1e-9
                for b in phi.branches
                for x in (*[float(o) for o in b.cell.origin], float(b.cell.side))
            )
        self.aligned = not misaligned

    def push(self, f: np.ndarray) -> np.ndarray:
        d = self.d
        lead = f.ndim - d
        out = np.zeros_like(f, dtype=float)
        for b, inv_p, axes, outs, _ in self.branches:
            g = f
            for q, (lo, hi, w) in enumerate(axes):
                ax = lead + q
                ga = np.take(g, lo, axis=ax)
                gb = np.take(g, hi, axis=ax)
                shape = [1] * g.ndim
                shape[ax] = -1
                g = ga + w.reshape(shape) * (gb - ga)
            # output axis r is branch axis perm[r]
            g = np.moveaxis(g, [lead + p for p in b.perm], list(range(lead, lead + d)))
            index = (Ellipsis,) + np.ix_(*outs)
            out[index] += g / inv_p
        return out

    def pull(self, g: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`push` for the inner product ``sum(f g) / m^d``."""
        d = self.d
        lead = g.ndim - d
        out = np.zeros_like(g, dtype=float)
        for b, inv_p, axes, outs, mats in self.branches:
            h = g[(Ellipsis,) + np.ix_(*outs)]
            h = np.moveaxis(h, list(range(lead, lead + d)), [lead + p for p in b.perm])
            for q, R in enumerate(mats):
                h = _apply_along(R.T, h, lead + q)
            out += h / inv_p
        return out


def _apply_along(mat, arr: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, 0)
    flat = moved.reshape(moved.shape[0], -1)
    res = mat @ flat
    return np.moveaxis(res.reshape((mat.shape[0],) + moved.shape[1:]), 0, axis)


@lru_cache(maxsize=32)
def transfer_plan(phi: BernoulliMap, m: int) -> TransferPlan:
    plan = TransferPlan(phi, m)
    if not plan.aligned:
        warnings.warn(
            f"grid m={m} is not commensurate with the branch cells of {phi!r}; "
            "pushforward is a cell-average projection",
            AlignmentWarning,
            stacklevel=3,
        )
    return plan


class NoiseOperator:
    """Circular convolution by a kernel grid through real FFTs."""

    def __init__(self, kgrid: GridDensity):
        self.m, self.d = kgrid.m, kgrid.d
        axes = tuple(range(-self.d, 0))
        # the table is symmetric, so its transform is real; dropping the
        # rounding-level imaginary part keeps the operator self-adjoint
        self.symbol = np.fft.rfftn(kgrid.values, axes=axes).real / kgrid.values.size
        self.axes = axes

    def apply(self, f: np.ndarray) -> np.ndarray:
        if f.shape[-self.d :] != (self.m,) * self.d:
            raise SizeMismatchError(f"field shape {f.shape} does not match kernel grid m={self.m}")
        spec = np.fft.rfftn(f, axes=self.axes)
        return np.fft.irfftn(spec * self.symbol, s=(self.m,) * self.d, axes=self.axes)


@lru_cache(maxsize=64)
def noise_operator(kernel: NoiseKernel, m: int) -> NoiseOperator:
    return NoiseOperator(kernel_grid(kernel, m))


class Evolution:
    """Bundle of ``U*``, ``K``, ``T*`` and ``T`` for one (map, kernel, m)."""

    def __init__(self, phi: BernoulliMap, kernel: NoiseKernel, m: int):
        if kernel.d != phi.d:
            raise SizeMismatchError("kernel and map dimensions differ")
        self.phi, self.kernel, self.m, self.d = phi, kernel, m, phi.d
        self.plan = transfer_plan(phi, m)
        self.noise = noise_operator(kernel, m)

    def push(self, f):
        return self.plan.push(f)

    def convolve(self, f):
        return self.noise.apply(f)

    def T_star(self, f, n: int = 1):
        for _ in range(n):
            f = self.noise.apply(self.plan.push(f))
        return f

    def T(self, g, n: int = 1):
        for _ in range(n):
            g = self.plan.pull(self.noise.apply(g))
        return g


# ---------------------------------------------------------------------------
# public single-field API


def pushforward_U(phi: BernoulliMap, f: GridDensity) -> GridDensity:
    if f.d != phi.d:
        raise SizeMismatchError("density and map dimensions differ")
    return GridDensity(transfer_plan(phi, f.m).push(f.values))


def pullback_U(phi: BernoulliMap, g: GridDensity) -> GridDensity:
    """Cell-averaged composition ``g o phi`` (adjoint of :func:`pushforward_U`)."""
    return GridDensity(transfer_plan(phi, g.m).pull(g.values))


def convolve_noise(kgrid: GridDensity, f: GridDensity) -> GridDensity:
    if kgrid.values.shape != f.values.shape:
        raise SizeMismatchError(f"kernel grid {kgrid.values.shape} vs field {f.values.shape}")
    return GridDensity(NoiseOperator(kgrid).apply(f.values))


def step_T_star(phi: BernoulliMap, kernel: NoiseKernel, f: GridDensity) -> GridDensity:
    return GridDensity(Evolution(phi, kernel, f.m).T_star(f.values))


def step_T(phi: BernoulliMap, kernel: NoiseKernel, g: GridDensity) -> GridDensity:
    return GridDensity(Evolution(phi, kernel, g.m).T(g.values))


def distances(f: GridDensity) -> dict:
    """Total variation to Lebesgue (half the L1 distance) and the L2 distance."""
    dev = f.values - 1.0
    return {
        "tv": 0.5 * float(np.mean(np.abs(dev))),
        "l2": float(np.sqrt(np.mean(dev**2))),
    }


def tv_batch(f: np.ndarray, d: int) -> np.ndarray:
    axes = tuple(range(-d, 0))
    return 0.5 * np.mean(np.abs(f - 1.0), axis=axes)


def freq_split(f: GridDensity, cutoff: float):
    """Split into Fourier modes with ``|k| <= cutoff`` and the rest."""
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    m, d = f.m, f.d
    freqs = np.fft.fftfreq(m, 1.0 / m)
    grids = np.meshgrid(*([freqs] * d), indexing="ij")
    knorm = np.sqrt(sum(g**2 for g in grids))
    spec = np.fft.fftn(f.values)
    low_mask = knorm <= cutoff
    low = np.fft.ifftn(np.where(low_mask, spec, 0)).real
    high = np.fft.ifftn(np.where(low_mask, 0, spec)).real
    return GridDensity(low), GridDensity(high)


def indicator_density(phi: BernoulliMap, word, m: int) -> GridDensity:
    """Normalised indicator ``1_{C_s} / |C_s|`` of a cylinder on the grid."""
    cyl = cylinder_of(phi, word)
    d = phi.d
    lo = [c * m for c in cyl.origin]
    width = cyl.side * m
    if phi.exact:
        ok = all(Fraction(x).denominator == 1 for x in lo + [width])
    else:
        ok = all(abs(x - round(x)) < 1e-9 for x in lo + [width])
    if not ok:
        raise AlignmentError(f"cylinder {tuple(word)} is not a union of cells at m={m}")
    lo = [int(round(x)) for x in lo]
    width = int(round(width))
    vals = np.zeros((m,) * d)
    vals[tuple(slice(a, a + width) for a in lo)] = float(1 / cyl.volume)
    return GridDensity(vals)


def point_density(x, m: int, d: int = 1) -> GridDensity:
    """Unit mass concentrated on the cell containing ``x``."""
    idx = tuple(int(math.floor(float(c) * m)) % m for c in np.atleast_1d(x))
    if len(idx) != d:
        raise SizeMismatchError("point has the wrong dimension")
    vals = np.zeros((m,) * d)
    vals[idx] = float(m) ** d
    return GridDensity(vals)


def coarsen(f: GridDensity, factor: int) -> GridDensity:
    """Average ``factor^d`` blocks of cells into one."""
    m, d = f.m, f.d
    if factor < 1 or m % factor:
        raise SizeMismatchError(f"cannot coarsen m={m} by {factor}")
    shape = []
    for _ in range(d):
        shape += [m // factor, factor]
    v = f.values.reshape(shape)
    return GridDensity(v.mean(axis=tuple(range(1, 2 * d, 2))))


def refinement_factor(phi: BernoulliMap) -> int:
    """Smallest ``r`` such that ``U*`` on an ``r m`` grid, coarsened by ``r``,
    reproduces exact cell averages on the ``m`` grid.

    Every coarse cell's branch preimage must then be a union of fine cells,
    which holds once ``r`` clears the denominators of all cell origins and
    sides.  Only defined for maps with rational geometry.
    """
    if not phi.exact:
        raise AlignmentError("exact refinement needs rational branch cells")
    r = 1
    for b in phi.branches:
        for x in (*b.cell.origin, b.cell.side):
            r = math.lcm(r, Fraction(x).denominator)
    return r
