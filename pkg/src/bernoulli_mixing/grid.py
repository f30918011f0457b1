"""Value types for fields on a uniform periodic grid and on a Fourier lattice."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import SizeMismatchError


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Cell averages of a function on the d-torus, ``m`` cells per axis.

    Cell ``j`` covers ``[j/m, (j+1)/m)`` per axis for densities.  Kernel grids
    use cells centred on ``j/m`` instead, so that convolution by index shift
    is exact (see :func:`kernels.kernel_grid`).
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 1 or len(set(v.shape)) != 1:
            raise SizeMismatchError(f"grid must be m^d, got shape {v.shape}")
        if v.shape[0] < 2:
            raise SizeMismatchError("grid needs at least two cells per axis")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(self.m) ** (-self.d)

    def mean(self) -> float:
        return float(self.values.mean())

    def integral(self, other: "GridDensity | None" = None) -> float:
        """Integral over the torus, or the L2 inner product with ``other``."""
        if other is None:
            return self.mean()
        _check_same(self, other)
        return float(np.vdot(self.values, other.values).real) * self.cell_volume

    def lp_norm(self, p: float = 2) -> float:
        a = np.abs(self.values)
        if p == np.inf:
            return float(a.max())
        return float(np.mean(a**p) ** (1.0 / p))

    def __add__(self, other):
        _check_same(self, other)
        return GridDensity(self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return GridDensity(self.values - other.values)

    def scaled(self, c: float) -> "GridDensity":
        return GridDensity(self.values * c)

    # -- export -----------------------------------------------------------
    def to_csv(self, path) -> None:
        """Write ``index,value`` rows (flat C-order index)."""
        flat = self.values.ravel()
        with open(path, "w") as fh:
            fh.write(f"# d={self.d} m={self.m}\n")
            fh.write("index,value\n")
            for j, v in enumerate(flat):
                fh.write(f"{j},{v!r}\n")

    def to_bytes(self) -> bytes:
        """Compact dump: two little-endian uint32 (d, m) then float64 values."""
        return struct.pack("<II", self.d, self.m) + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GridDensity":
        d, m = struct.unpack("<II", blob[:8])
        vals = np.frombuffer(blob[8:], dtype="<f8").reshape((m,) * d)
        return cls(vals.copy())

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        with open(path) as fh:
            header = fh.readline().strip("# \n").split()
            meta = dict(item.split("=") for item in header)
            d, m = int(meta["d"]), int(meta["m"])
            data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 1].reshape((m,) * d))


def _check_same(a: GridDensity, b: GridDensity) -> None:
    if a.values.shape != b.values.shape:
        raise SizeMismatchError(f"grid shapes differ: {a.values.shape} vs {b.values.shape}")


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients on the box ``|k|_inf <= k_max``.

    ``coeffs`` has shape ``(2 k_max + 1,)^d`` with the zero mode at the
    centre index ``k_max``.
    """

    coeffs: np.ndarray
    k_max: int

    @property
    def d(self) -> int:
        return self.coeffs.ndim

    def index(self, k) -> tuple:
        return tuple(int(c) + self.k_max for c in np.atleast_1d(k))

    def coefficient(self, k) -> complex:
        idx = self.index(k)
        if any(not 0 <= i < self.coeffs.shape[0] for i in idx):
            return 0j
        return complex(self.coeffs[idx])

    def modes(self) -> np.ndarray:
        """Integer lattice vectors, shape ``coeffs.shape + (d,)``."""
        r = np.arange(-self.k_max, self.k_max + 1)
        grids = np.meshgrid(*([r] * self.d), indexing="ij")
        return np.stack(grids, axis=-1)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def is_real(self, tol: float = 0.0) -> bool:
        flipped = np.conj(self.coeffs[(slice(None, None, -1),) * self.d])
        return bool(np.max(np.abs(self.coeffs - flipped)) <= tol)

    @classmethod
    def from_modes(cls, d: int, k_max: int, entries: dict) -> "SpectralField":
        c = np.zeros((2 * k_max + 1,) * d, dtype=complex)
        field = cls(c, k_max)
        for k, v in entries.items():
            c[field.index(k)] = v
        return field

    def to_grid(self, m: int) -> GridDensity:
        """Cell averages of the trigonometric polynomial on an ``m^d`` grid."""
        if 2 * self.k_max >= m:
            raise SizeMismatchError("grid too coarse for the spectral cutoff")
        full = np.zeros((m,) * self.d, dtype=complex)
        r = np.arange(-self.k_max, self.k_max + 1)
        idx = np.ix_(*([r % m] * self.d))
        # cell [j/m, (j+1)/m): average of exp(2 pi i k x) is a phase times sinc
        factor = np.ones(())
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = -1
            f1 = np.sinc(r / m) * np.exp(1j * np.pi * r / m)
            factor = factor * f1.reshape(shape)
        full[idx] = self.coeffs * factor
        vals = np.fft.ifftn(full) * m**self.d
        return GridDensity(vals.real)
