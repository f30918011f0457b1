"""Periodised noise densities ``K_eps`` on the torus.

Every kernel is a reference density ``k`` on R^d rescaled to ``eps^-d k(x/eps)``
and wrapped onto the torus.  Supported reference densities:

``gaussian``        centred normal with a given covariance (identity by default)
``ball``            uniform on the unit ball
``tensor_tent``     product of ``(1 - |t|)_+``
``tensor_uniform``  product of indicators of ``[-1/2, 1/2]``
``grid``            a tabulated kernel grid, passed through unchanged
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .errors import ResolutionError, SizeMismatchError, UnsupportedError
from .grid import GridDensity

KINDS = ("gaussian", "ball", "tensor_tent", "tensor_uniform", "grid")
COMPACT = ("ball", "tensor_tent", "tensor_uniform")


@dataclass(frozen=True, eq=False)
class NoiseKernel:
    kind: str
    epsilon: float
    d: int = 1
    covariance: Optional[np.ndarray] = None
    table: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedError(f"unknown kernel kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.kind == "gaussian":
            cov = np.eye(self.d) if self.covariance is None else np.asarray(self.covariance, float)
            if cov.shape != (self.d, self.d) or not np.allclose(cov, cov.T):
                raise ValueError("covariance must be a symmetric d x d matrix")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise ValueError("covariance must be positive definite")
            object.__setattr__(self, "covariance", cov)
        if self.kind == "grid":
            if self.table is None:
                raise ValueError("grid kernels need a table")
            tab = np.asarray(self.table, float)
            object.__setattr__(self, "table", tab)
            object.__setattr__(self, "d", tab.ndim)

    @property
    def support_radius(self) -> float:
        """Half-width of the support along an axis (inf for the Gaussian)."""
        return {"ball": 1.0, "tensor_tent": 1.0, "tensor_uniform": 0.5}.get(self.kind, math.inf) * self.epsilon

    def with_epsilon(self, epsilon: float) -> "NoiseKernel":
        return NoiseKernel(self.kind, epsilon, self.d, self.covariance, self.table)

    @property
    def is_isotropic(self) -> bool:
        if self.kind == "gaussian":
            c = self.covariance
            return bool(np.allclose(c, c[0, 0] * np.eye(self.d), rtol=0, atol=0))
        return self.kind != "grid"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "epsilon": self.epsilon, "d": self.d}
        if self.kind == "gaussian" and not np.array_equal(self.covariance, np.eye(self.d)):
            out["covariance"] = self.covariance.tolist()
        return out


def make_kernel(spec: dict, d: int = 1) -> NoiseKernel:
    return NoiseKernel(
        kind=spec["kind"],
        epsilon=float(spec["epsilon"]),
        d=int(spec.get("d", d)),
        covariance=spec.get("covariance"),
    )


# ---------------------------------------------------------------------------
# grids


def _centred_edges(m: int):
    """Left/right edges of the cells centred on j/m for j = 0 .. m//2."""
    j = np.arange(m // 2 + 1)
    return (j - 0.5) / m, (j + 0.5) / m


def _mirror(half: np.ndarray, m: int) -> np.ndarray:
    """Fill a length-m periodic array from its values at j = 0 .. m//2."""
    full = np.empty(m)
    full[: m // 2 + 1] = half
    j = np.arange(m // 2 + 1, m)
    full[j] = half[m - j]
    return full


def _gauss_mass(a, b, sigma):
    # upper-tail differences keep relative precision far from the origin
    lo, hi = a / sigma, b / sigma
    return np.where(lo > 0, special.ndtr(-lo) - special.ndtr(-hi), special.ndtr(hi) - special.ndtr(lo))


def _axis_cell_averages(kind: str, eps: float, m: int, sigma: float = 1.0) -> np.ndarray:
    """Cell averages of a one-dimensional periodised factor, mean exactly 1."""
    a, b = _centred_edges(m)
    if kind == "gaussian":
        s = sigma * eps
        n_img = 1 + math.ceil(8 * s)
        mass = np.zeros_like(a)
        for n in range(-n_img, n_img + 1):
            mass += _gauss_mass(a + n, b + n, s)
    else:
        if kind == "tensor_uniform":
            cdf = lambda t: np.clip(t / eps + 0.5, 0.0, 1.0)
        elif kind == "tensor_tent":
            def cdf(t):
                u = np.clip(t / eps, -1.0, 1.0)
                return np.where(u <= 0, 0.5 * (1 + u) ** 2, 1 - 0.5 * (1 - u) ** 2)
        elif kind == "ball":
            cdf = lambda t: np.clip(0.5 * (t / eps + 1.0), 0.0, 1.0)
        else:
            raise UnsupportedError(kind)
        mass = cdf(b) - cdf(a)
    full = _mirror(mass, m)
    return full / full.mean()


def _outer(vectors) -> np.ndarray:
    out = vectors[0]
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def _disc_strip_area(r: float, x0: float, x1: float, y0: float, y1: float) -> float:
    """Exact area of the disc of radius ``r`` (centre 0) inside a rectangle."""
    a, b = max(x0, -r), min(x1, r)
    if a >= b or y0 >= r or y1 <= -r:
        return 0.0

    def S(x):  # antiderivative of sqrt(r^2 - x^2)
        x = min(max(x, -r), r)
        return 0.5 * (x * math.sqrt(max(r * r - x * x, 0.0)) + r * r * math.asin(x / r))

    cuts = {a, b}
    for y in (y0, y1):
        if abs(y) < r:
            h = math.sqrt(r * r - y * y)
            cuts.update(c for c in (-h, h) if a < c < b)
    pts = sorted(cuts)
    area = 0.0
    for lo, hi in zip(pts, pts[1:]):
        mid = 0.5 * (lo + hi)
        s = math.sqrt(max(r * r - mid * mid, 0.0))
        top_is_disc = s < y1
        bot_is_disc = -s > y0
        if min(y1, s) <= max(y0, -s):
            continue
        # integrand min(y1, s) - max(y0, -s) on this piece
        top = (S(hi) - S(lo)) if top_is_disc else y1 * (hi - lo)
        bot = -(S(hi) - S(lo)) if bot_is_disc else y0 * (hi - lo)
        area += top - bot
    return area


def _ball_grid(eps: float, d: int, m: int, sub: int = 16) -> np.ndarray:
    """Cell averages of the uniform ball density.

    In two dimensions every cell/disc overlap is integrated in closed form;
    higher dimensions fall back to a ``sub^d`` midpoint rule per cell.
    """
    R = int(math.ceil(eps * m)) + 1
    if 2 * R + 1 > m:
        raise ResolutionError("ball support wraps around the torus")
    centres = np.arange(R + 1)
    if d == 2:
        inside = np.zeros((R + 1, R + 1))
        for i in centres:
            for j in centres[: i + 1]:
                area = _disc_strip_area(eps, (i - 0.5) / m, (i + 0.5) / m, (j - 0.5) / m, (j + 0.5) / m)
                inside[i, j] = inside[j, i] = area * m * m
    else:
        offs = (np.arange(sub) + 0.5) / sub - 0.5
        pos = (centres[:, None] + offs[None, :]) / m  # (R+1, sub)
        r2 = np.zeros((R + 1,) * d + (sub,) * d)
        for ax in range(d):
            shape = [1] * (2 * d)
            shape[ax] = R + 1
            shape[d + ax] = sub
            r2 = r2 + (pos**2).reshape(shape)
        inside = (r2 <= eps * eps).mean(axis=tuple(range(d, 2 * d)))
    full = np.zeros((m,) * d)
    idx = np.arange(-R, R + 1)
    full[np.ix_(*([idx % m] * d))] = inside[np.ix_(*([np.abs(idx)] * d))]
    return full / full.mean()


def _gaussian_fourier_grid(kernel: NoiseKernel, m: int) -> np.ndarray:
    """Cell averages of a correlated Gaussian by summing its aliased symbol."""
    d, eps, cov = kernel.d, kernel.epsilon, kernel.covariance
    lam_min = float(np.linalg.eigvalsh(cov).min())
    q_max = 1 + math.ceil(3.0 / (eps * math.sqrt(lam_min) * m))
    base = np.fft.fftfreq(m, 1.0 / m)
    acc = np.zeros((m,) * d)
    for shift in np.ndindex(*([2 * q_max + 1] * d)):
        ks = [base + (s - q_max) * m for s in shift]
        grids = np.meshgrid(*ks, indexing="ij")
        kvec = np.stack(grids, axis=-1)
        quad = np.einsum("...i,ij,...j->...", kvec, cov, kvec)
        sym = np.exp(-2 * np.pi**2 * eps**2 * quad)
        for g in grids:
            sym = sym * np.sinc(g / m)
        acc += sym
    vals = np.fft.ifftn(acc).real * m**d
    return vals / vals.mean()


def kernel_grid(kernel: NoiseKernel, m: int) -> GridDensity:
    """Cell-averaged kernel on an ``m^d`` grid with cells centred on ``j/m``.

    Index ``j`` stands for the displacement ``j/m`` (mod 1), so that the
    discrete circular convolution of a density grid by this table shifts
    mass by whole cells.  The result has unit mean exactly (up to rounding)
    and satisfies ``K[j] == K[m - j]`` along every axis.
    """
    if m < 4:
        raise ResolutionError("kernel grids need m >= 4")
    if kernel.kind == "grid":
        if kernel.table.shape != (m,) * kernel.d:
            raise SizeMismatchError(f"tabulated kernel has shape {kernel.table.shape}")
        return GridDensity(kernel.table.copy())
    eps, d = kernel.epsilon, kernel.d
    if kernel.kind in COMPACT and eps * m < 2:
        raise ResolutionError(f"support of width ~{eps:g} is below two cells at m={m}")
    if kernel.kind == "gaussian":
        cov = kernel.covariance
        if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
            axes = [_axis_cell_averages("gaussian", eps, m, math.sqrt(cov[i, i])) for i in range(d)]
            return GridDensity(_outer(axes))
        return GridDensity(_gaussian_fourier_grid(kernel, m))
    if kernel.kind == "ball" and d > 1:
        return GridDensity(_ball_grid(eps, d, m))
    axis = _axis_cell_averages(kernel.kind, eps, m)
    return GridDensity(_outer([axis] * d))


# ---------------------------------------------------------------------------
# Fourier side


def _ball_symbol(z: np.ndarray, d: int) -> np.ndarray:
    """Fourier transform of the uniform density on the unit ball at radius z/(2 pi)."""
    z = np.asarray(z, float)
    out = np.ones_like(z)
    nz = z != 0
    if d == 1:
        out[nz] = np.sin(z[nz]) / z[nz]
    else:
        nu = d / 2.0
        out[nz] = special.gamma(nu + 1) * (2.0 / z[nz]) ** nu * special.jv(nu, z[nz])
    return out


def fourier_symbol(kernel: NoiseKernel, k) -> np.ndarray:
    """Vectorised ``K_eps^(k)`` for real frequency vectors ``k[..., d]``."""
    k = np.asarray(k, float)
    if kernel.d == 1 and (k.ndim == 0 or k.shape[-1] != 1):
        k = k[..., None]
    eps = kernel.epsilon
    if kernel.kind == "gaussian":
        quad = np.einsum("...i,ij,...j->...", k, kernel.covariance, k)
        return np.exp(-2 * np.pi**2 * eps**2 * quad)
    if kernel.kind == "ball":
        return _ball_symbol(2 * np.pi * eps * np.linalg.norm(k, axis=-1), kernel.d)
    if kernel.kind == "tensor_uniform":
        return np.prod(np.sinc(k * eps), axis=-1)
    if kernel.kind == "tensor_tent":
        return np.prod(np.sinc(k * eps) ** 2, axis=-1)
    raise UnsupportedError("tabulated kernels have no closed-form transform; use the grid DFT")


def kernel_fourier(kernel: NoiseKernel, k) -> float:
    """Fourier coefficient ``K_eps^(k)`` at an integer lattice vector."""
    k = np.atleast_1d(np.asarray(k))
    if k.shape != (kernel.d,) and kernel.kind != "grid":
        raise ValueError(f"expected a lattice vector of length {kernel.d}")
    return float(fourier_symbol(kernel, k.astype(float)))


def cell_average_symbol(kernel: NoiseKernel, k, m: int, n_alias: Optional[int] = None) -> float:
    """What the DFT of :func:`kernel_grid` should equal at lattice vector ``k``.

    Cell averaging multiplies each mode by ``sinc(k/m)`` per axis and the
    grid folds modes ``k + q m`` onto ``k``; both effects are summed over
    ``|q| <= n_alias``.  Product kernels factor into one sum per axis, which
    allows a long alias range (default 2**16); the ball in d >= 2 uses a
    joint sum (default range 128).
    """
    k = np.atleast_1d(np.asarray(k, float))
    d = kernel.d
    separable = d == 1 or kernel.kind in ("tensor_tent", "tensor_uniform") or (
        kernel.kind == "gaussian" and np.count_nonzero(kernel.covariance - np.diag(np.diag(kernel.covariance))) == 0
    )
    if separable:
        n_alias = 2**16 if n_alias is None else n_alias
        qs = np.arange(-n_alias, n_alias + 1, dtype=float)
        total = 1.0
        for i in range(d):
            kk = k[i] + m * qs
            if kernel.kind == "gaussian":
                var = float(kernel.covariance[i, i])
                sym = np.exp(-2 * np.pi**2 * kernel.epsilon**2 * var * kk * kk)
            else:
                probe = np.zeros((kk.size, d))
                probe[:, i] = kk
                sym = fourier_symbol(kernel, probe)
            total *= float(np.sum(sym * np.sinc(kk / m)))
        return total
    n_alias = 128 if n_alias is None else n_alias
    qs = np.arange(-n_alias, n_alias + 1)
    grids = np.meshgrid(*([qs] * d), indexing="ij")
    kk = np.stack([k[i] + m * grids[i] for i in range(d)], axis=-1)
    sym = fourier_symbol(kernel, kk)
    for i in range(d):
        sym = sym * np.sinc(kk[..., i] / m)
    return float(np.sum(sym))


def grid_dft(kgrid: GridDensity) -> np.ndarray:
    """Normalised DFT of a kernel grid: entry ``k`` approximates ``K^(k)``."""
    return np.fft.fftn(kgrid.values).real / kgrid.values.size


# ---------------------------------------------------------------------------
# sampling


def kernel_sample(kernel: NoiseKernel, rng, size=None) -> np.ndarray:
    """Draw displacements ``eps * zeta`` reduced to ``[-1/2, 1/2)^d``.

    ``rng`` is a :class:`numpy.random.Generator` or a seed.  With ``size``
    omitted a single displacement of shape ``(d,)`` is returned.
    """
    rng = np.random.default_rng(rng)
    n = 1 if size is None else int(size)
    d, eps = kernel.d, kernel.epsilon
    if kernel.kind == "gaussian":
        chol = np.linalg.cholesky(kernel.covariance)
        z = rng.standard_normal((n, d)) @ chol.T
    elif kernel.kind == "tensor_uniform":
        z = rng.uniform(-0.5, 0.5, (n, d))
    elif kernel.kind == "tensor_tent":
        z = rng.uniform(-0.5, 0.5, (n, d)) + rng.uniform(-0.5, 0.5, (n, d))
    elif kernel.kind == "ball":
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        z = g * rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / d)
    else:
        m = kernel.table.shape[0]
        p = kernel.table.ravel() / kernel.table.sum()
        cells = rng.choice(p.size, size=n, p=p)
        idx = np.stack(np.unravel_index(cells, kernel.table.shape), axis=1)
        pos = (idx + rng.uniform(-0.5, 0.5, (n, d))) / m
        return _wrap(pos)[0] if size is None else _wrap(pos)
    out = _wrap(eps * z)
    return out[0] if size is None else out


def _wrap(x: np.ndarray) -> np.ndarray:
    return x - np.floor(x + 0.5)


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class KernelStats:
    first_moment: float
    bold_K: float
    tail_sup: float
    A: float
    A_lower: float
    kappa: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


_GL_CACHE: dict = {}


def _gauss_legendre(breaks, n):
    key = (tuple(breaks), n)
    if key not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        nodes, weights = [], []
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            half = 0.5 * (hi - lo)
            nodes.append(lo + half * (x + 1))
            weights.append(half * w)
        _GL_CACHE[key] = (np.concatenate(nodes), np.concatenate(weights))
    return _GL_CACHE[key]


def kernel_density(kernel: NoiseKernel, y: np.ndarray) -> np.ndarray:
    """Pointwise periodised density at displacements ``y[..., d]`` in ``[-1/2,1/2)^d``."""
    y = np.asarray(y, float)
    d, eps = kernel.d, kernel.epsilon
    if kernel.kind == "gaussian":
        inv = np.linalg.inv(kernel.covariance)
        norm = 1.0 / (math.sqrt((2 * math.pi) ** d * np.linalg.det(kernel.covariance)) * eps**d)
        n_img = 1 + math.ceil(8 * eps * math.sqrt(np.linalg.eigvalsh(kernel.covariance).max()))
        out = np.zeros(y.shape[:-1])
        for shift in np.ndindex(*([2 * n_img + 1] * d)):
            z = (y + (np.array(shift) - n_img)) / eps
            out += np.exp(-0.5 * np.einsum("...i,ij,...j->...", z, inv, z))
        return out * norm
    u = y / eps
    if kernel.kind == "tensor_uniform":
        return np.prod((np.abs(u) <= 0.5).astype(float), axis=-1) / eps**d
    if kernel.kind == "tensor_tent":
        return np.prod(np.clip(1 - np.abs(u), 0, None), axis=-1) / eps**d
    if kernel.kind == "ball":
        vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        return (np.linalg.norm(u, axis=-1) <= 1).astype(float) / (vol * eps**d)
    raise UnsupportedError("pointwise density needs a closed-form kernel")


def _first_moment(kernel: NoiseKernel, tol: float = 1e-6) -> float:
    """Integral of the torus distance ``|y|`` against ``K_eps`` by refined quadrature."""
    d = kernel.d
    if kernel.kind == "ball":
        # exact: E|y| for the uniform law on a ball of radius eps
        return kernel.epsilon * d / (d + 1)
    breaks = sorted({0.0, 0.5, min(kernel.support_radius, 0.5)})
    prev = None
    n = 8
    while True:
        x, w = _gauss_legendre(breaks, n)
        grids = np.meshgrid(*([x] * d), indexing="ij")
        ws = _outer([w] * d)
        y = np.stack(grids, axis=-1)
        val = (2**d) * float(np.sum(ws * np.linalg.norm(y, axis=-1) * kernel_density(kernel, y)))
        if prev is not None and abs(val - prev) < tol:
            return val
        prev = val
        n *= 2
        if n > (4096 if d == 1 else 256):
            return val


def _bold_K(kernel: NoiseKernel) -> float:
    """``eps^(d/2) * ||K_eps||_L2``."""
    d, eps = kernel.d, kernel.epsilon
    if kernel.kind == "gaussian":
        # Parseval over the lattice; the symbol decays like a Gaussian
        kmax = int(math.ceil(6.0 / (eps * math.sqrt(np.linalg.eigvalsh(kernel.covariance).min())))) + 2
        r = np.arange(-kmax, kmax + 1, dtype=float)
        grids = np.meshgrid(*([r] * d), indexing="ij")
        sym = fourier_symbol(kernel, np.stack(grids, axis=-1))
        return eps ** (d / 2) * math.sqrt(float(np.sum(sym**2)))
    if kernel.kind == "tensor_uniform":
        l2sq = 1.0 / eps**d
    elif kernel.kind == "tensor_tent":
        l2sq = (2.0 / (3.0 * eps)) ** d
    elif kernel.kind == "ball":
        vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        l2sq = 1.0 / (vol * eps**d)
    else:
        l2sq = float(np.mean(kernel.table**2))
    return eps ** (d / 2) * math.sqrt(l2sq)


def tail_sup(kernel: NoiseKernel, c: float, samples: int = 20001) -> float:
    """``sup |K_eps^(k)|`` over real frequencies with ``|k| > c / eps``.

    The symbols are radial (ball, isotropic Gaussian) or products of even
    factors; the supremum is scanned on a fine polar/axis grid out to a
    frequency where every symbol has decayed.
    """
    eps = kernel.epsilon
    R = c / eps
    r = R + np.linspace(0.0, max(40.0, 10 * c) / eps, samples)[1:]
    r = np.concatenate([[R * (1 + 1e-12)], r])
    if kernel.d == 1 or (kernel.kind == "ball") or (kernel.kind == "gaussian" and kernel.is_isotropic):
        if kernel.kind == "gaussian" and kernel.d > 1:
            direction = np.eye(kernel.d)[0]
            k = r[:, None] * direction
        else:
            k = r[:, None] * np.eye(kernel.d)[0]
        return float(np.max(np.abs(fourier_symbol(kernel, k))))
    theta = np.linspace(0, 2 * np.pi, 721)
    best = 0.0
    for th in theta:
        k = r[:, None] * np.array([np.cos(th), np.sin(th)] + [0.0] * (kernel.d - 2))
        best = max(best, float(np.max(np.abs(fourier_symbol(kernel, k)))))
    return best


def _factor_moments(kernel: NoiseKernel) -> tuple:
    """``(int |t| k(t) dt, int_0^{1/2} t k(t) dt)`` for the reference factor."""
    if kernel.kind == "tensor_tent":
        return 1.0 / 3.0, 1.0 / 12.0
    if kernel.kind == "tensor_uniform":
        return 0.25, 0.125
    if kernel.kind == "gaussian" and np.count_nonzero(kernel.covariance - np.diag(np.diag(kernel.covariance))) == 0:
        s = math.sqrt(float(kernel.covariance[0, 0]))
        A = s * math.sqrt(2 / math.pi)
        A_lower = s * (1 - math.exp(-0.125 / (s * s))) / math.sqrt(2 * math.pi)
        return A, A_lower
    return math.nan, math.nan


def kappa(kernel: NoiseKernel, eta: float) -> float:
    """Infimum of the reference density over differences of points in ``[0, eta)^d``."""
    d = kernel.d
    if kernel.kind == "gaussian":
        inv = np.linalg.inv(kernel.covariance)
        norm = 1.0 / math.sqrt((2 * math.pi) ** d * np.linalg.det(kernel.covariance))
        corners = np.array(list(np.ndindex(*([2] * d)))) * 2 - 1
        vals = [math.exp(-0.5 * eta * eta * float(c @ inv @ c)) for c in corners]
        return norm * min(vals)
    if kernel.kind == "tensor_tent":
        return max(0.0, 1 - eta) ** d
    if kernel.kind == "tensor_uniform":
        return 1.0 if eta <= 0.5 else 0.0
    if kernel.kind == "ball":
        vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        return 1.0 / vol if eta * math.sqrt(d) <= 1 else 0.0
    raise UnsupportedError("kappa needs a closed-form kernel")


def kernel_stats(kernel: NoiseKernel, c: float, eta: float) -> KernelStats:
    A, A_lower = _factor_moments(kernel)
    return KernelStats(
        first_moment=_first_moment(kernel),
        bold_K=_bold_K(kernel),
        tail_sup=tail_sup(kernel, c),
        A=A,
        A_lower=A_lower,
        kappa=kappa(kernel, eta),
    )
