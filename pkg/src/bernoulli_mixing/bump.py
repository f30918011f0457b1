"""Bump profiles on cylinders and numerical certificates for their decay.

``F0`` is a unit-mass product profile on the unit cube that vanishes on its
boundary (a product of sines, or of tents).  ``F_s`` transplants it onto the
cylinder ``C_s`` through the affine map ``phi^|s|``, so that ``U* F_s`` is
``F_{sigma s}``.  Two inequalities are certified here by direct computation:

* one noise step shrinks the profile by at most ``1 - a eps^gamma``;
* repeated ``T*`` steps keep ``T*^n F_s >= beta F_{sigma^n s}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .density import Evolution, noise_operator
from .errors import (
    AlignmentError,
    CertificateFailure,
    PersistenceFailure,
    ResolutionError,
    UnsupportedError,
)
from .grid import GridDensity
from .kernels import NoiseKernel, _factor_moments
from .maps import BernoulliMap, cylinder_of, shift

__all__ = [
    "BumpProfile",
    "EigenCertificate",
    "PersistenceReport",
    "build_F0",
    "build_Fs",
    "eigen_constants",
    "beta_constant",
    "verify_eigen_inequality",
    "verify_envelope_persistence",
    "geometric_sum_check",
]

PROFILE_KINDS = ("sine", "tent")
# cells below this fraction of the peak are left out of ratio tests
RATIO_FLOOR = 1e-6


@dataclass(frozen=True)
class BumpProfile:
    """Unit-mass product profile on ``[0,1]^d``, extended periodically."""

    kind: str
    d: int = 1

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise UnsupportedError(f"unknown profile {self.kind!r}; choose from {PROFILE_KINDS}")
        if self.d < 1:
            raise ValueError("dimension must be positive")

    @property
    def factor_norm(self) -> float:
        """Scale that gives one factor unit integral over ``[0,1]``."""
        return math.pi / 2 if self.kind == "sine" else 4.0

    @property
    def normalization(self) -> float:
        return self.factor_norm**self.d

    @property
    def peak(self) -> float:
        return (math.pi / 2) ** self.d if self.kind == "sine" else 2.0**self.d

    def _antiderivative(self, x: np.ndarray) -> np.ndarray:
        """Integral from 0 to ``x`` of the periodic, unnormalised factor."""
        n = np.floor(x)
        u = x - n
        if self.kind == "sine":
            return (2.0 / math.pi) * n + (1.0 - np.cos(math.pi * u)) / math.pi
        inner = np.where(u <= 0.5, 0.5 * u * u, 0.25 - 0.5 * (1.0 - u) ** 2)
        return 0.25 * n + inner

    def factor(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        u = x - np.floor(x)
        if self.kind == "sine":
            return self.factor_norm * np.sin(math.pi * u)
        return self.factor_norm * np.minimum(u, 1.0 - u)

    def evaluate(self, x) -> np.ndarray:
        """Pointwise value at rows of ``x`` (shape ``(..., d)``)."""
        x = np.asarray(x, float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return np.prod(self.factor(x), axis=-1)

    def axis_averages(self, lo, hi) -> np.ndarray:
        """Average of one normalised factor over each interval ``[lo, hi]``."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        return self.factor_norm * (self._antiderivative(hi) - self._antiderivative(lo)) / (hi - lo)


def _outer(vectors) -> np.ndarray:
    out = vectors[0]
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def _profile(kind, d: int) -> BumpProfile:
    return kind if isinstance(kind, BumpProfile) else BumpProfile(kind, d)


def build_F0(kind, d: int, m: int) -> GridDensity:
    """Exact cell averages of the profile on the ``m^d`` grid of ``[0,1)^d``."""
    prof = _profile(kind, d)
    if m < 16:
        raise ResolutionError("the bump profile needs at least 16 cells per axis")
    j = np.arange(m)
    avg = prof.axis_averages(j / m, (j + 1) / m)
    return GridDensity(_outer([avg] * prof.d))


def _local_frame(phi: BernoulliMap, word: tuple):
    """Signed axis permutation of ``phi^|s|`` in the unit coordinates of ``C_s``.

    A point at relative position ``u`` in ``C_s`` lands at ``v`` in the torus
    with ``v_r = u_{perm[r]}`` or ``1 - u_{perm[r]}`` when ``flip[r]``.
    """
    d = phi.d
    perm = list(range(d))
    flip = [False] * d
    for i in word:
        b = phi.branch(i)
        new_perm = [perm[b.perm[r]] for r in range(d)]
        new_flip = [(b.signs[r] < 0) != flip[b.perm[r]] for r in range(d)]
        perm, flip = new_perm, new_flip
    return perm, flip


def build_Fs(phi: BernoulliMap, word, kind, m: int) -> GridDensity:
    """``F_s = 1_{C_s} F0(phi^|s| x) / |C_s|`` as exact cell averages."""
    word = tuple(word)
    prof = _profile(kind, phi.d)
    cyl = cylinder_of(phi, word)
    width = cyl.side * m
    starts = [o * m for o in cyl.origin]
    if phi.exact:
        aligned = all(Fraction(x).denominator == 1 for x in (width, *starts))
    else:
        aligned = all(abs(x - round(x)) < 1e-9 for x in (width, *starts))
    if not aligned:
        raise AlignmentError(f"cylinder {word} is not a union of cells at m={m}")
    n = int(round(width))
    if n < 8:
        raise ResolutionError(f"cylinder {word} spans {n} cells; at least 8 are needed")
    starts = [int(round(x)) for x in starts]
    j = np.arange(n)
    perm, flip = _local_frame(phi, word)
    # factor r of F0 reads the local axis perm[r], reversed when flipped
    factors = []
    for r in range(phi.d):
        lo, hi = j / n, (j + 1) / n
        if flip[r]:
            lo, hi = 1 - hi, 1 - lo
        factors.append(prof.axis_averages(lo, hi))
    block = _outer(factors) if phi.d > 1 else factors[0]
    # axis r of ``block`` is indexed by local axis perm[r]; reorder to local axes
    if phi.d > 1:
        block = np.transpose(block, np.argsort(perm))
    vals = np.zeros((m,) * phi.d)
    vals[tuple(slice(s0, s0 + n) for s0 in starts)] = block * float(1 / cyl.volume)
    return GridDensity(vals)


# ---------------------------------------------------------------------------
# constants


def _second_moments(kernel: NoiseKernel) -> np.ndarray:
    """Per-axis variance of the unscaled noise ``zeta``."""
    d = kernel.d
    if kernel.kind == "gaussian":
        return np.diag(kernel.covariance).astype(float)
    if kernel.kind == "tensor_uniform":
        return np.full(d, 1.0 / 12.0)
    if kernel.kind == "tensor_tent":
        return np.full(d, 1.0 / 6.0)
    if kernel.kind == "ball":
        return np.full(d, 1.0 / (d + 2))
    raise UnsupportedError("tabulated kernels have no closed-form moments")


def _coordinate_symmetric(kernel: NoiseKernel) -> bool:
    if kernel.kind == "gaussian":
        c = kernel.covariance
        return bool(np.count_nonzero(c - np.diag(np.diag(c))) == 0)
    return kernel.kind in ("ball", "tensor_uniform", "tensor_tent")


def eigen_constants(kernel: NoiseKernel, profile) -> tuple:
    """``(a, gamma)`` with ``K_eps * F0 >= (1 - a eps^gamma) F0``.

    Sine products: each factor is an eigenfunction of convolution on the
    line with eigenvalue ``E prod cos(pi eps zeta_q)``, which is at least
    ``1 - pi^2 eps^2 E|zeta|^2 / 2``.  This needs the noise law to be
    symmetric in each coordinate separately.

    Tent products: a tensor kernel with factor first moments ``A_q`` gives
    ``a = 4 sum_q A_q`` and ``gamma = 1``.
    """
    prof = _profile(profile, kernel.d)
    if not _coordinate_symmetric(kernel):
        raise UnsupportedError("the bump certificates need noise symmetric in each coordinate")
    if prof.kind == "sine":
        return math.pi**2 / 2 * float(np.sum(_second_moments(kernel))), 2.0
    if kernel.kind == "ball" and kernel.d > 1:
        raise UnsupportedError("tent profiles need a tensor-product kernel")
    if kernel.kind == "ball":
        A = 0.5
        return 4.0 * A, 1.0
    if kernel.kind == "gaussian":
        sig = np.sqrt(np.diag(kernel.covariance))
        return 4.0 * float(np.sum(sig * math.sqrt(2 / math.pi))), 1.0
    A, _ = _factor_moments(kernel)
    return 4.0 * kernel.d * A, 1.0


def beta_constant(a: float, gamma: float, p_max, d: int) -> float:
    """Lower envelope factor for ``T*^n F_s`` against ``F_{sigma^n s}``."""
    q = 1.0 - float(p_max) ** (gamma / d)
    if not q > 0:
        raise ValueError("p_max must be below 1")
    return math.exp(-2.0 * math.log(2.0) / (2.0 * a * q))


@dataclass
class EigenCertificate:
    a: float
    gamma: float
    eta: float
    beta: float
    worst_ratio: dict = field(default_factory=dict)
    bound: dict = field(default_factory=dict)
    margin: dict = field(default_factory=dict)
    kernel: str = ""
    profile: str = ""
    d: int = 1
    m: int = 0
    tol: float = 0.0
    passed: bool = True

    def as_dict(self) -> dict:
        return {
            "a": self.a,
            "gamma": self.gamma,
            "eta": self.eta,
            "beta": self.beta,
            "kernel": self.kernel,
            "profile": self.profile,
            "d": self.d,
            "m": self.m,
            "tol": self.tol,
            "passed": self.passed,
            "rows": [
                {
                    "epsilon": e,
                    "worst_ratio": self.worst_ratio[e],
                    "bound": self.bound[e],
                    "margin": self.margin[e],
                }
                for e in sorted(self.worst_ratio)
            ],
        }


def _ratio_min(num: np.ndarray, den: np.ndarray, peak: float):
    mask = den > RATIO_FLOOR * peak
    ratio = np.where(mask, num / np.where(mask, den, 1.0), np.inf)
    idx = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
    return float(ratio[idx]), idx


def verify_eigen_inequality(
    kernel: NoiseKernel,
    profile,
    eps_list,
    m: int | None = None,
    tol: float = 1e-3,
    p_max=0.5,
    raise_on_failure: bool = True,
) -> EigenCertificate:
    """Measure ``min (K_eps * F0) / F0`` and compare with ``1 - a eps^gamma``.

    ``p_max`` only enters the reported ``beta``.
    """
    prof = _profile(profile, kernel.d)
    d = kernel.d
    m = m or (4096 if d == 1 else 512)
    a, gamma = eigen_constants(kernel, prof)
    cert = EigenCertificate(
        a=a,
        gamma=gamma,
        eta=(2 * a) ** (1 / gamma),
        beta=beta_constant(a, gamma, p_max, d),
        kernel=kernel.kind,
        profile=prof.kind,
        d=d,
        m=m,
        tol=tol,
    )
    F0 = build_F0(prof, d, m).values
    for eps in eps_list:
        eps = float(eps)
        bound = 1.0 - a * eps**gamma
        if not bound > 0:
            raise ValueError(f"eps={eps} is too large: 1 - a eps^gamma = {bound:.3g}")
        smoothed = noise_operator(kernel.with_epsilon(eps), m).apply(F0)
        worst, idx = _ratio_min(smoothed, F0, prof.peak)
        cert.worst_ratio[eps] = worst
        cert.bound[eps] = bound
        cert.margin[eps] = worst - bound
        if worst < bound - tol:
            cert.passed = False
            if raise_on_failure:
                raise CertificateFailure(
                    f"eps={eps}: ratio {worst:.6f} at cell {idx} is below {bound:.6f} - {tol}"
                )
    return cert


# ---------------------------------------------------------------------------
# persistence along an orbit of cylinders


@dataclass
class PersistenceReport:
    word: tuple
    epsilon: float
    m: int
    beta_theory: float
    beta_measured: float
    beta_prime: float
    step_ratios: list
    passed: bool

    def as_dict(self) -> dict:
        return {
            "word": list(self.word),
            "epsilon": self.epsilon,
            "m": self.m,
            "beta_theory": self.beta_theory,
            "beta_measured": self.beta_measured,
            "beta_prime": self.beta_prime,
            "step_ratios": self.step_ratios,
            "passed": self.passed,
        }


def verify_envelope_persistence(
    phi: BernoulliMap,
    kernel: NoiseKernel,
    word,
    profile,
    m: int | None = None,
    raise_on_failure: bool = True,
) -> PersistenceReport:
    """Evolve ``F_s`` and check ``T*^n F_s >= beta F_{sigma^n s}`` for ``n <= |s|``.

    After step ``|s| + 1`` the field must be strictly positive everywhere;
    its minimum is reported as the measured ``beta'``.
    """
    word = tuple(word)
    prof = _profile(profile, phi.d)
    a, gamma = eigen_constants(kernel, prof)
    eta = (2 * a) ** (1 / gamma)
    eps = kernel.epsilon
    side = float(cylinder_of(phi, word).side)
    if side < eta * eps:
        raise ValueError(f"cylinder side {side:.4g} is below eta*eps = {eta * eps:.4g}")
    beta = beta_constant(a, gamma, phi.p_max, phi.d)
    m = m or (4096 if phi.d == 1 else 512)
    evo = Evolution(phi, kernel, m)
    f = build_Fs(phi, word, prof, m).values
    ratios = []
    passed = True
    beta_meas = math.inf
    beta_prime = math.nan
    for n in range(1, len(word) + 3):
        f = evo.T_star(f)
        if n <= len(word):
            target = build_Fs(phi, shift(word, n), prof, m).values
            peak = float(target.max())
            worst, idx = _ratio_min(f, target, peak)
            ratios.append(worst)
            beta_meas = min(beta_meas, worst)
            if worst < beta:
                passed = False
                if raise_on_failure:
                    raise PersistenceFailure(
                        f"step {n}: ratio {worst:.6f} at cell {idx} is below beta={beta:.6f}"
                    )
        else:
            low = float(f.min())
            ratios.append(low)
            if n == len(word) + 1:
                beta_prime = low
            if not low > 0:
                passed = False
                if raise_on_failure:
                    raise PersistenceFailure(f"step {n}: field reaches {low:.3g}, not positive")
    return PersistenceReport(
        word=word,
        epsilon=eps,
        m=m,
        beta_theory=beta,
        beta_measured=beta_meas,
        beta_prime=beta_prime,
        step_ratios=ratios,
        passed=passed,
    )


def geometric_sum_check(phi: BernoulliMap, word, eps: float, gamma: float, n: int | None = None) -> dict:
    """Compare ``eps^g sum_{k=1..n} lam(sigma^k s)^g`` with its geometric bound.

    The bound is ``(eps lam(sigma s))^g / (1 - p_max^(g/d))``.  With an
    integer ``gamma`` on a rational map the sum of ``lam^g`` is exact.
    """
    word = tuple(word)
    n = len(word) if n is None else n
    integer_gamma = float(gamma).is_integer()
    g = int(gamma) if integer_gamma else float(gamma)
    total = Fraction(0) if (phi.exact and integer_gamma) else 0.0
    for k in range(1, n + 1):
        lam = 1 / phi.side_of(shift(word, k))
        total += lam**g
    lam1 = 1 / phi.side_of(shift(word, 1))
    lhs = float(eps) ** gamma * float(total)
    rhs = (float(eps) * float(lam1)) ** gamma / (1 - float(phi.p_max) ** (gamma / phi.d))
    return {"lam_sum": total, "lhs": lhs, "rhs": rhs, "ok": lhs <= rhs * (1 + 1e-12)}
