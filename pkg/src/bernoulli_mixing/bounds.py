"""Explicit constants and reference time bounds for a (map, kernel, eps, delta).

All logarithms are natural internally; ``*_per_bit`` fields convert slopes
to steps per halving of ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .kernels import NoiseKernel, fourier_symbol
from .maps import BernoulliMap, enumerate_partition

__all__ = [
    "BoundReport",
    "C1",
    "Lambda",
    "B_const",
    "eta_const",
    "N_mix",
    "lattice_sup",
    "structural_constants",
    "theoretical_time_bounds",
    "tmix_lower_integers",
    "dis_upper_integers",
    "dis_lower_integer",
    "relate_tmix_tdis",
    "pcmix_bound",
    "check_pcmix",
]


def _check_map(phi: BernoulliMap) -> None:
    if not float(phi.p_max) < 1:
        raise DomainError("p_max = 1: the map does not expand")
    if not float(phi.p_min) > 0:
        raise DomainError("p_min = 0")


def _check_delta(delta: float, upper: float = 1.0) -> None:
    if not 0 < delta < upper:
        raise DomainError(f"delta={delta} outside (0, {upper})")


def C1(phi: BernoulliMap) -> float:
    _check_map(phi)
    d = phi.d
    return 2 * d * (2 + float(phi.p_min) ** (-1 / d)) ** (d - 1)


def Lambda(phi: BernoulliMap, p: int, delta: float) -> float:
    """Cylinder scale (in units of eps) at which leakage stays below ``delta``."""
    _check_map(phi)
    if p not in (1, 2):
        raise DomainError("norm index p must be 1 or 2")
    if not delta > 0:
        raise DomainError("delta must be positive")
    d = phi.d
    pmin, pmax = float(phi.p_min), float(phi.p_max)
    return (
        2 * d * C1(phi) ** (p - 1)
        / (delta**p * pmin ** (1 / d) * (1 - pmax ** (1 / (p * d))) ** p)
    )


def B_const(phi: BernoulliMap, p: int, delta: float) -> float:
    """Gradient-to-norm threshold (times eps) below which data counts as low frequency."""
    return delta / (4 * Lambda(phi, p, delta / 4) * math.sqrt(phi.d))


def eta_const(a: float, gamma: float) -> float:
    return (2 * a) ** (1 / gamma)


def N_mix(phi: BernoulliMap, eps: float, eta: float) -> int:
    """Number of steps after which cylinders reach the scale ``eta eps``."""
    _check_map(phi)
    return max(0, math.ceil(phi.d * math.log(eps * eta) / math.log(float(phi.p_max))))


def lattice_sup(kernel: NoiseKernel, radius: float, box_cap: int = 4096) -> float:
    """``sup |K^(k)|`` over nonzero integer ``k`` with ``|k| >= radius``.

    Gaussian symbols decrease in ``k^T C k`` so only a shell near the
    radius is enumerated.  Compactly supported kernels oscillate, so a box
    is scanned out to where the symbol is far below its envelope; in
    ``d >= 2`` the box is capped at ``box_cap`` per axis.
    """
    d, eps = kernel.d, kernel.epsilon
    R = max(float(radius), 1.0)
    if kernel.kind == "gaussian":
        ev = np.linalg.eigvalsh(kernel.covariance)
        reach = math.sqrt(ev.max() / ev.min()) * (R + math.sqrt(d)) + 1
        half = int(math.ceil(reach))
    else:
        half = int(math.ceil(R + math.sqrt(d) + 40.0 / eps))
        if d > 1:
            half = min(half, box_cap)
    if d == 1:
        k = np.arange(int(math.ceil(R)), half + 1, dtype=float)[:, None]
        return float(np.max(np.abs(fourier_symbol(kernel, k))))
    r = np.arange(-half, half + 1, dtype=float)
    best = 0.0
    # one axis at a time keeps memory at O(half^(d-1))
    rest = np.stack(np.meshgrid(*([r] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    for k0 in r:
        k = np.concatenate([np.full((len(rest), 1), k0), rest], axis=1)
        keep = np.sum(k * k, axis=1) >= R * R
        if keep.any():
            best = max(best, float(np.max(np.abs(fourier_symbol(kernel, k[keep])))))
    return best


# ---------------------------------------------------------------------------
# explicit step counts from the witness and contraction constructions


def tmix_lower_integers(phi: BernoulliMap, eps: float, delta: float) -> dict:
    """Witness word length ``N``, the offset ``N1`` and the lower bound ``N - N1``.

    The witness is the normalised indicator of the cylinder of the word
    repeating a heaviest branch ``N`` times; after ``N - N1`` steps its law is
    still at least ``delta`` from uniform in total variation.  ``N1`` is the
    least length whose heaviest cylinder has volume at most ``(1-delta)/2``.
    """
    _check_delta(delta)
    lam = Lambda(phi, 1, 1 - delta)
    pmax = float(phi.p_max)
    N = math.ceil(phi.d * math.log(eps * lam) / math.log(pmax))
    N1 = math.ceil(math.log((1 - delta) / 2) / math.log(pmax))
    heavy = 1 + int(np.argmax([float(w) for w in phi.weights]))
    return {
        "Lambda": lam,
        "N": N,
        "N1": N1,
        "tmix_lower": max(N - N1, 0),
        "branch": heavy,
        "witness_word": (heavy,) * max(N, 0),
    }


def dis_upper_integers(phi: BernoulliMap, kernel: NoiseKernel, delta: float) -> dict:
    """``N``, ``N1`` and ``N + N1 + 1`` bounding the dissipation time from above.

    ``rho`` is the largest noise multiplier on frequencies above the
    low/high split ``B / (2 pi eps)``.  The contraction argument needs
    ``delta^2 <= 2 rho^2 / (1 - rho^2)``; for larger ``delta`` the bound is
    evaluated at the largest admissible value, which is valid because the
    dissipation time decreases in ``delta``.
    """
    _check_delta(delta)
    eps = kernel.epsilon
    B = B_const(phi, 2, delta)
    cutoff = B / (2 * math.pi * eps)
    rho = lattice_sup(kernel, cutoff)
    if not rho < 1:
        raise DomainError(f"noise does not damp frequencies above {cutoff:.3g}")
    delta_eff = delta
    if rho > 0:
        cap = math.sqrt(2 * rho**2 / (1 - rho**2))
        delta_eff = min(delta, cap)
    lam = Lambda(phi, 2, delta_eff / 4)
    N = max(0, math.ceil(phi.d * math.log(eps * lam) / math.log(float(phi.p_max))))
    q = delta_eff**2 * (1 - rho**2) / (4 * rho**2) if rho > 0 else 1.0
    if q >= 1:
        N1 = N1_printed = 1
    else:
        # squared norms shrink by (1 - q) per step, so the norm needs twice the
        # step count of the printed formula to fall by delta
        N1 = math.ceil(2 * math.log(delta_eff) / math.log(1 - q))
        N1_printed = math.ceil(math.log(delta_eff) / math.log(1 - q))
    return {
        "B": B,
        "cutoff": cutoff,
        "rho": rho,
        "delta_eff": delta_eff,
        "Lambda": lam,
        "N": N,
        "N1": N1,
        "N1_printed": N1_printed,
        "tdis_upper": N + N1 + 1,
    }


def dis_lower_integer(phi: BernoulliMap, eps: float, delta: float) -> dict:
    """Shortest word ``N`` in the partition at scale ``eps Lambda_{2, 1-delta}``.

    The two-level field ``g o phi^N`` (``g = 1`` on the first branch cell,
    ``-p_1/p_2`` on the second) keeps a ``delta`` fraction of its norm for
    ``N`` steps, so ``t_dis(delta) >= N``.
    """
    _check_delta(delta)
    lam = Lambda(phi, 2, 1 - delta)
    scale = eps * lam
    if scale >= 1:
        N = 0
    else:
        N = min(len(c.word) for c in enumerate_partition(phi, scale))
    return {"Lambda": lam, "scale": scale, "N": N, "tdis_lower": N}


def pcmix_bound(phi: BernoulliMap, partition, eps: float, p: int, n_steps: int) -> float:
    """Leakage factor ``eps^(1/p) C1^(1/p') sum_{n=1..N} H(sigma^n S)^(1/p)``."""
    from .maps import perimeter_volume_H, shifted_partition

    total = 0.0
    for n in range(1, n_steps + 1):
        H = float(perimeter_volume_H(shifted_partition(phi, partition, n)))
        total += H ** (1 / p)
    c1 = C1(phi) ** (1 - 1 / p) if p > 1 else 1.0
    return eps ** (1 / p) * c1 * total


# ---------------------------------------------------------------------------
# report


@dataclass
class BoundReport:
    map_name: str
    d: int
    p_min: float
    p_max: float
    p: int
    delta: float
    C1: float
    Lambda: float
    B: float
    eta: Optional[float] = None
    a: Optional[float] = None
    gamma: Optional[float] = None
    epsilon: Optional[float] = None
    N_mix: Optional[int] = None
    N_dis: Optional[int] = None
    N1_dis: Optional[int] = None
    N1_dis_printed: Optional[int] = None
    rho: Optional[float] = None
    tmix_lower: Optional[float] = None
    tmix_lower_N: Optional[int] = None
    tmix_lower_N1: Optional[int] = None
    tmix_slope: Optional[float] = None
    tdis_lower: Optional[float] = None
    tdis_upper: Optional[float] = None
    tdis_lower_slope: Optional[float] = None
    tdis_upper_slope: Optional[float] = None
    uniform_tmix: Optional[float] = None
    uniform_tdis: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def per_bit(self, slope: Optional[float]) -> Optional[float]:
        """Convert a slope in steps per unit of ``ln(1/eps)`` to steps per bit."""
        return None if slope is None else slope * math.log(2)

    def as_dict(self) -> dict:
        out = asdict(self)
        for key in ("tmix_slope", "tdis_lower_slope", "tdis_upper_slope"):
            out[key + "_per_bit"] = self.per_bit(getattr(self, key))
        return out


def structural_constants(
    phi: BernoulliMap,
    p: int,
    delta: float,
    a: Optional[float] = None,
    gamma: Optional[float] = None,
    eps: Optional[float] = None,
) -> BoundReport:
    _check_map(phi)
    _check_delta(delta)
    rep = BoundReport(
        map_name=phi.name,
        d=phi.d,
        p_min=float(phi.p_min),
        p_max=float(phi.p_max),
        p=p,
        delta=delta,
        C1=C1(phi),
        Lambda=Lambda(phi, p, delta),
        B=B_const(phi, p, delta),
        a=a,
        gamma=gamma,
        epsilon=eps,
    )
    if a is not None and gamma is not None:
        rep.eta = eta_const(a, gamma)
        if eps is not None:
            rep.N_mix = N_mix(phi, eps, rep.eta)
    return rep


def _uniform_base(phi: BernoulliMap) -> Optional[int]:
    """``N`` when every branch is a cube of side ``1/N``, else ``None``."""
    sides = {float(b.cell.side) for b in phi.branches}
    if len(sides) != 1:
        return None
    inv = 1 / sides.pop()
    N = int(round(inv))
    return N if N >= 2 and abs(inv - N) < 1e-12 else None


def theoretical_time_bounds(
    phi: BernoulliMap,
    kernel: NoiseKernel,
    delta: float,
    a: Optional[float] = None,
    gamma: Optional[float] = None,
) -> BoundReport:
    """Reference curves at ``eps = kernel.epsilon``.

    Leading-order slopes (``d / |ln p|``) are exact; the explicit integers
    come from the witness and contraction constructions above.  The closed
    forms for uniformly expanding maps are given with their unknown
    constant set to 0.
    """
    eps = kernel.epsilon
    rep = structural_constants(phi, 2, delta, a, gamma, eps)
    d = phi.d
    pmin, pmax = float(phi.p_min), float(phi.p_max)
    mix = tmix_lower_integers(phi, eps, delta)
    rep.tmix_lower = mix["tmix_lower"]
    rep.tmix_lower_N = mix["N"]
    rep.tmix_lower_N1 = mix["N1"]
    rep.tmix_slope = d / abs(math.log(pmax))
    up = dis_upper_integers(phi, kernel, delta)
    rep.N_dis, rep.N1_dis, rep.N1_dis_printed = up["N"], up["N1"], up["N1_printed"]
    rep.rho = up["rho"]
    rep.tdis_upper = up["tdis_upper"]
    rep.tdis_lower = dis_lower_integer(phi, eps, delta)["tdis_lower"]
    rep.tdis_lower_slope = d / abs(math.log(pmin))
    rep.tdis_upper_slope = d / abs(math.log(pmax))
    base = _uniform_base(phi)
    if base is not None:
        logN = math.log(base)
        lead = abs(math.log(eps)) / logN
        rep.uniform_tmix = lead + 0.5 * math.log(d / 2 * abs(math.log(eps)) + abs(math.log(delta))) / logN
        rep.uniform_tdis = lead + 0.5 * math.log(abs(math.log(delta))) / logN
    rep.extras = {"tmix": mix, "dis_upper": up}
    rep.extras["tmix"]["witness_word"] = list(mix["witness_word"])
    return rep


def relate_tmix_tdis(
    eps_list,
    tdis: dict,
    tmix_quarter: dict,
    tmix_prime: dict,
    delta: float,
    delta_prime: float,
    bold_K: dict,
    d: int,
    slack: int = 1,
) -> dict:
    """Check both directions of the mixing/dissipation comparison per eps.

    ``tdis[eps]`` is ``t_dis(delta)``, ``tmix_quarter[eps]`` is
    ``t_mix(delta^2/4)``, ``tmix_prime[eps]`` is ``t_mix(delta')`` and
    ``bold_K[eps]`` is ``eps^(d/2) ||K_eps||_2``.
    """
    rows = []
    violations = 0
    for eps in eps_list:
        td, tq, tp, K = tdis[eps], tmix_quarter[eps], tmix_prime[eps], bold_K[eps]
        first = td <= tq + slack
        arg = delta_prime * eps ** (d / 2) / K
        bound = 2 + math.log(arg) / math.log(delta) * td
        second = tp <= bound
        violations += (not first) + (not second)
        rows.append(
            {
                "epsilon": eps,
                "tdis": td,
                "tmix_delta2_4": tq,
                "tdis_le_tmix": first,
                "tmix_delta_prime": tp,
                "tmix_bound_from_tdis": bound,
                "tmix_le_bound": second,
            }
        )
    return {"delta": delta, "delta_prime": delta_prime, "rows": rows, "violations": violations}


def check_pcmix(
    phi: BernoulliMap,
    kernel: NoiseKernel,
    delta: float,
    p: int,
    n_samples: int,
    seed: int,
    m: int,
    grid_tol: float = 0.0,
) -> dict:
    """Compare noisy and noiseless evolution of random fields constant on a partition.

    The partition is the one at scale ``eps Lambda_{p, delta}``; each sample
    draws independent standard normal values per cylinder.  After
    ``N = max |s|`` steps the noiseless field is constant, and the gap
    ``||T*^N f0 - U*^N f0||_p`` must stay below the leakage bound times
    ``||f0||_p`` (plus ``grid_tol`` times ``||f0||_p``).
    """
    from .density import Evolution, indicator_density

    eps = kernel.epsilon
    lam = Lambda(phi, p, delta)
    if not eps * lam < 1:
        raise DomainError(f"eps * Lambda = {eps * lam:.3g} leaves no partition to test")
    S = enumerate_partition(phi, eps * lam)
    N = max(len(c.word) for c in S)
    factor = pcmix_bound(phi, S, eps, p, N)
    evo = Evolution(phi, kernel, m)
    rng = np.random.default_rng(seed)
    masks = [indicator_density(phi, c.word, m).values * float(c.volume) for c in S]
    rows = []
    violations = 0
    for _ in range(n_samples):
        vals = rng.standard_normal(len(S))
        f0 = sum(v * mk for v, mk in zip(vals, masks))
        noisy, clean = f0, f0
        for _ in range(N):
            noisy = evo.T_star(noisy)
            clean = evo.push(clean)
        norm0 = float(np.mean(np.abs(f0) ** p) ** (1 / p))
        gap = float(np.mean(np.abs(noisy - clean) ** p) ** (1 / p))
        bound = (factor + grid_tol) * norm0
        ok = gap <= bound
        violations += not ok
        rows.append({"gap": gap, "norm": norm0, "bound": bound, "ratio": gap / (factor * norm0), "ok": ok})
    return {
        "epsilon": eps,
        "delta": delta,
        "p": p,
        "Lambda": lam,
        "n_cylinders": len(S),
        "N": N,
        "leakage_factor": factor,
        "grid_tol": grid_tol,
        "violations": violations,
        "max_ratio": max(r["ratio"] for r in rows),
        "rows": rows,
    }
