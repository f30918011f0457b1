"""Measured mixing and dissipation times, particle simulation and slope fits."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .bounds import dis_lower_integer, theoretical_time_bounds, tmix_lower_integers
from .bump import eigen_constants
from .density import Evolution, indicator_density, tv_batch
from .errors import (
    AlignmentError,
    DomainError,
    InsufficientData,
    NonConvergence,
    PowerIterationStall,
    UnsupportedError,
)
from .kernels import NoiseKernel, kernel_sample
from .maps import BernoulliMap, apply_map

__all__ = [
    "TimeMeasurement",
    "ScalingFit",
    "grid_size_for",
    "start_family",
    "tv_envelope",
    "measure_tmix",
    "operator_norm",
    "measure_tdis",
    "dissipation_witness",
    "simulate_ensemble",
    "histogram_tv_trace",
    "density_tv_trace",
    "fit_scaling",
    "sweep",
    "SWEEP_COLUMNS",
]

SWEEP_COLUMNS = (
    "epsilon",
    "delta",
    "t_mix",
    "t_dis",
    "method",
    "slope_fit_running",
    "theory_lower",
    "theory_upper",
    "wall_ms",
)


@dataclass
class TimeMeasurement:
    epsilon: float
    delta: float
    t: int
    method: str
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "t": self.t,
            "method": self.method,
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residual: float
    n_points: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# grids and initial families


def _denominators(phi: BernoulliMap) -> int:
    L = 1
    for b in phi.branches:
        for x in (*b.cell.origin, b.cell.side, *b.anchor):
            L = math.lcm(L, Fraction(x).denominator)
    return L


def _prime_factors(n: int) -> list:
    out, p = [], 2
    while n > 1:
        if n % p == 0:
            out.append(p)
            while n % p == 0:
                n //= p
        p += 1
    return out


def grid_size_for(phi: BernoulliMap, target: int) -> int:
    """Smallest aligned ``m >= target`` built from the primes of the map's denominators.

    Using only those primes keeps deep cylinders (powers of the branch
    sides) on the grid.
    """
    if not phi.exact:
        return target
    L = _denominators(phi)
    primes = _prime_factors(L) or [2]
    best = None
    frontier = [L]
    seen = set()
    while frontier:
        n = frontier.pop()
        if n in seen:
            continue
        seen.add(n)
        if n >= target:
            if best is None or n < best:
                best = n
            continue
        for p in primes:
            frontier.append(n * p)
    return best


def start_family(phi: BernoulliMap, m: int, n_starts: int = 32) -> np.ndarray:
    """Single-cell point masses on a lattice of about ``n_starts`` start points."""
    d = phi.d
    per_axis = max(2, int(math.ceil(n_starts ** (1.0 / d))))
    centres = (np.arange(per_axis) + 0.5) / per_axis
    idx = np.floor(centres * m).astype(int)
    fam = np.zeros((per_axis**d,) + (m,) * d)
    for k, combo in enumerate(np.ndindex(*([per_axis] * d))):
        fam[(k,) + tuple(idx[c] for c in combo)] = float(m) ** d
    return fam


def _horizon(phi: BernoulliMap, kernel: NoiseKernel, horizon: Optional[int]) -> int:
    if horizon is not None:
        return int(horizon)
    try:
        a, gamma = eigen_constants(kernel, "sine")
    except UnsupportedError:
        a, gamma = eigen_constants(kernel, "tent")
    if not float(phi.p_max) < 1:
        raise DomainError("a non-expanding map needs an explicit horizon")
    eta = (2 * a) ** (1 / gamma)
    n_mix = max(1, math.ceil(phi.d * math.log(kernel.epsilon * eta) / math.log(float(phi.p_max))))
    return 8 * n_mix


def tv_envelope(evo: Evolution, family: np.ndarray, horizon: int, stop_below: float = 0.0) -> np.ndarray:
    """TV to uniform of every family member at steps ``0..n``.

    Stops once the worst member is at or below ``stop_below``.  Returns an
    array of shape ``(steps + 1, family size)``.
    """
    f = family
    rows = [tv_batch(f, evo.d)]
    for _ in range(horizon):
        f = evo.T_star(f)
        rows.append(tv_batch(f, evo.d))
        if rows[-1].max() <= stop_below:
            break
    return np.array(rows)


def measure_tmix(
    phi: BernoulliMap,
    kernel: NoiseKernel,
    delta,
    m: Optional[int] = None,
    n_starts: int = 32,
    horizon: Optional[int] = None,
    witness: bool = True,
):
    """Family-worst-case mixing time for one or several ``delta``.

    The family holds single-cell point masses on a start lattice and, when it
    fits the grid, the normalised indicator of the lower-bound witness
    cylinder.  Returns a :class:`TimeMeasurement` (or a list for a list of
    deltas).
    """
    deltas = [float(delta)] if np.isscalar(delta) else [float(x) for x in delta]
    m = m or grid_size_for(phi, 2**14 if phi.d == 1 else 2**8)
    eps = kernel.epsilon
    H = _horizon(phi, kernel, horizon)
    evo = Evolution(phi, kernel, m)
    fam = start_family(phi, m, n_starts)
    labels = ["point"] * len(fam)
    wit = {}
    if witness and float(phi.p_max) < 1:
        for dlt in deltas:
            info = tmix_lower_integers(phi, eps, dlt)
            steps = info["N"] - info["N1"]
            if info["N"] < 1:
                continue
            try:
                I_s = indicator_density(phi, info["witness_word"], m).values
            except AlignmentError:
                wit[dlt] = {"skipped": "witness cylinder is not on the grid", **_jsonable(info)}
                continue
            fam = np.concatenate([fam, I_s[None]])
            labels.append(f"witness{info['witness_word']}")
            wit[dlt] = {"index": len(fam) - 1, "steps": steps, **_jsonable(info)}
    t0 = time.perf_counter()
    tv = tv_envelope(evo, fam, H, stop_below=min(deltas))
    env = tv.max(axis=1)
    wall = 1000 * (time.perf_counter() - t0)
    out = []
    for dlt in deltas:
        hits = np.nonzero(env[1:] <= dlt)[0]
        if len(hits) == 0:
            raise NonConvergence(f"eps={eps}: TV {env[-1]:.3g} > delta={dlt} after {len(env) - 1} steps")
        t = int(hits[0]) + 1
        diag = {
            "m": m,
            "family_size": len(fam),
            "envelope": env.tolist(),
            "argmax_member": labels[int(np.argmax(tv[t - 1]))],
            "wall_ms": wall,
        }
        w = wit.get(dlt)
        if w and "index" in w:
            steps = w["steps"]
            if 0 <= steps < len(tv):
                w["tv_at_step"] = float(tv[steps, w["index"]])
                w["holds"] = bool(w["tv_at_step"] >= dlt)
            elif steps < 0:
                w["holds"] = True
                w["tv_at_step"] = None
            w = {k: v for k, v in w.items() if k != "index"}
        if w:
            diag["witness"] = w
        out.append(TimeMeasurement(eps, dlt, t, "density_worst_case", diag))
    return out[0] if np.isscalar(delta) else out


def _jsonable(info: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in info.items()}


# ---------------------------------------------------------------------------
# operator norms


def _project(v: np.ndarray, d: int) -> np.ndarray:
    axes = tuple(range(-d, 0))
    return v - v.mean(axis=axes, keepdims=True)


def _norms(v: np.ndarray, d: int) -> np.ndarray:
    axes = tuple(range(-d, 0))
    return np.sqrt(np.mean(v * v, axis=axes))


def operator_norm(
    evo: Evolution,
    n: int,
    start: Optional[np.ndarray] = None,
    seeds: Sequence[int] = (0, 1, 2),
    rtol: float = 1e-6,
    max_rounds: int = 100,
    stop_above: Optional[float] = None,
):
    """Power iteration for ``||T*^n||`` on mean-zero fields.

    Each round maps ``v -> T^n T*^n v``; ``||T*^n v||`` for unit ``v`` is a
    lower bound that increases monotonically to the norm.  Iteration ends
    when the estimate exceeds ``stop_above`` (the answer is then certain),
    when its relative change drops below ``rtol``, or after ``max_rounds``.
    Returns ``(estimate, vectors, rounds, converged)``.
    """
    d, m = evo.d, evo.m
    if start is None:
        rng = [np.random.default_rng(s) for s in seeds]
        start = np.stack([r.standard_normal((m,) * d) for r in rng])
    v = _project(np.array(start, dtype=float), d)
    v /= _norms(v, d).reshape((-1,) + (1,) * d)
    prev = None
    est = 0.0
    for rounds in range(1, max_rounds + 1):
        w = _project(evo.T_star(v, n), d)
        est = float(_norms(w, d).max())
        if stop_above is not None and est > stop_above:
            return est, v, rounds, True
        if prev is not None and abs(est - prev) <= rtol * est:
            return est, v, rounds, True
        prev = est
        v = _project(evo.T(w, n), d)
        nv = _norms(v, d)
        if np.any(nv == 0):
            return est, v, rounds, True
        v /= nv.reshape((-1,) + (1,) * d)
    return est, v, max_rounds, False


def measure_tdis(
    phi: BernoulliMap,
    kernel: NoiseKernel,
    delta: float,
    m: Optional[int] = None,
    max_n: int = 200,
    seeds: Sequence[int] = (0, 1, 2),
    rtol: float = 1e-6,
    max_rounds: int = 100,
    witness: bool = True,
) -> TimeMeasurement:
    """First ``n`` with ``||T*^n|| <= delta`` on mean-zero fields.

    Vectors from step ``n - 1`` seed step ``n``.  A stall (no convergence
    while the estimate is still below ``delta``) raises
    :class:`PowerIterationStall` carrying the bracket ``(estimate, 1)``.
    """
    m = m or grid_size_for(phi, 2**14 if phi.d == 1 else 2**8)
    evo = Evolution(phi, kernel, m)
    eps = kernel.epsilon
    norms = []
    rounds_used = []
    v = None
    t0 = time.perf_counter()
    for n in range(1, max_n + 1):
        est, v, rounds, ok = operator_norm(
            evo, n, start=v, seeds=seeds, rtol=rtol, max_rounds=max_rounds, stop_above=delta
        )
        norms.append(est)
        rounds_used.append(rounds)
        if est > delta:
            continue
        if not ok:
            # T* is an L2 contraction on the grid, so 1 is a safe upper end
            raise PowerIterationStall(
                f"eps={eps}, n={n}: estimate {est:.6g} did not settle in {max_rounds} rounds",
                bracket=(est, 1.0),
            )
        diag = {
            "m": m,
            # entries above delta are certified lower bounds from an early stop;
            # the last entry is converged
            "norm_estimates": norms,
            "rounds": rounds_used,
            "wall_ms": 1000 * (time.perf_counter() - t0),
        }
        if witness and float(phi.p_max) < 1:
            diag["witness"] = dissipation_witness(phi, kernel, delta, m, evo=evo)
        return TimeMeasurement(eps, delta, n, "power_iteration", diag)
    raise PowerIterationStall(f"eps={eps}: norm still above {delta} after {max_n} steps", bracket=(norms[-1], 1.0))


def dissipation_witness(
    phi: BernoulliMap,
    kernel: NoiseKernel,
    delta: float,
    m: int,
    evo: Optional[Evolution] = None,
    horizon: int = 200,
) -> dict:
    """Evolve the two-level lower-bound field ``g o phi^N``.

    ``g`` is 1 on the first branch cell and ``-p_1/p_2`` on the second, so
    it has mean zero.  Reports ``||T*^N f0|| / ||f0||`` (expected to stay at
    least ``delta``) and the first step where the ratio drops to ``delta``.
    """
    evo = evo or Evolution(phi, kernel, m)
    info = dis_lower_integer(phi, kernel.epsilon, delta)
    N = info["N"]
    if phi.M < 2:
        return {"N": N, "skipped": "needs two branches"}
    d = phi.d
    g = np.zeros((m,) * d)
    w1, w2 = phi.weights[0], phi.weights[1]
    for i, val in ((0, 1.0), (1, -float(w1 / w2))):
        cell = phi.branches[i].cell
        lo = [o * m for o in cell.origin]
        width = cell.side * m
        if phi.exact:
            on_grid = all(Fraction(x).denominator == 1 for x in (*lo, width))
        else:
            on_grid = all(abs(x - round(x)) < 1e-9 for x in (*lo, width))
        if not on_grid:
            return {"N": N, "skipped": "branch cells are not on the grid"}
        lo, width = [round(x) for x in lo], round(width)
        g[tuple(slice(int(a), int(a + width)) for a in lo)] = val
    f0 = g
    for _ in range(N):
        f0 = evo.plan.pull(f0)
    base = float(np.sqrt(np.mean(f0**2)))
    f = f0
    ratio_at_N = 1.0 if N == 0 else None
    decay = None
    for n in range(1, horizon + 1):
        f = evo.T_star(f)
        r = float(np.sqrt(np.mean(f**2))) / base
        if n == N:
            ratio_at_N = r
        if decay is None and r <= delta:
            decay = n
        if decay is not None and n >= N:
            break
    return {
        "N": N,
        "ratio_at_N": ratio_at_N,
        "holds": bool(ratio_at_N >= delta),
        "decay_time": decay,
    }


# ---------------------------------------------------------------------------
# particles


def simulate_ensemble(
    phi: BernoulliMap,
    kernel: NoiseKernel,
    n_steps: int,
    n_particles: int,
    seed: int,
    m: int,
    start=None,
    start_m: Optional[int] = None,
) -> np.ndarray:
    """Histogram densities of ``X_{n+1} = phi(X_n) + eps zeta`` for ``n <= n_steps``.

    Particles start uniform on the torus, or uniform in the cell of a
    ``start_m`` grid (default ``m``) that contains ``start``.  Returns an
    array of shape ``(n_steps + 1,) + (m,)*d``.
    """
    d = phi.d
    rng = np.random.default_rng(seed)
    if start is None:
        x = rng.random((n_particles, d))
    else:
        sm = start_m or m
        cell = np.floor(np.atleast_1d(np.asarray(start, float)) * sm) % sm
        x = (cell + rng.random((n_particles, d))) / sm
    out = np.empty((n_steps + 1,) + (m,) * d)
    out[0] = _histogram(x, m)
    for n in range(1, n_steps + 1):
        y = apply_map(phi, x)
        y = np.asarray(y, float).reshape(n_particles, d)
        x = np.mod(y + kernel_sample(kernel, rng, n_particles), 1.0)
        x[x >= 1.0] = 0.0
        out[n] = _histogram(x, m)
    return out


def _histogram(x: np.ndarray, m: int) -> np.ndarray:
    d = x.shape[1]
    idx = np.minimum((x * m).astype(np.int64), m - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (m,) * d)
    counts = np.bincount(flat, minlength=m**d).reshape((m,) * d)
    return counts * (float(m) ** d / len(x))


def histogram_tv_trace(hist: np.ndarray, d: int) -> np.ndarray:
    return tv_batch(hist, d)


def density_tv_trace(evo: Evolution, f0: np.ndarray, n_steps: int, coarse_m: Optional[int] = None) -> np.ndarray:
    """TV trace of density evolution, optionally measured after coarsening."""
    from .density import coarsen
    from .grid import GridDensity

    f = f0
    rows = []
    for n in range(n_steps + 1):
        if n:
            f = evo.T_star(f)
        g = f if coarse_m is None else coarsen(GridDensity(f), evo.m // coarse_m).values
        rows.append(float(tv_batch(g, evo.d)))
    return np.array(rows)


# ---------------------------------------------------------------------------
# fits and sweeps


def fit_scaling(points, min_points: int = 5, min_octaves: float = 4.0) -> ScalingFit:
    """Least-squares line ``t = slope log2(1/eps) + intercept``.

    ``points`` are :class:`TimeMeasurement` objects or ``(eps, t)`` pairs.
    """
    pairs = [(p.epsilon, p.t) if isinstance(p, TimeMeasurement) else (float(p[0]), float(p[1])) for p in points]
    if len(pairs) < min_points:
        raise InsufficientData(f"need at least {min_points} points, got {len(pairs)}")
    x = np.array([math.log2(1 / e) for e, _ in pairs])
    y = np.array([t for _, t in pairs], dtype=float)
    if x.max() - x.min() < min_octaves:
        raise InsufficientData(f"points span {x.max() - x.min():.2f} octaves, need {min_octaves}")
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return ScalingFit(float(coef[0]), float(coef[1]), resid, len(pairs))


def _sweep_item(phi, kernel_template, eps, delta, m, kind, a, gamma):
    kernel = kernel_template.with_epsilon(eps)
    t0 = time.perf_counter()
    if kind == "mix":
        meas = measure_tmix(phi, kernel, delta, m=m)
    else:
        meas = measure_tdis(phi, kernel, delta, m=m)
    wall = 1000 * (time.perf_counter() - t0)
    lower = upper = None
    if float(phi.p_max) < 1:
        rep = theoretical_time_bounds(phi, kernel, delta, a, gamma)
        if kind == "mix":
            lower = rep.tmix_lower
        else:
            lower, upper = rep.tdis_lower, rep.tdis_upper
    return meas, lower, upper, wall


def sweep(
    phi: BernoulliMap,
    kernel_template: NoiseKernel,
    eps_list,
    delta: float,
    kind: str,
    m: Optional[int] = None,
    workers: int = 1,
) -> list:
    """Measure ``t_mix`` or ``t_dis`` over ``eps_list`` and build CSV rows.

    Items run on a thread pool; rows are ordered by decreasing ``eps`` and
    the running slope is fitted on the rows so far (blank below 5 points).
    """
    if kind not in ("mix", "dis"):
        raise ValueError("kind must be 'mix' or 'dis'")
    try:
        a, gamma = eigen_constants(kernel_template, "sine")
    except UnsupportedError:
        a = gamma = None
    eps_sorted = sorted((float(e) for e in eps_list), reverse=True)
    args = [(phi, kernel_template, e, delta, m, kind, a, gamma) for e in eps_sorted]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a_: _sweep_item(*a_), args))
    else:
        results = [_sweep_item(*a_) for a_ in args]
    rows, meas = [], []
    for eps, (mm, lower, upper, wall) in zip(eps_sorted, results):
        meas.append(mm)
        try:
            slope = fit_scaling(meas).slope
        except InsufficientData:
            slope = None
        rows.append(
            {
                "epsilon": eps,
                "delta": delta,
                "t_mix": mm.t if kind == "mix" else None,
                "t_dis": mm.t if kind == "dis" else None,
                "method": mm.method,
                "slope_fit_running": slope,
                "theory_lower": lower,
                "theory_upper": upper,
                "wall_ms": wall,
                "_measurement": mm,
            }
        )
    return rows
