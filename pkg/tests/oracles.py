"""Independent reference computations used by the tests.

Nothing here calls the package's operators: each oracle rebuilds its answer
from first principles (explicit loops, dense matrices, exact fractions).
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from bernoulli_mixing.maps import apply_map


def push_by_subsampling(phi, f: np.ndarray, r: int = 12) -> np.ndarray:
    """``U* f`` for a 1-d grid density by mapping ``r`` sub-cell midpoints per cell.

    Each sub-cell carries mass ``f[j] / (m r)``; the image sub-interval lies in a
    single output cell whenever the map is affine on it and aligned, which
    holds for the presets with ``r`` a multiple of every branch slope's
    numerator.
    """
    m = f.shape[0]
    out = np.zeros(m)
    mids = (np.arange(m)[:, None] + (np.arange(r)[None, :] + 0.5) / r) / m
    y = np.asarray(apply_map(phi, mids.reshape(-1)), float)
    idx = np.floor(y * m).astype(int) % m
    np.add.at(out, idx, np.repeat(f, r) / r)
    return out


def direct_dft(values: np.ndarray, k: int) -> complex:
    """``sum_j v_j exp(-2 pi i k j / m) / m`` by explicit summation."""
    m = values.shape[0]
    j = np.arange(m)
    return complex(np.sum(values * np.exp(-2j * math.pi * k * j / m)) / m)


def dense_T_star(evo) -> np.ndarray:
    """Matrix of ``T*`` on a 1-d grid, built column by column."""
    m = evo.m
    return np.stack([evo.T_star(np.eye(m)[j]) for j in range(m)], axis=1)


def mean_zero_norm(A: np.ndarray, n: int) -> float:
    """``||A^n||`` on mean-zero vectors via a full SVD."""
    m = A.shape[0]
    P = np.eye(m) - np.full((m, m), 1.0 / m)
    An = np.linalg.matrix_power(A, n)
    return float(np.linalg.svd(P @ An @ P, compute_uv=False)[0])


def brute_tmix(A: np.ndarray, delta: float, horizon: int = 200) -> int:
    """Worst case over every single-cell start of the first step with TV <= delta."""
    m = A.shape[0]
    F = np.eye(m) * m
    for n in range(horizon + 1):
        tv = 0.5 * np.mean(np.abs(F - 1.0), axis=0)
        if tv.max() <= delta:
            return n
        F = A @ F
    raise AssertionError("no convergence")


def C1_exact(p_min: Fraction, d: int) -> Fraction:
    root = Fraction(1) / p_min ** Fraction(1, d) if d == 1 else None
    if d == 1:
        return 2 * d * (2 + root) ** (d - 1)
    return 2 * d * (2 + 1 / float(p_min) ** (1 / d)) ** (d - 1)


def Lambda_formula(C1: float, p: int, delta: float, p_min: float, p_max: float, d: int) -> float:
    return 2 * d * C1 ** (p - 1) / (delta**p * p_min ** (1 / d) * (1 - p_max ** (1 / (p * d))) ** p)


def partition_oracle(sides: list, scale: Fraction) -> list:
    """Recursive subdivision of the prefix tree by branch sides (exact)."""
    out = []

    def rec(word, side):
        if side <= scale:
            out.append(word)
            return
        for i, s in enumerate(sides, start=1):
            rec(word + (i,), side * s)

    rec((), Fraction(1))
    return sorted(out)
