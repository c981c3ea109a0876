"""Simple random walk kernels on Z^d and the local-time quantities built on them.

Two routes are provided.  ``build_kernel_table`` / ``iter_kernel_slices`` run
the exact one-step convolution on dense cubes.  For d = 2 the walk rotated by
45 degrees is a pair of independent 1d nearest-neighbour walks, so

    p(t, x) = q(t, x1 - x2) * q(t, x1 + x2),   q(t, a) = C(t, (t+a)/2) / 2^t,

which gives O(t) formulas for D(N), D_hat(u) and the local-CLT scan at
horizons far beyond what a dense table can hold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.stats import binom

__all__ = [
    "KernelTable",
    "ResourceError",
    "build_kernel_table",
    "iter_kernel_slices",
    "neighbor_sum",
    "kernel_1d",
    "return_probability_2d",
    "mean_local_time",
    "mean_local_time_2d",
    "rho",
    "windowed_sq_mass_2d",
    "restricted_local_time",
    "restricted_local_time_2d",
    "local_clt_constant",
    "local_clt_scan_2d",
    "l1_norm_grid",
]

DEFAULT_BUDGET = 50_000_000


class ResourceError(MemoryError):
    """Requested table exceeds the memory budget."""

    def __init__(self, required: int, budget: int):
        super().__init__(f"table needs {required} entries, budget is {budget}")
        self.required = required
        self.budget = budget


def neighbor_sum(w: np.ndarray, d: int) -> np.ndarray:
    """Sum over the 2d nearest neighbours, on the last ``d`` axes.

    ``w`` has cube side 2b+1 (b >= 1); the result has side 2b-1 and entry
    ``y`` equals ``sum_{|e|=1} w[y + e]`` for the inner cube.
    """
    lead = w.ndim - d
    inner = (slice(None),) * lead + (slice(1, -1),) * d
    out = None
    for k in range(d):
        for lo in (slice(0, -2), slice(2, None)):
            idx = list(inner)
            idx[lead + k] = lo
            term = w[tuple(idx)]
            out = term.copy() if out is None else out + term
    return out


def l1_norm_grid(r: int, d: int) -> np.ndarray:
    axes = np.meshgrid(*([np.arange(-r, r + 1)] * d), indexing="ij")
    return sum(np.abs(a) for a in axes)


def iter_kernel_slices(d: int, T: int) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(t, p(t, .))`` for t = 0..T, slice t on the cube [-t, t]^d."""
    cur = np.ones((1,) * d)
    yield 0, cur
    for t in range(1, T + 1):
        padded = np.pad(cur, 2)
        cur = neighbor_sum(padded, d) / (2 * d)
        yield t, cur


@dataclass(frozen=True)
class KernelTable:
    """p(t, x) for t <= T; ``slices[t]`` is a cube of side 2t+1 centred at 0."""

    d: int
    T: int
    slices: tuple

    def p(self, t: int, x) -> float:
        x = tuple(int(c) for c in x)
        if any(abs(c) > t for c in x):
            return 0.0
        return float(self.slices[t][tuple(c + t for c in x)])


def build_kernel_table(d: int = 2, T: int = 0, budget: int = DEFAULT_BUDGET) -> KernelTable:
    if T < 0 or d < 1:
        raise ValueError("need d >= 1 and T >= 0")
    required = sum((2 * t + 1) ** d for t in range(T + 1))
    if required > budget:
        raise ResourceError(required, budget)
    return KernelTable(d, T, tuple(s for _, s in iter_kernel_slices(d, T)))


def kernel_1d(t: int) -> np.ndarray:
    """q(t, a) for a = -t..t (zeros at the wrong parity)."""
    a = np.arange(-t, t + 1)
    out = np.zeros(2 * t + 1)
    ok = (a + t) % 2 == 0
    out[ok] = binom.pmf((a[ok] + t) // 2, t, 0.5)
    return out


def return_probability_2d(tmax: int) -> np.ndarray:
    """p(2t, 0) for t = 0..tmax, via p(2t,0) = (C(2t,t)/4^t)^2."""
    t = np.arange(1, tmax + 1)
    c = np.concatenate([[1.0], np.cumprod((2 * t - 1) / (2 * t))])
    return c * c


def mean_local_time_2d(N: int) -> np.ndarray:
    """D(n) for n = 0..N in d = 2 (closed form)."""
    r = return_probability_2d(N)
    r[0] = 0.0
    return np.cumsum(r)


def mean_local_time(table: KernelTable, N: int, form: str = "return") -> float:
    """D(N) = sum_{t<=N} p(2t, 0)  (``form="return"``)
    or  sum_{t<=N} sum_x p(t, x)^2  (``form="squares"``)."""
    if form == "return":
        if 2 * N > table.T:
            raise ValueError(f"D({N}) by return probabilities needs horizon {2 * N}, table has {table.T}")
        return float(sum(table.p(2 * t, (0,) * table.d) for t in range(1, N + 1)))
    if form == "squares":
        if N > table.T:
            raise ValueError(f"D({N}) by squared kernels needs horizon {N}, table has {table.T}")
        return float(sum(np.sum(table.slices[t] ** 2) for t in range(1, N + 1)))
    raise ValueError(f"unknown form {form!r}")


def rho(t) -> float:
    """min(t/2, log(t) sqrt(t)), natural log."""
    if t < 1:
        raise ValueError(f"rho needs t >= 1, got {t}")
    return min(t / 2.0, math.log(t) * math.sqrt(t))


def windowed_sq_mass_2d(t: int) -> float:
    """sum_{|z|_1 <= rho(t)} p(t, z)^2 in d = 2.

    |z|_1 = max(|a|, |b|) in rotated coordinates, so the sum factorises.
    """
    q = kernel_1d(t)
    a = np.arange(-t, t + 1)
    s = float(np.sum(q[np.abs(a) <= rho(t)] ** 2))
    return s * s


def restricted_local_time(table: KernelTable, u: int) -> float:
    """D_hat(u) = sum_{t<=u} sum_{|z|_1 <= rho(t)} p(t, z) p(t, -z), from a table."""
    if u > table.T:
        raise ValueError(f"D_hat({u}) needs horizon {u}, table has {table.T}")
    total = 0.0
    for t in range(1, u + 1):
        sl = table.slices[t]
        mask = l1_norm_grid(t, table.d) <= rho(t)
        flipped = sl[(slice(None, None, -1),) * table.d]
        total += float(np.sum((sl * flipped)[mask]))
    return total


def restricted_local_time_2d(u: int) -> np.ndarray:
    """D_hat(n) for n = 0..u in d = 2 (factorised route)."""
    out = np.zeros(u + 1)
    for t in range(1, u + 1):
        out[t] = out[t - 1] + windowed_sq_mass_2d(t)
    return out


def local_clt_constant(table: KernelTable, T: int, t_min: int = 0) -> float:
    """max over t_min <= t <= T and x of p(t, x) (1 + t)."""
    if T > table.T:
        raise ValueError(f"scan to {T} exceeds table horizon {table.T}")
    return max(float(table.slices[t].max()) * (1 + t) for t in range(t_min, T + 1))


def local_clt_scan_2d(T: int, t_min: int = 0, bound: float = 1.0, tol: float = 1e-12):
    """Factorised d = 2 scan of p(t, x)(1 + t).

    Returns ``(max value, argmax t, violations)`` where violations counts
    sites with p(t, x)(1 + t) > bound + tol.
    """
    best, best_t, violations = -math.inf, -1, 0
    for t in range(t_min, T + 1):
        q = kernel_1d(t)
        q = q[q > 0]
        top = float(q.max()) ** 2 * (1 + t)
        if top > best:
            best, best_t = top, t
        if top > bound + tol:
            # pairs (a, b) with q_a q_b (1+t) > bound + tol
            qs = np.sort(q)
            thresh = (bound + tol) / ((1 + t) * q)
            violations += int(np.sum(len(qs) - np.searchsorted(qs, thresh, side="right")))
    return best, best_t, violations
