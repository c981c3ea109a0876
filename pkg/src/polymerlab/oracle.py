"""Brute-force oracles and exhaustive scans.

Slow on purpose: they enumerate paths, path pairs or integer grids directly
and share no code with the dynamic programs they check.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, xlogy

from .disorder import DisorderLaw, cumulants, gamma
from .kernel import build_kernel_table, kernel_1d

__all__ = [
    "ScanReport",
    "walk_positions",
    "enumerate_paths_partition",
    "enumerate_pair_second_moment",
    "binomial_ratio_scan",
    "reduction_to_1d_check",
    "desperate_tail_check",
    "enumerate_x_statistic",
    "enumerate_x_second_moment",
    "enumerate_path_tuple_sum",
]

MAX_PATH_N = 8
MAX_PAIR_N = 6


@dataclass
class ScanReport:
    grid: dict
    extremum: float
    location: Optional[tuple]
    violations: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), default=_jsonable, sort_keys=True)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _steps(d: int) -> np.ndarray:
    e = np.eye(d, dtype=np.int64)
    return np.concatenate([e, -e])


def walk_positions(N: int, d: int = 2) -> np.ndarray:
    """All (2d)^N nearest-neighbour paths: array (paths, N, d) of S_1..S_N."""
    steps = _steps(d)
    idx = np.array(list(itertools.product(range(2 * d), repeat=N)), dtype=np.int64).reshape(-1, N)
    return np.cumsum(steps[idx], axis=1)


def enumerate_paths_partition(env, beta: float, N: int) -> np.ndarray:
    """Zhat_N as the plain sum over all paths of (1/2d)^N exp(sum beta w - N lambda)."""
    if N > MAX_PATH_N:
        raise ValueError(f"path enumeration refused for N={N} > {MAX_PATH_N}")
    d = _dim(env)
    lam = cumulants(env.law, beta).lambda_
    if N == 0:
        return np.ones(env.batch_shape)
    pos = walk_positions(N, d)
    times = np.arange(1, N + 1)[None, :]
    w = env.at(np.broadcast_to(times, pos.shape[:2]), [pos[..., k] for k in range(d)])
    energy = beta * w.sum(axis=-1) - N * lam
    return np.exp(energy).sum(axis=-1) / (2 * d) ** N


def _dim(env):
    while not hasattr(env, "d"):
        env = env.base
    return env.d


def enumerate_pair_second_moment(beta: float, N: int, law: DisorderLaw, d: int = 2) -> float:
    """E[Zhat_N^2] as the average over all path pairs of exp(gamma(beta) L_N)."""
    if N > MAX_PAIR_N:
        raise ValueError(f"pair enumeration refused for N={N} > {MAX_PAIR_N}")
    g = gamma(law, beta)
    if N == 0:
        return 1.0
    pos = walk_positions(N, d)
    P = len(pos)
    # encode each site as one integer per time step
    code = pos[..., 0] * 1000 + (pos[..., 1] if d > 1 else 0)
    if d > 2:
        for k in range(2, d):
            code = code * 1000 + pos[..., k]
    total = 0.0
    chunk = max(1, 2_000_000 // (P * N))
    for i in range(0, P, chunk):
        coll = (code[i:i + chunk, None, :] == code[None, :, :]).sum(axis=-1)
        total += float(np.exp(g * coll).sum())
    return total / P / P


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def binomial_ratio_scan(T: int, lo: float = 0.25, hi: float = 0.75) -> ScanReport:
    """Scan C(n,j) C(t-n,k-j) / C(t,k) * sqrt(min(n, t-n)) over the region

        lo t <= k <= hi t,  lo n <= j <= hi n,  lo (t-n) <= k-j <= hi (t-n),

    for 2 <= t <= T, 1 <= n <= t-1.  ``extra['max_second_line']`` holds the
    largest value of the Stirling second-line factor

        (n/j)^j (n/(n-j))^(n-j) ((t-n)/(k-j))^(k-j) ((t-n)/(t-n-k+j))^(t-n-k+j) (k/t)^k ((t-k)/t)^(t-k)

    and ``violations`` counts points where it exceeds 1 + 1e-12.
    """
    if T > 200:
        raise ValueError("binomial_ratio_scan supports T <= 200")
    best, where = -math.inf, None
    best2, where2 = -math.inf, None
    violations = 0
    points = 0
    for t in range(2, T + 1):
        n, k, j = np.meshgrid(np.arange(1, t), np.arange(0, t + 1), np.arange(0, t + 1), indexing="ij")
        m = (
            (k >= lo * t) & (k <= hi * t)
            & (j >= lo * n) & (j <= hi * n)
            & (k - j >= lo * (t - n)) & (k - j <= hi * (t - n))
        )
        if not m.any():
            continue
        n, k, j = n[m].astype(float), k[m].astype(float), j[m].astype(float)
        points += len(n)
        log_ratio = _log_binom(n, j) + _log_binom(t - n, k - j) - _log_binom(float(t), k)
        val = np.exp(log_ratio) * np.sqrt(np.minimum(n, t - n))
        i = int(np.argmax(val))
        if val[i] > best:
            best, where = float(val[i]), (t, int(n[i]), int(k[i]), int(j[i]))
        nt, kj = t - n, k - j
        log2 = (
            -xlogy(j, j / n) - xlogy(n - j, (n - j) / n)
            - xlogy(kj, kj / nt) - xlogy(nt - kj, (nt - kj) / nt)
            + xlogy(k, k / t) + xlogy(t - k, (t - k) / t)
        )
        f2 = np.exp(log2)
        i2 = int(np.argmax(f2))
        if f2[i2] > best2:
            best2, where2 = float(f2[i2]), (t, int(n[i2]), int(k[i2]), int(j[i2]))
        violations += int(np.sum(f2 > 1 + 1e-12))
    return ScanReport(
        grid={"T": T, "lo": lo, "hi": hi, "points": points},
        extremum=best,
        location=where,
        violations=violations,
        extra={"max_second_line": best2, "max_second_line_at": where2},
    )


def reduction_to_1d_check(T: int) -> ScanReport:
    """Compare the exact 2d table with q(t, x1-x2) q(t, x1+x2) for all t <= T."""
    if T > 50:
        raise ValueError("reduction_to_1d_check supports T <= 50")
    table = build_kernel_table(2, T)
    worst, where = 0.0, None
    for t in range(T + 1):
        q = kernel_1d(t)
        x1, x2 = np.meshgrid(np.arange(-t, t + 1), np.arange(-t, t + 1), indexing="ij")
        a, b = x1 - x2, x1 + x2
        inside = (np.abs(a) <= t) & (np.abs(b) <= t)
        prod = np.zeros_like(table.slices[t])
        prod[inside] = q[a[inside] + t] * q[b[inside] + t]
        err = np.abs(prod - table.slices[t])
        i = np.unravel_index(int(np.argmax(err)), err.shape)
        if err[i] > worst:
            worst, where = float(err[i]), (t, int(i[0]) - t, int(i[1]) - t)
    return ScanReport(
        grid={"T": T},
        extremum=worst,
        location=where,
        violations=int(worst > 1e-12),
    )


def desperate_tail_check(
    law: DisorderLaw,
    beta: float,
    N: int,
    v_grid: Sequence[float],
    samples: int = 2000,
    seed: int = 0,
) -> ScanReport:
    """Frequency of {log Zhat_N <= -(beta v + lambda) N} against 8 N^3 exp(-c0 v).

    Gaussian laws are skipped (c0 recorded as infinite).
    """
    from .disorder import EnvironmentField, sample_seed
    from .partition import log_partition_fast

    if N > 64:
        raise ValueError("desperate_tail_check supports N <= 64")
    c0 = law.tail_rate
    if not math.isfinite(c0):
        return ScanReport(grid={"law": str(law)}, extremum=math.nan, location=None,
                          extra={"skipped": "gaussian law: tail rate recorded as infinite"})
    lam = cumulants(law, beta).lambda_
    env = EnvironmentField(law, sample_seed(seed, np.arange(samples)), N, N)
    logz = log_partition_fast(env, beta, N)
    rows = []
    violations = 0
    worst = -math.inf
    for v in v_grid:
        hit = logz <= -(beta * v + lam) * N
        freq = float(hit.mean())
        se = math.sqrt(max(freq * (1 - freq), 1.0 / samples) / samples)
        bound = 8 * N ** 3 * math.exp(-c0 * v)
        bad = freq > bound + 3 * se
        violations += int(bad)
        worst = max(worst, freq - bound)
        rows.append({"v": v, "frequency": freq, "stderr": se, "bound": bound, "vacuous": bound >= 1.0})
    return ScanReport(
        grid={"law": str(law), "beta": beta, "N": N, "samples": samples, "seed": seed},
        extremum=worst,
        location=None,
        violations=violations,
        extra={"rows": rows, "c0": c0},
    )


def _tuple_times(plan):
    """All t_0 < ... < t_q in [1, ell] with gaps <= u."""
    for t in itertools.combinations(range(1, plan.ell + 1), plan.q + 1):
        if all(0 < b - a <= plan.u for a, b in zip(t, t[1:])):
            yield t


def _pair_weight(table, s, dx):
    """p(s, dx) 1{|dx|_1 <= rho(s)} straight from the kernel table."""
    from .kernel import rho

    if abs(dx[0]) + abs(dx[1]) > rho(s):
        return 0.0
    return table.p(s, dx)


def enumerate_x_statistic(env, plan) -> np.ndarray:
    """X on block (1, 0) by summing every (t, x) tuple in J x box^(q+1)."""
    if plan.ell > 6 or plan.q > 2:
        raise ValueError("tuple enumeration is for ell <= 6, q <= 2")
    table = build_kernel_table(2, plan.u)
    B = plan.box_radius
    sites = list(itertools.product(range(-B, B + 1), repeat=2))
    total = np.zeros(env.batch_shape)
    for t in _tuple_times(plan):
        for xs in itertools.product(sites, repeat=plan.q + 1):
            P = 1.0
            for j in range(1, plan.q + 1):
                P *= _pair_weight(table, t[j] - t[j - 1], (xs[j][0] - xs[j - 1][0], xs[j][1] - xs[j - 1][1]))
                if P == 0.0:
                    break
            if P == 0.0:
                continue
            prod = np.ones(env.batch_shape)
            for tj, xj in zip(t, xs):
                prod = prod * env.at(tj, [np.asarray(xj[0]), np.asarray(xj[1])])
            total = total + P * prod
    return total / (2 * plan.R * plan.ell * plan.D_u ** (plan.q / 2))


def enumerate_x_second_moment(plan) -> float:
    """sum_{J x box^(q+1)} P(t, x)^2 / (4 R^2 ell^2 D(u)^q) by plain enumeration."""
    if plan.ell > 6 or plan.q > 2:
        raise ValueError("tuple enumeration is for ell <= 6, q <= 2")
    table = build_kernel_table(2, plan.u)
    B = plan.box_radius
    sites = list(itertools.product(range(-B, B + 1), repeat=2))
    total = 0.0
    for t in _tuple_times(plan):
        for xs in itertools.product(sites, repeat=plan.q + 1):
            P = 1.0
            for j in range(1, plan.q + 1):
                P *= _pair_weight(table, t[j] - t[j - 1], (xs[j][0] - xs[j - 1][0], xs[j][1] - xs[j - 1][1]))
            total += P * P
    return total / (4 * plan.R ** 2 * plan.ell ** 2 * plan.D_u ** plan.q)


def enumerate_path_tuple_sum(path, plan, t0_min: int = 1, t0_max: Optional[int] = None, box: bool = False) -> float:
    """sum_t prod_j p(t_j - t_{j-1}, S_{t_j} - S_{t_{j-1}}) 1{|.| <= rho} over tuples
    with t0_min <= t_0 <= t0_max, enumerated one tuple at a time."""
    path = np.asarray(path)
    T = min(len(path) - 1, plan.ell)
    t0_max = T if t0_max is None else t0_max
    table = build_kernel_table(2, plan.u)
    total = 0.0
    for t in itertools.combinations(range(1, T + 1), plan.q + 1):
        if not (t0_min <= t[0] <= t0_max):
            continue
        if any(not 0 < b - a <= plan.u for a, b in zip(t, t[1:])):
            continue
        if box and any(np.abs(path[tk]).max() > plan.box_radius for tk in t):
            continue
        P = 1.0
        for a, b in zip(t, t[1:]):
            dx = path[b] - path[a]
            P *= _pair_weight(table, b - a, (int(dx[0]), int(dx[1])))
        total += P
    return total
