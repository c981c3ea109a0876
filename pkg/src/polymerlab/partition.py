"""Transfer-matrix evaluation of the renormalised partition function.

Forward recursion, for a path weight ``exp(beta w - lambda)`` per step:

    W_0 = delta_0,    W_n(x) = exp(beta w_{n,x} - lambda) * (1/2d) sum_{|y-x|=1} W_{n-1}(y)

so that Zhat_N = sum_x W_N(x).  Weights are kept in range by dividing out the
per-sample maximum and accumulating its log.  Arrays carry the field's batch
axes first, so one call evaluates many disorder samples.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .disorder import cumulants
from .kernel import neighbor_sum

__all__ = [
    "PolymerSlice",
    "CoarseTrajectory",
    "ConfigError",
    "truncation_radius",
    "log_partition",
    "log_partition_fast",
    "log_partition_array",
    "materialize",
    "marginals",
    "marginals_array",
    "overlap_series",
    "free_energy_pass",
    "cell_label",
    "coarse_grained_partition",
    "coarse_grained_partitions",
    "reachable_labels",
    "SAMPLE_HEADER",
    "sample_rows",
]

TRUNCATION_C = 5.0
MIN_TRUNCATION_C = 3.0


class ConfigError(ValueError):
    pass


@dataclass
class PolymerSlice:
    """Weights of one time slice on the cube ``[-radius, radius]^d``.

    The true (renormalised) weights are ``weights * exp(log_normalizer)``;
    both carry the batch axes of the field that produced them.
    """

    n: int
    weights: np.ndarray
    log_normalizer: np.ndarray
    radius: int
    d: int

    def log_total(self) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return np.log(np.sum(self.weights, axis=axes)) + self.log_normalizer


@dataclass(frozen=True)
class CoarseTrajectory:
    """Labels y_1..y_m of the cells visited at times l, 2l, ..., ml."""

    ell: int
    labels: tuple

    def __post_init__(self):
        s = math.isqrt(self.ell)
        if s * s != self.ell or s % 2:
            raise ConfigError(f"sqrt(ell) must be an even integer, got ell={self.ell}")
        object.__setattr__(self, "labels", tuple(tuple(int(c) for c in y) for y in self.labels))

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def side(self) -> int:
        return math.isqrt(self.ell)


def truncation_radius(N: int, c: float = TRUNCATION_C) -> int:
    return int(math.ceil(c * math.sqrt(N)))


def _axes(d):
    return tuple(range(-d, 0))


def _bmax(w, d):
    return np.max(w, axis=_axes(d))


def _expand(a, d):
    return np.asarray(a)[(...,) + (None,) * d]


def materialize(env, N: int, radius: int) -> np.ndarray:
    """Field values as an array of shape ``batch + (N, 2r+1, ..., 2r+1)``; index n-1 is time n."""
    d = _field_dim(env)
    slabs = [env.grid(n, (0,) * d, radius) for n in range(1, N + 1)]
    return np.stack(slabs, axis=-(d + 1))


def _field_dim(env) -> int:
    while not hasattr(env, "d"):
        env = env.base
    return env.d


def _forward(
    omega_fn: Callable[[int, int], np.ndarray],
    beta: float,
    lam: float,
    N: int,
    R: int,
    d: int,
    batch_shape: tuple,
    rescale: str = "auto",
    on_step: Optional[Callable] = None,
    masks: Optional[dict] = None,
):
    """Core forward pass.  ``omega_fn(n, a)`` returns field values at time n on
    the cube of radius a.  Returns the final ``PolymerSlice``.

    ``on_step(n, prev_weights, prev_lognorm)`` is called before step n, with the
    slice of time n-1 (cube of radius R+1).  ``masks[n]`` multiplies the
    weights at time n.
    """
    side = 2 * (R + 1) + 1
    w = np.zeros(batch_shape + (side,) * d)
    w[(...,) + (R + 1,) * d] = 1.0
    lognorm = np.zeros(batch_shape)
    c = R + 1
    for n in range(1, N + 1):
        if on_step is not None:
            on_step(n, w, lognorm)
        a = min(n, R)
        src = w[(...,) + (slice(c - a - 1, c + a + 2),) * d]
        nb = neighbor_sum(src, d) / (2 * d)
        if beta != 0.0:
            nb *= np.exp(beta * omega_fn(n, a) - lam)
        w[(...,) + (slice(c - a, c + a + 1),) * d] = nb
        if masks is not None and n in masks:
            w *= masks[n]
        if rescale == "never":
            continue
        m = _bmax(w, d)
        if rescale == "always":
            trigger = m > 0
        else:
            trigger = (m > 0) & ((m < 0.5) | (m > 2.0))
        if np.any(trigger):
            scale = np.where(trigger, m, 1.0)
            w /= _expand(scale, d)
            lognorm = lognorm + np.log(scale)
    if on_step is not None:
        on_step(N + 1, w, lognorm)
    return PolymerSlice(N, w[(...,) + (slice(1, -1),) * d], lognorm, R, d)


def _resolve_radius(N: int, radius: Optional[int]) -> int:
    if radius is None:
        return max(N, 1)
    if radius < MIN_TRUNCATION_C * math.sqrt(N):
        raise ConfigError(
            f"truncation radius {radius} < 3*sqrt(N) = {MIN_TRUNCATION_C * math.sqrt(N):.2f}; mass loss not controlled"
        )
    return min(radius, max(N, 1))


def _env_omega_fn(env, d):
    origin = (0,) * d
    return lambda n, a: env.grid(n, origin, a)


def log_partition(env, beta: float, N: int, radius: Optional[int] = None, rescale: str = "auto"):
    """(log Zhat_N, final PolymerSlice).  ``radius`` truncates the lattice to
    the cube of that half-width (must be >= 3 sqrt(N)); None means exact."""
    if N < 0:
        raise ValueError("N must be >= 0")
    d = _field_dim(env)
    R = _resolve_radius(N, radius)
    lam = cumulants(env.law, beta).lambda_
    sl = _forward(_env_omega_fn(env, d), beta, lam, N, R, d, env.batch_shape, rescale)
    return sl.log_total(), sl


def log_partition_fast(env, beta: float, N: int, radius: Optional[int] = None, backend: str = "auto"):
    """log Zhat_N only, through the compiled kernel when the field allows it.

    ``backend="numpy"`` forces the reference path.
    """
    logz, _ = free_energy_pass(env, beta, N, radius, with_overlap=False, backend=backend)
    return logz


def log_partition_array(omega: np.ndarray, beta: float, lam: float, d: int = 2, rescale: str = "auto"):
    """log Zhat_N for an explicit field array ``batch + (N, side, ...)`` with side 2R+1."""
    N = omega.shape[-(d + 1)]
    R = (omega.shape[-1] - 1) // 2

    def fn(n, a):
        sl = omega[(...,) + (n - 1,) + (slice(R - a, R + a + 1),) * d]
        return sl

    sl = _forward(fn, beta, lam, N, R, d, omega.shape[: -(d + 1)], rescale)
    return sl.log_total()


def marginals_array(omega: np.ndarray, beta: float, lam: float, d: int = 2):
    """Polymer marginals P(S_n = x) for n = 0..N from a field array.

    Returns ``(marg, log_zhat)``; ``marg`` has shape ``batch + (N+1, side, ...)``.
    """
    N = omega.shape[-(d + 1)]
    R = (omega.shape[-1] - 1) // 2
    batch = omega.shape[: -(d + 1)]
    side = 2 * R + 3
    inner = (...,) + (slice(1, -1),) * d
    phi = np.exp(beta * omega - lam)

    def step_field(n):
        return phi[(...,) + (n - 1,) + (slice(None),) * d]

    fw = np.zeros(batch + (N + 1,) + (side,) * d)
    fw_log = np.zeros(batch + (N + 1,))
    cur = np.zeros(batch + (side,) * d)
    cur[(...,) + (R + 1,) * d] = 1.0
    cl = np.zeros(batch)
    fw[(...,) + (0,) + (slice(None),) * d] = cur
    for n in range(1, N + 1):
        nxt = np.zeros_like(cur)
        nxt[inner] = neighbor_sum(cur, d) / (2 * d) * step_field(n)
        m = _bmax(nxt, d)
        cur = nxt / _expand(m, d)
        cl = cl + np.log(m)
        fw[(...,) + (n,) + (slice(None),) * d] = cur
        fw_log[..., n] = cl

    bw = np.zeros_like(fw)
    bw_log = np.zeros_like(fw_log)
    cur = np.zeros(batch + (side,) * d)
    cur[inner] = 1.0
    cl = np.zeros(batch)
    bw[(...,) + (N,) + (slice(None),) * d] = cur
    for n in range(N - 1, -1, -1):
        tmp = np.zeros_like(cur)
        tmp[inner] = cur[inner] * step_field(n + 1)
        nxt = np.zeros_like(cur)
        nxt[inner] = neighbor_sum(tmp, d) / (2 * d)
        m = _bmax(nxt, d)
        cur = nxt / _expand(m, d)
        cl = cl + np.log(m)
        bw[(...,) + (n,) + (slice(None),) * d] = cur
        bw_log[..., n] = cl

    log_z = np.log(np.sum(fw[(...,) + (N,) + (slice(None),) * d], axis=_axes(d))) + fw_log[..., N]
    prod = fw * bw
    scale = np.exp(fw_log + bw_log - log_z[..., None])
    marg = prod * scale[(...,) + (None,) * d]
    return marg[(...,) + (slice(None),) + (slice(1, -1),) * d], log_z


def marginals(env, beta: float, N: int, radius: Optional[int] = None):
    """P_N(S_n = x) for n = 0..N on the cube of half-width ``radius`` (default N)."""
    d = _field_dim(env)
    R = _resolve_radius(N, radius)
    lam = cumulants(env.law, beta).lambda_
    marg, _ = marginals_array(materialize(env, N, R), beta, lam, d)
    return marg


def free_energy_pass(env, beta: float, N: int, radius: Optional[int] = None, with_overlap: bool = True,
                     backend: str = "auto"):
    """One forward pass returning ``(log Zhat_N, overlaps)``.

    ``overlaps[..., k-1]`` is o_k = sum_x (sum_y mu_{k-1}(y) p(1, x-y))^2 with
    mu_{k-1} the endpoint law of the length-(k-1) polymer.  Plain d = 2
    fields go through the compiled kernel unless ``backend="numpy"``.
    """
    if backend not in ("auto", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    d = _field_dim(env)
    R = _resolve_radius(N, radius)
    lam = cumulants(env.law, beta).lambda_
    if backend == "auto" and N >= 1:
        from . import _fast

        if _fast.eligible(env):
            return _fast.fast_forward(env, beta, lam, N, R, with_overlap)
    overlaps = np.zeros(env.batch_shape + (N,))
    c = R + 1

    def record(n, w, _lognorm):
        if n > N:
            return
        a = min(n - 1, R)
        win = w[(...,) + (slice(c - a - 2, c + a + 3),) * d] if a + 2 <= c else np.pad(
            w, [(0, 0)] * (w.ndim - d) + [(1, 1)] * d
        )[(...,) + (slice(c - a - 1, c + a + 4),) * d]
        mu = win / _expand(np.sum(win, axis=_axes(d)), d)
        nb = neighbor_sum(mu, d) / (2 * d)
        overlaps[..., n - 1] = np.sum(nb * nb, axis=_axes(d))

    sl = _forward(_env_omega_fn(env, d), beta, lam, N, R, d, env.batch_shape, "auto",
                  on_step=record if with_overlap else None)
    return sl.log_total(), overlaps


def overlap_series(env, beta: float, N: int, radius: Optional[int] = None, backend: str = "auto"):
    """(o_1..o_N, lambda(beta) * mean_k o_k)."""
    _, o = free_energy_pass(env, beta, N, radius, backend=backend)
    lam = cumulants(env.law, beta).lambda_
    return o, lam * np.mean(o, axis=-1)


SAMPLE_HEADER = ["seed", "sample_index", "N", "beta", "logZhat"]


def sample_rows(seeds, indices, N: int, beta: float, logz) -> list:
    """Per-sample CSV rows (field seed, sample index, N, beta, log Zhat_N)."""
    return [[int(s), int(i), int(N), float(beta), float(v)] for s, i, v in zip(seeds, indices, logz)]


def cell_label(c, side: int):
    """Label y of the cell y*side + (-side/2, side/2] containing coordinate c."""
    return (np.asarray(c) + side // 2 - 1) // side


def _cell_mask(y: Sequence[int], R: int, side: int, d: int) -> np.ndarray:
    axes = np.meshgrid(*([np.arange(-R - 1, R + 2)] * d), indexing="ij")
    m = np.ones(axes[0].shape, dtype=bool)
    for k in range(d):
        m &= cell_label(axes[k], side) == y[k]
    return m.astype(float)


def coarse_grained_partition(env, beta: float, Y: CoarseTrajectory, rescale: str = "auto"):
    """Z_Y: renormalised partition function restricted to S_{i l} in cell y_i."""
    d = _field_dim(env)
    if any(len(y) != d for y in Y.labels):
        raise ConfigError("label dimension does not match the field")
    N = Y.m * Y.ell
    R = max(N, 1)
    lam = cumulants(env.law, beta).lambda_
    masks = {i * Y.ell: _cell_mask(y, R, Y.side, d) for i, y in enumerate(Y.labels, start=1)}
    sl = _forward(_env_omega_fn(env, d), beta, lam, N, R, d, env.batch_shape, rescale, masks=masks)
    with np.errstate(divide="ignore"):
        return np.exp(sl.log_total())


def reachable_labels(ell: int, i: int, d: int = 2):
    """Labels of cells containing some site with |x|_1 <= i*ell."""
    side = math.isqrt(ell)
    reach = i * ell
    lo, hi = int(cell_label(-reach, side)), int(cell_label(reach, side))
    out = []
    for y in itertools.product(range(lo, hi + 1), repeat=d):
        # nearest point of the cell to the origin, coordinatewise
        dist = 0
        for c in y:
            a, b = c * side - side // 2 + 1, c * side + side // 2
            dist += 0 if a <= 0 <= b else min(abs(a), abs(b))
        if dist <= reach:
            out.append(y)
    return out


def coarse_grained_partitions(env, beta: float, ell: int, m: int) -> dict:
    """Z_Y for every reachable Y in one branching sweep (no repeated prefixes).

    Returns a dict mapping label tuples to arrays of the field's batch shape.
    """
    d = _field_dim(env)
    side = math.isqrt(ell)
    CoarseTrajectory(ell, ())  # geometry check
    N = m * ell
    R = max(N, 1)
    lam = cumulants(env.law, beta).lambda_
    c = R + 1
    batch = env.batch_shape
    omega_fn = _env_omega_fn(env, d)

    w0 = np.zeros(batch + (2 * c + 1,) * d)
    w0[(...,) + (c,) * d] = 1.0
    frontier = {(): (w0, np.zeros(batch))}
    for block in range(1, m + 1):
        new = {}
        for prefix, (w, ln) in frontier.items():
            w = w.copy()
            for n in range((block - 1) * ell + 1, block * ell + 1):
                a = min(n, R)
                src = w[(...,) + (slice(c - a - 1, c + a + 2),) * d]
                nb = neighbor_sum(src, d) / (2 * d)
                if beta != 0.0:
                    nb *= np.exp(beta * omega_fn(n, a) - lam)
                w[(...,) + (slice(c - a, c + a + 1),) * d] = nb
            mx = _bmax(w, d)
            mx = np.where(mx > 0, mx, 1.0)
            w = w / _expand(mx, d)
            ln = ln + np.log(mx)
            for y in reachable_labels(ell, block, d):
                mask = _cell_mask(y, R, side, d)
                new[prefix + (y,)] = (w * mask, ln)
        frontier = new
    out = {}
    for key, (w, ln) in frontier.items():
        out[key] = np.sum(w, axis=_axes(d)) * np.exp(ln)
    return out
