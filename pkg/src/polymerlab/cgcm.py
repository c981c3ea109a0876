"""Coarse-graining plans and the change-of-measure statistics.

All tuple sums over (t_0 < ... < t_q) with gaps in (0, u] are evaluated by
chain contraction: a layer per tuple index, each layer a windowed-kernel
convolution of the previous one.  Along a fixed path the same recursion runs
on the time axis only.

Windowed kernel: kappa_s(z) = p(s, z) 1{|z|_1 <= rho(s)}, s = 1..u, d = 2.
"""
from __future__ import annotations

import hashlib
import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .disorder import (
    DisorderLaw,
    EnvironmentField,
    ShiftedField,
    TiltedField,
    cumulants,
    hash_coords,
    sample_seed,
)
from .kernel import build_kernel_table, l1_norm_grid, local_clt_scan_2d, mean_local_time_2d, rho
from .partition import ConfigError, coarse_grained_partitions, reachable_labels

__all__ = [
    "CoarseGrainPlan",
    "windowed_kernels",
    "x_statistic",
    "x_second_moment_exact",
    "x_terms",
    "tilted_x_moments_exact",
    "path_tuple_sum",
    "tilted_mean_x",
    "w_statistic",
    "y_statistic",
    "expected_w",
    "YCovarianceReport",
    "y_covariance_check",
    "g_penalty",
    "PipelineReport",
    "fractional_moment_pipeline",
    "interlacements",
    "check_compar",
    "sample_walks",
    "counter_walks",
]

D2 = 2


def windowed_kernels(u: int) -> list:
    """[None, kappa_1, ..., kappa_u]; kappa_s is a cube of half-width floor(rho(s))."""
    table = build_kernel_table(D2, u)
    out = [None]
    for s in range(1, u + 1):
        r = int(math.floor(rho(s)))
        sl = table.slices[s][s - r:s + r + 1, s - r:s + r + 1]
        out.append(np.where(l1_norm_grid(r, D2) <= rho(s), sl, 0.0))
    return out


@dataclass(frozen=True)
class CoarseGrainPlan:
    """Cell length ``ell`` (sqrt even), ``eps``, enlargement ``R``, penalty ``K``,
    ``m`` blocks, interaction order ``q`` and time range ``u``.

    ``CoarseGrainPlan.from_formulas`` fills q and u from
    q = round((log log ell)^2) (at least 1) and u = floor(ell^(1 - eps^2)).
    """

    ell: int
    q: int
    u: int
    eps: float = 0.05
    R: int = 1
    K: float = 2.0
    m: int = 1
    mode: str = "manual"

    def __post_init__(self):
        s = math.isqrt(self.ell)
        if self.ell < 4 or s * s != self.ell or s % 2:
            raise ConfigError(f"sqrt(ell) must be an even integer, got ell={self.ell}")
        if not 0 < self.eps < 0.1:
            raise ConfigError(f"eps must lie in (0, 1/10), got {self.eps}")
        if self.R < 1 or self.q < 1 or self.u < 1 or self.m < 1 or self.K <= 0:
            raise ConfigError("R, q, u, m must be positive integers and K > 0")
        if self.u > self.ell:
            raise ConfigError(f"u={self.u} exceeds ell={self.ell}")
        if not self.w_admissible:
            warnings.warn(
                f"ell/2 + q*u = {self.ell // 2 + self.q * self.u} > ell = {self.ell}: "
                "W and Y statistics are unavailable for this plan",
                stacklevel=2,
            )

    @classmethod
    def from_formulas(cls, ell: int, eps: float = 0.05, R: int = 1, K: float = 2.0, m: int = 1):
        if ell <= math.e:
            raise ConfigError("formula mode needs ell > e")
        q = max(1, round(math.log(math.log(ell)) ** 2))
        u = max(1, math.floor(ell ** (1 - eps ** 2)))
        return cls(ell, q, u, eps, R, K, m, mode="formulas")

    @property
    def side(self) -> int:
        return math.isqrt(self.ell)

    @property
    def box_radius(self) -> int:
        return self.R * self.side

    @property
    def box_cardinality(self) -> int:
        return (2 * self.box_radius + 1) ** 2

    @property
    def w_admissible(self) -> bool:
        return self.ell // 2 + self.q * self.u <= self.ell

    @cached_property
    def D_u(self) -> float:
        return float(mean_local_time_2d(self.u)[self.u])

    @cached_property
    def kernels(self) -> list:
        return windowed_kernels(self.u)

    @cached_property
    def Dhat_u(self) -> float:
        return float(sum(np.sum(k * k) for k in self.kernels[1:]))

    @property
    def x_normalization(self) -> float:
        return 1.0 / (2 * self.R * self.ell * self.D_u ** (self.q / 2))

    @property
    def threshold(self) -> float:
        return math.exp(self.K ** 2)

    def config_block(self) -> str:
        keys = ("mode", "ell", "eps", "R", "K", "m", "q", "u")
        return "\n".join(f"{k} = {getattr(self, k)}" for k in keys)

    @property
    def plan_hash(self) -> str:
        return hashlib.sha256(self.config_block().encode()).hexdigest()[:16]


def check_compar(plan: CoarseGrainPlan, beta: float) -> bool:
    """True when (1+eps) <= beta^2 D(u) <= (1+2eps); warns otherwise."""
    v = beta * beta * plan.D_u
    ok = 1 + plan.eps <= v <= 1 + 2 * plan.eps
    if not ok:
        warnings.warn(f"beta^2 D(u) = {v:.4g} outside [{1 + plan.eps:.4g}, {1 + 2 * plan.eps:.4g}]", stacklevel=2)
    return ok


def _shift_add(out: np.ndarray, src: np.ndarray, z: tuple, coef, lag: int):
    """out[..., t, x] += coef * src[..., t - lag, x - z] inside the box (last 3 axes: t, x1, x2)."""
    L, n1, n2 = out.shape[-3:]
    z1, z2 = z
    o1, s1 = (slice(z1, n1), slice(0, n1 - z1)) if z1 >= 0 else (slice(0, n1 + z1), slice(-z1, n1))
    o2, s2 = (slice(z2, n2), slice(0, n2 - z2)) if z2 >= 0 else (slice(0, n2 + z2), slice(-z2, n2))
    out[..., lag:, o1, o2] += coef * src[..., : L - lag, s1, s2]


def _contract(values: np.ndarray, plan: CoarseGrainPlan, squared: bool = False) -> np.ndarray:
    """Sum over admissible tuples of prod_j kernel * prod_j values.

    ``values`` has shape batch + (ell, side, side), index t-1 for time t.
    """
    kern = [None] + [k * k if squared else k for k in plan.kernels[1:]]
    layer = values.copy()
    for _ in range(plan.q):
        acc = np.zeros_like(values)
        for s in range(1, plan.u + 1):
            k = kern[s]
            r = (k.shape[0] - 1) // 2
            for i, j in zip(*np.nonzero(k)):
                _shift_add(acc, layer, (i - r, j - r), k[i, j], s)
        layer = acc * values
    return layer.sum(axis=(-3, -2, -1))


def _block_values(env, plan: CoarseGrainPlan, block: int = 1, label: Sequence[int] = (0, 0)) -> np.ndarray:
    t0 = (block - 1) * plan.ell
    center = tuple(plan.side * c for c in label)
    slabs = [env.grid(t0 + t, center, plan.box_radius) for t in range(1, plan.ell + 1)]
    return np.stack(slabs, axis=-3)


def x_statistic(env, plan: CoarseGrainPlan, block: int = 1, label: Sequence[int] = (0, 0)) -> np.ndarray:
    """X^{(block, label)}(w): the q-linear form on block B_{(block, label)}."""
    if plan.D_u <= 0:
        raise ConfigError("D(u) must be positive")
    return plan.x_normalization * _contract(_block_values(env, plan, block, label), plan)


def x_second_moment_exact(plan: CoarseGrainPlan) -> float:
    """E[X^2] = sum_{tuples} P(t, x)^2 / (4 R^2 ell^2 D(u)^q)."""
    n = 2 * plan.box_radius + 1
    ones = np.ones((plan.ell, n, n))
    total = float(_contract(ones, plan, squared=True))
    return total / (4 * plan.R ** 2 * plan.ell ** 2 * plan.D_u ** plan.q)


def x_terms(plan: CoarseGrainPlan):
    """Yield ``(coords, coefficient)`` for every nonzero term of X, coords being
    ((t_0, x_0), ..., (t_q, x_q)).  Exponential in q; for small plans."""
    B = plan.box_radius
    norm = plan.x_normalization

    def extend(prefix, coef):
        if len(prefix) == plan.q + 1:
            yield tuple(prefix), coef * norm
            return
        t, x = prefix[-1]
        for s in range(1, plan.u + 1):
            if t + s > plan.ell:
                break
            k = plan.kernels[s]
            r = (k.shape[0] - 1) // 2
            for i, j in zip(*np.nonzero(k)):
                y = (x[0] + i - r, x[1] + j - r)
                if abs(y[0]) <= B and abs(y[1]) <= B:
                    yield from extend(prefix + [(t + s, y)], coef * k[i, j])

    for t0 in range(1, plan.ell + 1):
        for x0 in itertools.product(range(-B, B + 1), repeat=2):
            yield from extend([(t0, x0)], 1.0)


def tilted_x_moments_exact(plan: CoarseGrainPlan, path: np.ndarray, beta: float, law: DisorderLaw):
    """(E^S[X], Var^S[X]) exactly, by expanding X in centred variables.

    Under the tilt, coordinate (t, S_t) has mean lambda'(beta) and variance
    lambda''(beta); all others have mean 0 and variance 1.  Writing
    w = mean + xi, X = sum_A b_A xi_A with Var = sum_{A nonempty} b_A^2 prod var.
    """
    cm = cumulants(law, beta)
    path = np.asarray(path)
    on_path = {(t, (int(path[t][0]), int(path[t][1]))) for t in range(1, len(path))}
    coeffs: dict = {}
    mean = 0.0
    for coords, c in x_terms(plan):
        on = [k for k in coords if k in on_path]
        off = tuple(k for k in coords if k not in on_path)
        for r in range(len(on) + 1):
            for keep in itertools.combinations(on, r):
                fixed = len(on) - r
                b = c * cm.lambda1 ** fixed
                A = tuple(sorted(off + keep))
                if not A:
                    mean += b
                else:
                    coeffs[A] = coeffs.get(A, 0.0) + b
    var = 0.0
    for A, b in coeffs.items():
        v = 1.0
        for k in A:
            if k in on_path:
                v *= cm.lambda2
        var += b * b * v
    return mean, var


def _kernel_lookup(plan: CoarseGrainPlan) -> np.ndarray:
    """Dense kappa_s(z) for s <= u, |z|_inf <= u: array (u+1, 2u+1, 2u+1)."""
    U = plan.u
    lut = np.zeros((U + 1, 2 * U + 1, 2 * U + 1))
    for s in range(1, U + 1):
        k = plan.kernels[s]
        r = (k.shape[0] - 1) // 2
        lut[s, U - r:U + r + 1, U - r:U + r + 1] = k
    return lut


def path_tuple_sum(
    paths: np.ndarray,
    plan: CoarseGrainPlan,
    t0_min: int = 1,
    t0_max: Optional[int] = None,
    box: bool = False,
) -> np.ndarray:
    """sum over tuples t_0 < ... < t_q (gaps in (0, u], t0_min <= t_0 <= t0_max,
    t_q <= min(ell, path length)) of prod_j kappa(t_j - t_{j-1}, S_{t_j} - S_{t_{j-1}}).

    With ``box`` every S_{t_k} must also lie in the enlarged cell around 0.
    ``paths`` has shape batch + (T+1, 2), entry t being S_t.
    """
    paths = np.asarray(paths)
    T = min(paths.shape[-2] - 1, plan.ell)
    if t0_max is None:
        t0_max = T
    U = plan.u
    lut = _kernel_lookup(plan)
    batch = paths.shape[:-2]
    times = np.arange(T + 1)
    f = np.zeros(batch + (T + 1,))
    f[..., (times >= t0_min) & (times <= t0_max) & (times >= 1)] = 1.0
    if box:
        inside = np.all(np.abs(paths[..., : T + 1, :]) <= plan.box_radius, axis=-1)
        f = f * inside
    for _ in range(plan.q):
        g = np.zeros_like(f)
        for s in range(1, U + 1):
            if s > T:
                break
            delta = paths[..., s:T + 1, :] - paths[..., : T + 1 - s, :]
            kv = lut[s, np.clip(delta[..., 0] + U, 0, 2 * U), np.clip(delta[..., 1] + U, 0, 2 * U)]
            g[..., s:] += f[..., : T + 1 - s] * kv
        if box:
            g = g * inside
        f = g
    return f.sum(axis=-1)


def tilted_mean_x(plan: CoarseGrainPlan, path: np.ndarray, beta: float, law: DisorderLaw = DisorderLaw()):
    """E^S[X] = lambda'^(q+1) / (2 R ell D(u)^(q/2)) * sum_{t in J} P(t, S^(t)) 1{S_{t_k} in box}."""
    path = np.asarray(path)
    if path.shape[-2] - 1 < plan.ell:
        raise ValueError(f"path must be defined on [0, {plan.ell}]")
    lam1 = cumulants(law, beta).lambda1
    return lam1 ** (plan.q + 1) * plan.x_normalization * path_tuple_sum(path, plan, box=True)


def _require_w(plan):
    if not plan.w_admissible:
        raise ConfigError(f"ell/2 + q*u <= ell violated for plan ({plan.ell}, q={plan.q}, u={plan.u})")


def w_statistic(paths: np.ndarray, plan: CoarseGrainPlan) -> np.ndarray:
    """W_ell = (1/(ell D(u)^q)) sum_{t in J', t_0 <= ell/2} P(t, S^(t))."""
    _require_w(plan)
    paths = np.asarray(paths)
    if paths.shape[-2] - 1 < plan.ell:
        raise ValueError(f"path must be defined on [0, {plan.ell}]")
    s = path_tuple_sum(paths, plan, 1, plan.ell // 2)
    return s / (plan.ell * plan.D_u ** plan.q)


def expected_w(plan: CoarseGrainPlan) -> float:
    """E[W_ell] = (1/2) (D_hat(u)/D(u))^q by translation invariance."""
    return 0.5 * (plan.Dhat_u / plan.D_u) ** plan.q


def y_statistic(paths: np.ndarray, plan: CoarseGrainPlan, j: int) -> np.ndarray:
    """Y_j = D(u)^-q sum_{t in J', t_0 = j} P(t, S^(t)) - (D_hat(u)/D(u))^q."""
    _require_w(plan)
    s = path_tuple_sum(paths, plan, j, j)
    return s / plan.D_u ** plan.q - (plan.Dhat_u / plan.D_u) ** plan.q


def sample_walks(seed: int, count: int, length: int, d: int = 2) -> np.ndarray:
    """``count`` simple random walks S_0 = 0, ..., S_length: array (count, length+1, d)."""
    rng = np.random.default_rng(seed)
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    idx = rng.integers(0, 2 * d, size=(count, length))
    out = np.zeros((count, length + 1, d), dtype=np.int64)
    out[:, 1:] = np.cumsum(steps[idx], axis=1)
    return out


def counter_walks(seeds, length: int, d: int = 2) -> np.ndarray:
    """One walk per seed; step n is drawn from hash(seed, n, walk key).

    Walk i depends only on ``seeds[i]``, so a sweep can be cut into chunks
    freely.  The key sits far outside any disorder window.
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    n = np.arange(1, length + 1)
    h = hash_coords(seeds[:, None], n[None, :], [np.int64(-(1 << 39))] * d)
    idx = (h % np.uint64(2 * d)).astype(np.int64)
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    out = np.zeros((len(seeds), length + 1, d), dtype=np.int64)
    out[:, 1:] = np.cumsum(steps[idx], axis=1)
    return out


def _all_walks(length: int, d: int = 2):
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    head = min(length, 2)
    for prefix in itertools.product(range(2 * d), repeat=head):
        rest = np.array(list(itertools.product(range(2 * d), repeat=length - head)), dtype=np.int64)
        rest = rest.reshape(-1, length - head)
        idx = np.concatenate([np.broadcast_to(np.array(prefix), (len(rest), head)), rest], axis=1)
        out = np.zeros((len(idx), length + 1, d), dtype=np.int64)
        out[:, 1:] = np.cumsum(steps[idx], axis=1)
        yield out


@dataclass
class YCovarianceReport:
    j1: int
    j2: int
    mc_covariance: float
    mc_stderr: float
    exact_covariance: Optional[float]
    max_abs_y: float
    envelope: float
    samples: int


def y_covariance_check(plan: CoarseGrainPlan, j1: int, j2: int, samples: int = 10_000,
                       seed: int = 0, exact: Optional[bool] = None) -> YCovarianceReport:
    """E[Y_j1 Y_j2] by Monte Carlo, and by enumerating every walk when the
    needed horizon max(j1, j2) + q u is at most 12 steps.

    The envelope is max((D_hat/D)^q, (c1 sum_{i<=u} 1/(1+i) / D(u))^q) with
    c1 = max_{t>=1, x} p(t, x)(1 + t), which bounds |Y_j| surely.
    """
    _require_w(plan)
    if not (1 <= j1 <= plan.ell // 2 and 1 <= j2 <= plan.ell // 2):
        raise ValueError("need 1 <= j1, j2 <= ell/2")
    horizon = max(j1, j2) + plan.q * plan.u
    walks = sample_walks(seed, samples, horizon)
    y1, y2 = y_statistic(walks, plan, j1), y_statistic(walks, plan, j2)
    prod = y1 * y2
    cov = float(prod.mean())
    se = float(prod.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.nan
    exact_cov = None
    if exact if exact is not None else horizon <= 12:
        if horizon > 12:
            raise ValueError(f"exact enumeration needs walks of length {horizon} > 12")
        total, count = 0.0, 0
        for chunk in _all_walks(horizon):
            total += float(np.sum(y_statistic(chunk, plan, j1) * y_statistic(chunk, plan, j2)))
            count += len(chunk)
        exact_cov = total / count
    c1 = local_clt_scan_2d(plan.u, t_min=1)[0]
    harmonic = sum(1.0 / (1 + i) for i in range(1, plan.u + 1))
    envelope = max((plan.Dhat_u / plan.D_u) ** plan.q, (c1 * harmonic / plan.D_u) ** plan.q)
    max_abs = float(max(np.abs(y1).max(), np.abs(y2).max()))
    return YCovarianceReport(j1, j2, cov, se, exact_cov, max_abs, envelope, samples)


def g_penalty(env, plan: CoarseGrainPlan, block: int = 1, label: Sequence[int] = (0, 0)) -> np.ndarray:
    """exp(-K 1{X^{(block, label)} >= exp(K^2)})."""
    x = x_statistic(env, plan, block, label)
    return np.where(x >= plan.threshold, math.exp(-plan.K), 1.0)


@dataclass
class PipelineReport:
    plan: str
    beta: float
    law: str
    samples: int
    rows: list = field(default_factory=list)  # one dict per Y
    sum_sqrt_zy: float = 0.0
    sum_sqrt_zy_stderr: float = 0.0
    sqrt_zhat: float = 0.0
    sqrt_zhat_stderr: float = 0.0
    target: float = 0.0
    tail_frequency: dict = field(default_factory=dict)
    cs_violations: int = 0

    @property
    def aggregate_ok(self) -> bool:
        se = math.hypot(self.sum_sqrt_zy_stderr, self.sqrt_zhat_stderr)
        return self.sqrt_zhat <= self.sum_sqrt_zy + 3 * se


def _mean_se(a: np.ndarray):
    a = np.asarray(a, dtype=float)
    n = a.size
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def fractional_moment_pipeline(
    beta: float,
    plan: CoarseGrainPlan,
    law: DisorderLaw = DisorderLaw(),
    samples: int = 10_000,
    seed: int = 0,
    batch: int = 2_000,
) -> PipelineReport:
    """Monte Carlo of E[sqrt Z_Y], E[1/g_Y], E[g_Y Z_Y] for every reachable Y.

    g_Y = prod_i g_{(i, y_{i-1})} with y_0 = 0.  Cauchy-Schwarz
    (E sqrt Z_Y)^2 <= E[1/g_Y] E[g_Y Z_Y] is checked per Y within 3 SE; the
    fractional-moment sum sum_Y E[sqrt Z_Y] is reported against 2^-m.
    """
    N = plan.m * plan.ell
    reach = [reachable_labels(plan.ell, i) for i in range(plan.m + 1)]
    far = max(max(abs(c) for y in labels for c in y) for labels in reach)
    radius = N + (far + plan.R + 1) * plan.side
    acc: dict = {}
    sqrt_total = []
    sum_sqrt = []
    tail_hits: dict = {}
    for start in range(0, samples, batch):
        idx = np.arange(start, min(samples, start + batch))
        env = EnvironmentField(law, sample_seed(seed, idx), N, radius)
        zy = coarse_grained_partitions(env, beta, plan.ell, plan.m)
        g_cache = {}
        for i in range(1, plan.m + 1):
            for y in reach[i - 1]:
                x = x_statistic(env, plan, i, y)
                g_cache[(i, y)] = np.where(x >= plan.threshold, math.exp(-plan.K), 1.0)
                tail_hits[(i, y)] = tail_hits.get((i, y), 0) + int(np.sum(x >= plan.threshold))
        zhat = np.zeros(len(idx))
        ssum = np.zeros(len(idx))
        for Y, z in zy.items():
            g = np.ones(len(idx))
            prev = (0, 0)
            for i, y in enumerate(Y, start=1):
                g = g * g_cache[(i, prev)]
                prev = y
            a = acc.setdefault(Y, [[], [], []])
            a[0].append(np.sqrt(z))
            a[1].append(1.0 / g)
            a[2].append(g * z)
            zhat += z
            ssum += np.sqrt(z)
        sqrt_total.append(np.sqrt(zhat))
        sum_sqrt.append(ssum)
    report = PipelineReport(plan.config_block().replace("\n", "; "), beta, str(law), samples,
                            target=2.0 ** -plan.m)
    for Y, (sz, gi, gz) in acc.items():
        sz, gi, gz = np.concatenate(sz), np.concatenate(gi), np.concatenate(gz)
        m_sz, se_sz = _mean_se(sz)
        m_gi, se_gi = _mean_se(gi)
        m_gz, se_gz = _mean_se(gz)
        lhs, rhs = m_sz ** 2, m_gi * m_gz
        se = math.sqrt((2 * m_sz * se_sz) ** 2 + (m_gz * se_gi) ** 2 + (m_gi * se_gz) ** 2)
        violated = lhs > rhs + 3 * se
        report.cs_violations += int(violated)
        report.rows.append({
            "Y": Y, "E_sqrt_ZY": m_sz, "E_sqrt_ZY_se": se_sz, "E_g_inv": m_gi, "E_g_inv_se": se_gi,
            "E_g_ZY": m_gz, "E_g_ZY_se": se_gz, "cs_lhs": lhs, "cs_rhs": rhs, "cs_violated": violated,
        })
    report.sum_sqrt_zy, report.sum_sqrt_zy_stderr = _mean_se(np.concatenate(sum_sqrt))
    report.sqrt_zhat, report.sqrt_zhat_stderr = _mean_se(np.concatenate(sqrt_total))
    report.tail_frequency = {k: v / samples for k, v in tail_hits.items()}
    return report


def interlacements(q: int, r: int):
    """Nondecreasing sequences 0 <= m_0 <= ... <= m_{q-r} <= r."""
    return itertools.combinations_with_replacement(range(r + 1), q - r + 1)
