"""Annealed two-replica computations.

E[Zhat_N^2] = E^{x2}[exp(gamma L_N)] with gamma = lambda(2 beta) - 2 lambda(beta)
and L_N the number of coincidences of two independent walks.  Only the
difference walk V = S1 - S2 matters; its step law is the autocorrelation of
the simple-walk step, and the pinning reward is applied at V = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .disorder import DisorderLaw, EnvironmentField, cumulants, gamma, sample_seed
from .kernel import ResourceError
from .partition import log_partition_fast, marginals

__all__ = [
    "DifferenceWalkState",
    "ScaleUnreachable",
    "difference_step_kernel",
    "two_replica_exponential_moment",
    "two_replica_weighted_local_time",
    "two_replica_moments",
    "choose_scale_N",
    "SecondMomentReport",
    "second_moment_bound_check",
    "gradient_norm_sq",
    "KeyStatementReport",
    "key_statement_check",
]

DEFAULT_CAP = 10_000_000


class ScaleUnreachable(ValueError):
    """N_{beta,eps} is above the cap; ``required`` holds the needed N."""

    def __init__(self, required: float, cap: int, log_required: float):
        super().__init__(
            f"scale N(beta, eps) unreachable: N = exp({log_required:.4g}) ~ {required:.4g} exceeds cap {cap}"
        )
        self.required = required
        self.cap = cap
        self.log_required = log_required


@dataclass
class DifferenceWalkState:
    n: int
    weights: np.ndarray
    weighted: np.ndarray
    log_normalizer: float
    radius: int


def difference_step_kernel(d: int = 2) -> np.ndarray:
    """Law of xi1 - xi2 on the cube [-2, 2]^d (9 support points in d = 2)."""
    k = np.zeros((5,) * d)
    steps = np.concatenate([np.eye(d, dtype=int), -np.eye(d, dtype=int)])
    for a in steps:
        for b in steps:
            k[tuple(a - b + 2)] += 1.0 / (2 * d) ** 2
    return k


def _apply_kernel(w: np.ndarray, kern: np.ndarray, d: int) -> np.ndarray:
    """out[v] = sum_z kern(z) w[v - z]; output side = input side - 4."""
    out = np.zeros(tuple(s - 4 for s in w.shape))
    for z in zip(*np.nonzero(kern)):
        sl = tuple(slice(4 - zi, w.shape[i] - zi) for i, zi in enumerate(z))
        out += kern[z] * w[sl]
    return out


def two_replica_moments(u: float, N: int, d: int = 2, cap: int = DEFAULT_CAP):
    """(E[exp(u L_N)], E[L_N exp(u L_N)]) by dynamic programming on V."""
    required = sum((4 * min(n, N) + 1) ** d for n in range(1, N + 1))
    if required > cap:
        raise ResourceError(required, cap)
    kern = difference_step_kernel(d)
    R = 2 * N
    side = 2 * R + 1 + 4
    c = R + 2
    w = np.zeros((side,) * d)
    h = np.zeros((side,) * d)
    w[(c,) * d] = 1.0
    origin = (c,) * d
    eu = math.exp(u)
    lognorm = 0.0
    for n in range(1, N + 1):
        a = 2 * n
        win = (slice(c - a - 2, c + a + 3),) * d
        inner = (slice(c - a, c + a + 1),) * d
        w_new = _apply_kernel(w[win], kern, d)
        h_new = _apply_kernel(h[win], kern, d)
        w[inner] = w_new
        h[inner] = h_new
        h[origin] = eu * (h[origin] + w[origin])
        w[origin] = eu * w[origin]
        m = w.max()
        if m > 2.0 or m < 0.5:
            w /= m
            h /= m
            lognorm += math.log(m)
    scale = math.exp(lognorm)
    return float(w.sum()) * scale, float(h.sum()) * scale


def two_replica_exponential_moment(u: float, N: int, d: int = 2, cap: int = DEFAULT_CAP) -> float:
    """E^{x2}[exp(u L_N)], the homogeneous pinning partition function."""
    return two_replica_moments(u, N, d, cap)[0]


def two_replica_weighted_local_time(u: float, N: int, d: int = 2, cap: int = DEFAULT_CAP) -> float:
    """E^{x2}[L_N exp(u L_N)]."""
    return two_replica_moments(u, N, d, cap)[1]


def choose_scale_N(beta: float, eps: float, cap: int = DEFAULT_CAP) -> int:
    """ceil(exp((1 - eps) pi / beta^2)), refused above ``cap``."""
    if beta <= 0 or not 0 <= eps < 1:
        raise ValueError("need beta > 0 and 0 <= eps < 1")
    log_req = (1 - eps) * math.pi / beta ** 2
    if log_req > math.log(cap) + 1:
        raise ScaleUnreachable(math.exp(min(log_req, 700.0)), cap, log_req)
    n = math.ceil(math.exp(log_req))
    if n > cap:
        raise ScaleUnreachable(float(n), cap, log_req)
    return n


@dataclass
class SecondMomentReport:
    beta: float
    eps: float
    N: int
    law: str
    second_moment: float
    bound_10_over_eps: float
    within_bound: bool
    pz_lower: float
    mc_frequency: float
    mc_stderr: float
    samples: int

    @property
    def pz_consistent(self) -> bool:
        return self.mc_frequency >= self.pz_lower - 3 * self.mc_stderr


def second_moment_bound_check(
    beta: float,
    eps: float,
    law: DisorderLaw = DisorderLaw(),
    samples: int = 4000,
    seed: int = 0,
    cap: int = DEFAULT_CAP,
    batch: int = 1000,
) -> SecondMomentReport:
    """Exact E[Zhat^2] at N = N_{beta,eps}, the 10/eps bound, the Paley-Zygmund
    lower bound 1/(4 E[Zhat^2]) and the Monte Carlo frequency of Zhat >= 1/2."""
    N = choose_scale_N(beta, eps, cap)
    second = two_replica_exponential_moment(gamma(law, beta), N, cap=cap)
    hits = 0
    for start in range(0, samples, batch):
        idx = np.arange(start, min(samples, start + batch))
        env = EnvironmentField(law, sample_seed(seed, idx), N, N)
        logz = log_partition_fast(env, beta, N)
        hits += int(np.sum(logz >= -math.log(2.0)))
    freq = hits / samples
    se = math.sqrt(max(freq * (1 - freq), 1.0 / samples) / samples)
    return SecondMomentReport(
        beta, eps, N, str(law), second, 10.0 / eps, second <= 10.0 / eps,
        1.0 / (4 * second), freq, se, samples,
    )


def gradient_norm_sq(env, beta: float, N: int, radius: Optional[int] = None) -> np.ndarray:
    """|grad_w log Zhat_N|^2 = beta^2 sum_{n,x} P_N(S_n = x)^2 (n >= 1)."""
    if beta == 0:
        return np.zeros(env.batch_shape)
    m = marginals(env, beta, N, radius)
    return beta ** 2 * np.sum(m[..., 1:, :, :] ** 2, axis=(-3, -2, -1))


@dataclass
class KeyStatementReport:
    beta: float
    eps: float
    N: int
    second_moment: float
    pz_lower: float
    gradient_bound: float
    M_sq: float
    probability: float
    stderr: float
    target: float
    extra: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.probability > self.target


def key_statement_check(
    beta: float,
    eps: float,
    law: DisorderLaw = DisorderLaw(),
    samples: int = 4000,
    seed: int = 0,
    batch: int = 500,
) -> KeyStatementReport:
    """Empirical P(Zhat >= 1/2, |grad log Zhat|^2 <= M^2) at N = N_{beta,eps}.

    M^2 is chosen from computable bounds: with B = 4 beta^2 E[L e^{gamma L}]
    bounding E[|grad|^2; Zhat >= 1/2] and p = 1/(4 E[Zhat^2]), take
    M^2 = 2B/p, so that P(...) >= p - B/M^2 = p/2.
    """
    N = choose_scale_N(beta, eps)
    g = gamma(law, beta)
    second, weighted = two_replica_moments(g, N)
    p = 1.0 / (4 * second)
    B = 4 * beta ** 2 * weighted
    M_sq = 2 * B / p
    hits = 0
    for start in range(0, samples, batch):
        idx = np.arange(start, min(samples, start + batch))
        env = EnvironmentField(law, sample_seed(seed, idx), N, N)
        logz = log_partition_fast(env, beta, N)
        gn = gradient_norm_sq(env, beta, N)
        hits += int(np.sum((logz >= -math.log(2.0)) & (gn <= M_sq)))
    prob = hits / samples
    se = math.sqrt(max(prob * (1 - prob), 1.0 / samples) / samples)
    return KeyStatementReport(beta, eps, N, second, p, B, M_sq, prob, se, eps / 80,
                              extra={"law": str(law)})
