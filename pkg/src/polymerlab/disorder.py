"""Environment laws and deterministic, seed-addressed disorder fields.

Every disorder value is a pure function of ``(seed, n, x)``: a splitmix64-style
hash of the coordinates is turned into a uniform in (0, 1) and pushed through
the law's inverse CDF.  Nothing is sequential, so any box can be regenerated
bit-for-bit in any order, by any number of workers.

``seed`` may be a numpy array of seeds; field queries then carry the seed
array's shape as leading batch axes.  This is how Monte Carlo averages are
vectorised over disorder samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

__all__ = [
    "DisorderLaw",
    "CumulantTriple",
    "EnvironmentField",
    "TiltedField",
    "ShiftedField",
    "DomainError",
    "cumulants",
    "gamma",
    "mix64",
    "hash_coords",
    "sample_seed",
    "omega_at",
    "tilted_omega_at",
]

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_KEY_N = np.uint64(0xD6E8FEB86659FD93)
_KEY_X = (
    np.uint64(0xA0761D6478BD642F),
    np.uint64(0xE7037ED1A0B428DB),
    np.uint64(0x8EBC6AF09C88C6E3),
    np.uint64(0x589965CC75374CC3),
)
_KEY_SAMPLE = np.uint64(0x1D8E4E27C47D124F)
_COORD_OFFSET = np.int64(1 << 40)


class DomainError(ValueError):
    """A parameter lies outside the analytic domain of a law."""


def mix64(x):
    """splitmix64 finaliser, elementwise on uint64 data."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * _M1
        x = x ^ (x >> np.uint64(27))
        x = x * _M2
        x = x ^ (x >> np.uint64(31))
    return x


def _enc(c):
    return (np.asarray(c, dtype=np.int64) + _COORD_OFFSET).astype(np.uint64)


def hash_coords(seed, n, coords: Sequence) -> np.ndarray:
    """64-bit hash of ``(seed, n, x_1, ..., x_d)``; all arguments broadcast."""
    if len(coords) > len(_KEY_X):
        raise ValueError(f"at most {len(_KEY_X)} spatial dimensions supported")
    with np.errstate(over="ignore"):
        h = mix64(np.asarray(seed, dtype=np.uint64) + _GOLDEN)
        h = mix64(h ^ (_enc(n) * _KEY_N))
        for key, c in zip(_KEY_X, coords):
            h = mix64(h ^ (_enc(c) * key))
    return h


def sample_seed(master_seed: int, index) -> np.ndarray:
    """Seed of disorder sample ``index`` of a sweep keyed by ``master_seed``."""
    with np.errstate(over="ignore"):
        return mix64(mix64(np.uint64(master_seed)) ^ (np.asarray(index, dtype=np.uint64) * _KEY_SAMPLE))


def _uniform(h: np.ndarray) -> np.ndarray:
    # 53 random bits, centred in their bin: values in (0, 1) strictly
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class CumulantTriple:
    lambda_: float
    lambda1: float
    lambda2: float


@dataclass(frozen=True)
class DisorderLaw:
    """Centred, unit-variance law of a single disorder variable.

    ``kind`` is one of ``"gaussian"``, ``"rademacher"``, ``"shifted-bernoulli"``;
    ``p`` is the success probability of the Bernoulli law (ignored otherwise).
    """

    kind: str = "gaussian"
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher", "shifted-bernoulli"):
            raise ValueError(f"unknown disorder law {self.kind!r}")
        if self.kind == "shifted-bernoulli" and not 0.0 < self.p < 1.0:
            raise ValueError("shifted-bernoulli needs 0 < p < 1")

    @classmethod
    def parse(cls, text: str) -> "DisorderLaw":
        """Parse ``gaussian``, ``rademacher`` or ``shifted-bernoulli(0.3)``."""
        text = text.strip().lower()
        if text.startswith("shifted-bernoulli"):
            inner = text[len("shifted-bernoulli"):].strip("() ")
            return cls("shifted-bernoulli", float(inner) if inner else 0.5)
        if text in ("gaussian", "standard-gaussian", "normal"):
            return cls("gaussian")
        return cls(text)

    def __str__(self) -> str:
        if self.kind == "shifted-bernoulli":
            return f"shifted-bernoulli({self.p:g})"
        return self.kind

    @property
    def _sigma(self) -> float:
        return math.sqrt(self.p * (1.0 - self.p))

    @property
    def atoms(self) -> Optional[tuple[float, float]]:
        """(value taken when the uniform is small, the other value) for two-point laws."""
        if self.kind == "rademacher":
            return (1.0, -1.0)
        if self.kind == "shifted-bernoulli":
            s = self._sigma
            return ((1.0 - self.p) / s, -self.p / s)
        return None

    @property
    def sup_abs(self) -> float:
        a = self.atoms
        return math.inf if a is None else max(abs(a[0]), abs(a[1]))

    @property
    def tail_rate(self) -> float:
        """Rate c0 with P(|w| >= v) <= 2 exp(-c0 v) for all v > 0.

        Gaussian is recorded as infinite (not used).  For a law bounded by M,
        c0 = log(2)/M is valid: the bound is >= 1 up to M and P = 0 beyond.
        """
        if self.kind == "gaussian":
            return math.inf
        return math.log(2.0) / self.sup_abs

    def _p_first(self, beta: float) -> float:
        """Probability of the first atom under the beta-tilted law."""
        a, b = self.atoms
        p0 = 0.5 if self.kind == "rademacher" else self.p
        # logistic form avoids overflow at large |beta|
        z = beta * (a - b) + math.log(p0) - math.log1p(-p0)
        return 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0

    def sample(self, u: np.ndarray, beta: float = 0.0) -> np.ndarray:
        """Inverse-CDF map of uniforms, optionally under the beta-tilted law."""
        if self.kind == "gaussian":
            w = ndtri(u)
            return w + beta if beta else w
        a, b = self.atoms
        return np.where(u < self._p_first(beta), a, b)


def cumulants(law: DisorderLaw, beta: float) -> CumulantTriple:
    """lambda(beta) = log E[exp(beta w)] and its first two derivatives."""
    beta = float(beta)
    if not math.isfinite(beta):
        raise DomainError(f"beta={beta} outside the finite-moment region of {law}")
    if law.kind == "gaussian":
        return CumulantTriple(0.5 * beta * beta, beta, 1.0)
    a, b = law.atoms
    pt = law._p_first(beta)
    p0 = 0.5 if law.kind == "rademacher" else law.p
    # lambda = b*beta + log((1-p0) + p0 exp(beta (a-b)))
    z = beta * (a - b)
    if z > 0:
        lam = a * beta + math.log(p0) + math.log1p((1 - p0) / p0 * math.exp(-z))
    else:
        lam = b * beta + math.log1p(-p0) + math.log1p(p0 / (1 - p0) * math.exp(z))
    mean = pt * a + (1 - pt) * b
    var = pt * (1 - pt) * (a - b) ** 2
    return CumulantTriple(lam, mean, var)


def gamma(law: DisorderLaw, beta: float) -> float:
    """gamma(beta) = lambda(2 beta) - 2 lambda(beta), the two-replica pinning reward."""
    return cumulants(law, 2 * beta).lambda_ - 2 * cumulants(law, beta).lambda_


@dataclass(frozen=True)
class EnvironmentField:
    """Disorder on the space-time box ``1 <= n <= N``, ``|x|_inf <= radius``.

    ``seed`` is an int or an integer array (batch of independent samples).
    With ``truncation`` set, values are replaced by ``w * 1{|w| <= truncation}``.
    """

    law: DisorderLaw
    seed: object
    N: int
    radius: int
    d: int = 2
    truncation: Optional[float] = None
    _seeds: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_seeds", np.asarray(self.seed, dtype=np.uint64))

    @property
    def batch_shape(self) -> tuple:
        return self._seeds.shape

    def with_seed(self, seed) -> "EnvironmentField":
        return replace(self, seed=seed)

    def _check(self, n, coords):
        n = np.asarray(n)
        if np.any(n < 0) or np.any(n > self.N):
            raise IndexError(f"time index outside [0, {self.N}]")
        for c in coords:
            if np.any(np.abs(np.asarray(c)) > self.radius):
                raise IndexError(f"site outside the box of radius {self.radius}")

    def _values(self, u: np.ndarray, beta: float = 0.0) -> np.ndarray:
        w = self.law.sample(u, beta)
        if self.truncation is not None and math.isfinite(self.truncation):
            w = np.where(np.abs(w) <= self.truncation, w, 0.0)
        return w

    def uniforms(self, n, coords) -> np.ndarray:
        """Uniforms behind the values at ``(n, coords)``; batch axes lead."""
        seeds = self._seeds.reshape(self._seeds.shape + (1,) * np.ndim(coords[0]))
        return _uniform(hash_coords(seeds, n, coords))

    def at(self, n, coords) -> np.ndarray:
        self._check(n, coords)
        return self._values(self.uniforms(n, coords))

    def grid(self, n: int, center: Sequence[int], r: int) -> np.ndarray:
        """Values at time ``n`` on the cube ``center + [-r, r]^d``.

        Output shape is ``batch_shape + (2r+1,)*d``, axis k indexing coordinate k.
        """
        d = len(center)
        # open (broadcastable) axes: the hash runs stage by stage on growing shapes
        coords = [
            np.arange(c - r, c + r + 1).reshape((1,) * k + (-1,) + (1,) * (d - k - 1))
            for k, c in enumerate(center)
        ]
        return self.at(n, coords)


@dataclass(frozen=True)
class TiltedField:
    """The field under the path-tilted measure: on ``(n, path[n])`` the value is
    drawn from the beta-exponentially tilted law, elsewhere it is unchanged.

    The same uniforms are reused, so the tilted and plain fields are coupled.
    """

    base: EnvironmentField
    beta: float
    path: np.ndarray  # (T+1, d), path[0] is the starting point

    def __post_init__(self):
        cumulants(self.base.law, self.beta)  # domain check

    @property
    def law(self):
        return self.base.law

    @property
    def batch_shape(self):
        return self.base.batch_shape

    def at(self, n, coords) -> np.ndarray:
        self.base._check(n, coords)
        u = self.base.uniforms(n, coords)
        plain = self.base._values(u)
        n_arr = np.asarray(n)
        path = np.asarray(self.path)
        if np.any(n_arr >= len(path)):
            raise ValueError("path shorter than the queried time")
        site = path[n_arr]
        on = n_arr >= 1
        for k, c in enumerate(coords):
            on = on & (np.asarray(c) == site[..., k])
        if not np.any(on):
            return plain
        tilted = self.base._values(u, self.beta)
        return np.where(on, tilted, plain)

    def grid(self, n: int, center, r: int) -> np.ndarray:
        d = len(center)
        # open (broadcastable) axes: the hash runs stage by stage on growing shapes
        coords = [
            np.arange(c - r, c + r + 1).reshape((1,) * k + (-1,) + (1,) * (d - k - 1))
            for k, c in enumerate(center)
        ]
        return self.at(n, coords)


@dataclass(frozen=True)
class ShiftedField:
    """Space-time translate: ``(theta w)_{n, x} = w_{n + dt, x + dx}``."""

    base: object
    dt: int
    dx: tuple

    @property
    def law(self):
        return self.base.law

    @property
    def batch_shape(self):
        return self.base.batch_shape

    def at(self, n, coords):
        return self.base.at(np.asarray(n) + self.dt, [np.asarray(c) + s for c, s in zip(coords, self.dx)])

    def grid(self, n, center, r):
        return self.base.grid(n + self.dt, [c + s for c, s in zip(center, self.dx)], r)


def omega_at(env, n, x):
    """Value of the environment at time ``n``, site ``x`` (a length-d sequence)."""
    return env.at(n, [np.asarray(c) for c in x])


def tilted_omega_at(env: EnvironmentField, beta: float, path, n, x):
    """Value at ``(n, x)`` under the tilt by the Boltzmann weight of ``path``."""
    return TiltedField(env, beta, np.asarray(path)).at(n, [np.asarray(c) for c in x])
