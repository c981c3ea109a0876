"""Compiled forward pass for plain d = 2 environments.

The numpy transfer step spends most of its time materialising hash and
inverse-CDF temporaries.  This kernel fuses hash -> uniform -> law -> weight
update per site.  It reproduces the field of ``EnvironmentField`` bit for bit
(same hash, same scipy ``ndtri``); the DP arithmetic agrees with the numpy
path to rounding.
"""
from __future__ import annotations

import ctypes
import math

import numpy as np
from numba import njit
from numba.extending import get_cython_function_address

_ndtri_addr = get_cython_function_address("scipy.special.cython_special", "ndtri")
_ndtri = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double, ctypes.c_int)(_ndtri_addr)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_KEY_N = np.uint64(0xD6E8FEB86659FD93)
_KEY_X1 = np.uint64(0xA0761D6478BD642F)
_KEY_X2 = np.uint64(0xE7037ED1A0B428DB)
_OFFSET = 1 << 40

LAW_GAUSSIAN, LAW_TWO_POINT = 0, 1


@njit(cache=True)
def _mix(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    x = x ^ (x >> np.uint64(31))
    return x


@njit(cache=True)
def _enc(c):
    return np.uint64(c + _OFFSET)


@njit
def _value(h, kind, p_first, a_val, b_val, trunc):
    u = (np.float64(h >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
    if kind == LAW_GAUSSIAN:
        w = _ndtri(u, 0)
    elif u < p_first:
        w = a_val
    else:
        w = b_val
    if abs(w) > trunc:
        w = 0.0
    return w


@njit
def forward_2d(seeds, N, R, beta, lam, kind, p_first, a_val, b_val, trunc, with_overlap):
    """log Zhat_N per seed and, if asked, the overlaps o_1..o_N."""
    S = seeds.shape[0]
    logz = np.empty(S)
    over = np.zeros((S, N))
    side = 2 * R + 5
    c = R + 2
    for s in range(S):
        w = np.zeros((side, side))
        nw = np.zeros((side, side))
        w[c, c] = 1.0
        lognorm = 0.0
        h0 = _mix(seeds[s] + _GOLDEN)
        for n in range(1, N + 1):
            if with_overlap:
                ap = min(n - 1, R)
                tot = 0.0
                for i in range(c - ap, c + ap + 1):
                    for j in range(c - ap, c + ap + 1):
                        tot += w[i, j]
                o = 0.0
                for i in range(c - ap - 1, c + ap + 2):
                    for j in range(c - ap - 1, c + ap + 2):
                        v = ((w[i - 1, j] + w[i + 1, j]) + w[i, j - 1] + w[i, j + 1]) / tot * 0.25
                        o += v * v
                over[s, n - 1] = o
            a = min(n, R)
            h1 = _mix(h0 ^ (_enc(n) * _KEY_N))
            m = 0.0
            for i in range(c - a, c + a + 1):
                h2 = _mix(h1 ^ (_enc(i - c) * _KEY_X1))
                for j in range(c - a, c + a + 1):
                    nb = ((w[i - 1, j] + w[i + 1, j]) + w[i, j - 1] + w[i, j + 1]) * 0.25
                    if beta != 0.0:
                        om = _value(_mix(h2 ^ (_enc(j - c) * _KEY_X2)), kind, p_first, a_val, b_val, trunc)
                        nb *= math.exp(beta * om - lam)
                    nw[i, j] = nb
                    if nb > m:
                        m = nb
            w, nw = nw, w
            if m > 0.0 and (m < 0.5 or m > 2.0):
                for i in range(c - a, c + a + 1):
                    for j in range(c - a, c + a + 1):
                        w[i, j] /= m
                lognorm += math.log(m)
        tot = 0.0
        for i in range(side):
            for j in range(side):
                tot += w[i, j]
        logz[s] = math.log(tot) + lognorm
    return logz, over


def eligible(env, rescale: str = "auto") -> bool:
    from .disorder import EnvironmentField

    return type(env) is EnvironmentField and env.d == 2 and rescale == "auto"


def fast_forward(env, beta: float, lam: float, N: int, R: int, with_overlap: bool):
    """Run ``forward_2d`` on an eligible field; outputs carry the env batch shape."""
    if N > env.N or R > env.radius:
        raise IndexError(f"pass needs N={N}, radius {R}; field covers N={env.N}, radius {env.radius}")
    law = env.law
    if law.kind == "gaussian":
        kind, p_first, a_val, b_val = LAW_GAUSSIAN, 0.0, 0.0, 0.0
    else:
        kind, p_first = LAW_TWO_POINT, law._p_first(0.0)
        a_val, b_val = law.atoms
    trunc = env.truncation if env.truncation is not None else math.inf
    seeds = np.ascontiguousarray(np.asarray(env._seeds, dtype=np.uint64).reshape(-1))
    logz, over = forward_2d(seeds, N, R, float(beta), float(lam), kind, p_first,
                            float(a_val), float(b_val), float(trunc), with_overlap)
    shape = env.batch_shape
    return logz.reshape(shape), over.reshape(shape + (N,))
