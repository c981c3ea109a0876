"""Experiment driver.

    python -m polymerlab free-energy --beta 1.0 --N 256 --samples 200 --seed 7
    python -m polymerlab second-moment --config run.cfg --output out/sm
    python -m polymerlab resume out/sm.ckpt.json

Config files are flat ``key = value`` text; flags override file values.  A
run is a pure function of its config: sample i always uses field seed
``sample_seed(seed, i)``, samples are processed in chunks of fixed size, and
the per-chunk (count, mean, M2) aggregates are merged in chunk order, so the
CSV does not depend on the worker count or on interruptions.

Every run writes ``<output>.csv`` and ``<output>.json``; Monte Carlo runs
also keep ``<output>.ckpt.json`` for ``resume``.  ``free-energy`` adds
``<output>.samples.csv`` with one row per (sample, beta).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .disorder import DisorderLaw, EnvironmentField, cumulants, gamma, sample_seed
from .kernel import local_clt_scan_2d, mean_local_time_2d, restricted_local_time_2d
from .partition import (
    ConfigError,
    _resolve_radius,
    coarse_grained_partitions,
    free_energy_pass,
    SAMPLE_HEADER,
    log_partition_fast,
    reachable_labels,
    sample_rows,
    truncation_radius,
)
from .replica import ScaleUnreachable, choose_scale_N, two_replica_exponential_moment

__all__ = [
    "ExperimentConfig",
    "CheckpointError",
    "COMMANDS",
    "parse_beta_grid",
    "load_config_file",
    "config_hash",
    "run",
    "resume",
    "main",
]

VERSION = "polymerlab 0.1.0"
SUMMARY_SCHEMA = 1
CHECKPOINT_FORMAT = 1
WORKERS_ENV = "POLYMERLAB_WORKERS"

EXIT_OK, EXIT_ERROR, EXIT_INCOMPLETE = 0, 2, 3

SAMPLED = ("free-energy", "overlap", "second-moment", "fractional-moment", "x-statistic", "w-statistic")
EXACT = ("kernel-table", "lemma-scan", "scale-table")
COMMANDS = SAMPLED + EXACT

# keys that change how a run is executed but not what it computes
_RUNTIME_KEYS = ("workers", "output", "checkpoint_every")


class CheckpointError(RuntimeError):
    """Checkpoint unreadable, tampered with, or written for another config."""


@dataclass
class ExperimentConfig:
    command: str
    law: str = "gaussian"
    beta: str = "1.0"
    d: int = 2
    N: int = 16
    radius: int = 0
    samples: int = 100
    seed: int = 0
    chunk: int = 50
    workers: int = 1
    output: str = "polymerlab_out"
    checkpoint_every: int = 10
    ell: int = 16
    q: int = 1
    u: int = 4
    eps: float = 0.05
    R: int = 1
    K: float = 2.0
    m: int = 1
    T: int = 60
    cap: int = 10_000_000

    @property
    def betas(self) -> list:
        return parse_beta_grid(self.beta)

    @property
    def plan(self):
        from .cgcm import CoarseGrainPlan

        return CoarseGrainPlan(self.ell, self.q, self.u, self.eps, self.R, self.K, self.m)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def _cast(key: str, value):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(_FIELDS))}")
    kind = _FIELDS[key].type
    try:
        if kind == "int":
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        return _CASTS[kind](value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} expects {kind}, got {value!r}") from None


def parse_beta_grid(text) -> list:
    """"1.2" -> [1.2];  "0.5,1.0" -> [0.5, 1.0];  "0.3:1.8:0.1" -> 0.3, 0.4, ..., 1.8."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, h = (float(v) for v in text.split(":"))
            if h <= 0 or b < a:
                raise ValueError
            n = int(math.floor((b - a) / h + 1e-9)) + 1
            return [round(a + i * h, 12) for i in range(n)]
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad beta grid {text!r}: use a number, a comma list, or start:stop:step") from None


def load_config_file(path: str) -> dict:
    """Read ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            k = k.replace("-", "_")
            out[k] = _cast(k, v)
    return out


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}; choose from {', '.join(COMMANDS)}")
    DisorderLaw.parse(cfg.law)
    betas = cfg.betas
    if any(not math.isfinite(b) or b < 0 for b in betas):
        raise ConfigError("beta values must be finite and >= 0")
    if cfg.command not in ("free-energy", "scale-table") and len(betas) != 1:
        raise ConfigError(f"{cfg.command} takes a single beta, got {len(betas)} values")
    for key in ("samples", "chunk", "workers", "T", "cap"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be >= 1, got {getattr(cfg, key)}")
    if cfg.N < 0 or cfg.radius < 0 or cfg.checkpoint_every < 0:
        raise ConfigError("N, radius and checkpoint_every must be >= 0")
    if cfg.command in ("x-statistic", "w-statistic", "fractional-moment"):
        cfg.plan  # raises ConfigError on a bad plan
        if cfg.d != 2:
            raise ConfigError("coarse-graining statistics are implemented for d = 2 only")
    if cfg.command in ("free-energy", "overlap", "second-moment"):
        for b in betas:
            N = resolve_N(cfg, b)
            _resolve_radius(N, _radius(cfg, N))
    return cfg


def resolve_N(cfg: ExperimentConfig, beta: float) -> int:
    """``N = 0`` asks for the scale N_{beta, eps} = ceil(exp((1 - eps) pi / beta^2))."""
    if cfg.N > 0:
        return cfg.N
    return choose_scale_N(beta, cfg.eps, cfg.cap)


def config_hash(cfg: ExperimentConfig) -> str:
    payload = {k: v for k, v in cfg.to_dict().items() if k not in _RUNTIME_KEYS}
    blob = json.dumps({"version": VERSION, "config": payload}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- statistics


def _chunk_aggregate(values: np.ndarray):
    """(count, mean, M2) of the rows of ``values`` (samples x statistics)."""
    n = values.shape[0]
    mean = values.mean(axis=0)
    m2 = ((values - mean) ** 2).sum(axis=0)
    return n, mean, m2


def _merge(a, b):
    """Parallel-variance update of two (count, mean, M2) aggregates."""
    na, ma, sa = a
    nb, mb, sb = b
    if na == 0:
        return b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), sa + sb + delta * delta * (na * nb / n)


def _finish(agg):
    n, mean, m2 = agg
    var = m2 / (n - 1) if n > 1 else np.zeros_like(m2)
    return mean, var, np.sqrt(var / n)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: str, header: list, rows: list):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")
    os.replace(tmp, path)


def _write_json(path: str, obj: dict):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    os.replace(tmp, path)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


# ------------------------------------------------------- per-command samples


def _env(cfg, idx, N, radius):
    return EnvironmentField(DisorderLaw.parse(cfg.law), sample_seed(cfg.seed, idx), N, radius, d=cfg.d)


def _radius(cfg, N):
    """Configured truncation radius; 0 selects ceil(5 sqrt(N)) (exact when that reaches N)."""
    return cfg.radius or min(truncation_radius(N), N)


def _labels(cfg):
    plan = cfg.plan
    return sorted(tuple(Y) for Y in _all_coarse_trajectories(plan.ell, plan.m))


def _all_coarse_trajectories(ell, m):
    out = [()]
    for i in range(1, m + 1):
        out = [Y + (y,) for Y in out for y in reachable_labels(ell, i)]
    return out


def statistic_names(cfg: ExperimentConfig) -> list:
    c = cfg.command
    if c == "free-energy":
        return [f"{s}[beta={b!r}]" for b in cfg.betas for s in ("logZhat_over_N", "overlap_gap")]
    if c == "overlap":
        return [f"o_{k}" for k in range(1, resolve_N(cfg, cfg.betas[0]) + 1)]
    if c == "second-moment":
        return ["Zhat", "Zhat_sq", "Zhat_ge_half"]
    if c == "x-statistic":
        return ["X", "X_sq", "X_tail"]
    if c == "w-statistic":
        return ["W"]
    if c == "fractional-moment":
        names = ["sqrt_Zhat", "sum_sqrt_ZY"]
        for Y in _labels(cfg):
            key = ";".join(f"{a}:{b}" for a, b in Y)
            names += [f"sqrt_ZY[{key}]", f"g_inv[{key}]", f"g_ZY[{key}]"]
        return names
    raise ConfigError(f"{c} has no sampled statistics")


def compute_chunk(cfg: ExperimentConfig, start: int, stop: int) -> np.ndarray:
    """Per-sample statistics for samples start..stop-1, shape (stop-start, k)."""
    return _compute(cfg, start, stop)[0]


def _compute(cfg: ExperimentConfig, start: int, stop: int):
    """``(statistics, per-sample CSV rows)``; rows are only produced by free-energy."""
    idx = np.arange(start, stop)
    c = cfg.command
    if c == "free-energy":
        cols, rows = [], []
        for b in cfg.betas:
            N = resolve_N(cfg, b)
            env = _env(cfg, idx, N, N)
            logz, o = free_energy_pass(env, b, N, _radius(cfg, N))
            lam = cumulants(env.law, b).lambda_
            cols += [logz / N, lam * o.mean(axis=-1)]
            rows += sample_rows(sample_seed(cfg.seed, idx), idx, N, b, logz)
        return np.stack(cols, axis=-1), rows
    return _compute_stats(cfg, idx), []


def _compute_stats(cfg: ExperimentConfig, idx: np.ndarray) -> np.ndarray:
    c = cfg.command
    if c == "overlap":
        b = cfg.betas[0]
        N = resolve_N(cfg, b)
        _, o = free_energy_pass(_env(cfg, idx, N, N), b, N, _radius(cfg, N))
        return o
    if c == "second-moment":
        b = cfg.betas[0]
        N = resolve_N(cfg, b)
        logz = log_partition_fast(_env(cfg, idx, N, N), b, N, _radius(cfg, N))
        z = np.exp(logz)
        return np.stack([z, z * z, (logz >= -math.log(2.0)).astype(float)], axis=-1)
    from .cgcm import counter_walks, w_statistic, x_statistic

    plan = cfg.plan
    if c == "x-statistic":
        env = _env(cfg, idx, plan.ell, plan.box_radius)
        x = x_statistic(env, plan)
        return np.stack([x, x * x, (x >= plan.threshold).astype(float)], axis=-1)
    if c == "w-statistic":
        walks = counter_walks(sample_seed(cfg.seed, idx), plan.ell)
        return w_statistic(walks, plan)[:, None]
    if c == "fractional-moment":
        return _fractional_chunk(cfg, idx)
    raise ConfigError(f"{c} has no sampled statistics")


def _fractional_chunk(cfg, idx):
    from .cgcm import x_statistic

    plan = cfg.plan
    b = cfg.betas[0]
    N = plan.m * plan.ell
    labels = _labels(cfg)
    far = max(abs(c) for Y in labels for y in Y for c in y)
    env = _env(cfg, idx, N, N + (far + plan.R + 1) * plan.side)
    zy = coarse_grained_partitions(env, b, plan.ell, plan.m)
    g_cache = {}
    cols_z, cols = [], []
    for Y in labels:
        g = np.ones(len(idx))
        prev = (0, 0)
        for i, y in enumerate(Y, start=1):
            if (i, prev) not in g_cache:
                x = x_statistic(env, plan, i, prev)
                g_cache[(i, prev)] = np.where(x >= plan.threshold, math.exp(-plan.K), 1.0)
            g = g * g_cache[(i, prev)]
            prev = y
        z = zy[Y]
        cols_z.append(z)
        cols += [np.sqrt(z), 1.0 / g, g * z]
    zhat = np.sum(cols_z, axis=0)
    ssum = np.sum([np.sqrt(z) for z in cols_z], axis=0)
    return np.stack([np.sqrt(zhat), ssum] + cols, axis=-1)


def _chunk_task(args):
    cfg_dict, start, stop = args
    values, rows = _compute(ExperimentConfig(**cfg_dict), start, stop)
    return _chunk_aggregate(values), rows


# ------------------------------------------------------------ checkpointing


def checkpoint_path(cfg: ExperimentConfig) -> str:
    return cfg.output + ".ckpt.json"


def _rows_dir(cfg: ExperimentConfig) -> str:
    return cfg.output + ".samples.d"


def _write_chunk_rows(cfg, i: int, rows: list):
    """Per-sample rows of chunk i, kept beside the checkpoint until the run ends."""
    os.makedirs(_rows_dir(cfg), exist_ok=True)
    _write_csv(os.path.join(_rows_dir(cfg), f"chunk_{i:06d}.csv"), SAMPLE_HEADER, rows)


def _join_chunk_rows(cfg, total: int):
    """Concatenate the chunk files in chunk order into PREFIX.samples.csv."""
    d = _rows_dir(cfg)
    if not os.path.isdir(d):
        return
    tmp = cfg.output + ".samples.csv.tmp"
    with open(tmp, "w") as out:
        out.write(",".join(SAMPLE_HEADER) + "\n")
        for i in range(total):
            with open(os.path.join(d, f"chunk_{i:06d}.csv")) as fh:
                next(fh)
                out.writelines(fh)
    os.replace(tmp, cfg.output + ".samples.csv")
    shutil.rmtree(d)


def _digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def write_checkpoint(cfg, next_chunk, total, agg):
    n, mean, m2 = agg
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": VERSION,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "next_chunk": next_chunk,
        "total_chunks": total,
        "next_sample": min(next_chunk * cfg.chunk, cfg.samples),
        "count": int(n),
        "mean": [float(v) for v in np.atleast_1d(mean)],
        "M2": [float(v) for v in np.atleast_1d(m2)],
    }
    _write_json(checkpoint_path(cfg), {"body": body, "digest": _digest(body)})


def read_checkpoint(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
        body, digest = raw["body"], raw["digest"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if _digest(body) != digest:
        raise CheckpointError(f"checkpoint {path} is corrupt: content digest does not match")
    if body.get("format") != CHECKPOINT_FORMAT or body.get("version") != VERSION:
        raise CheckpointError(
            f"checkpoint {path} was written by {body.get('version')!r} format {body.get('format')}, "
            f"this is {VERSION!r} format {CHECKPOINT_FORMAT}"
        )
    try:
        cfg = ExperimentConfig(**body["config"])
    except TypeError as exc:
        raise CheckpointError(f"checkpoint {path} holds an invalid config: {exc}") from None
    if config_hash(cfg) != body["config_hash"]:
        raise CheckpointError(f"checkpoint {path}: stored config does not match its hash")
    body["cfg"] = cfg
    return body


# ------------------------------------------------------------------ running


def _workers(cfg) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            w = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if w < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1")
        return w
    return cfg.workers


def _sampled(cfg, start_chunk, agg, max_chunks, t0):
    names = statistic_names(cfg)
    total = -(-cfg.samples // cfg.chunk)
    if agg is None:
        agg = (0, np.zeros(len(names)), np.zeros(len(names)))
    workers = _workers(cfg)
    group = cfg.checkpoint_every or total
    done_here = 0
    nxt = start_chunk
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while nxt < total:
            room = group if max_chunks is None else min(group, max_chunks - done_here)
            if room <= 0:
                break
            batch = range(nxt, min(total, nxt + room))
            tasks = [(cfg.to_dict(), i * cfg.chunk, min(cfg.samples, (i + 1) * cfg.chunk)) for i in batch]
            results = pool.map(_chunk_task, tasks) if pool else map(_chunk_task, tasks)
            for i, (r, rows) in zip(batch, results):  # map preserves chunk order
                agg = _merge(agg, r)
                if rows:
                    _write_chunk_rows(cfg, i, rows)
            nxt = batch.stop
            done_here += len(batch)
            write_checkpoint(cfg, nxt, total, agg)
    finally:
        if pool:
            pool.shutdown()
    if nxt < total:
        print(f"stopped after chunk {nxt} of {total}; resume with: resume {checkpoint_path(cfg)}",
              file=sys.stderr)
        return EXIT_INCOMPLETE
    _join_chunk_rows(cfg, total)
    _emit_sampled(cfg, names, agg, time.perf_counter() - t0)
    return EXIT_OK


def _emit_sampled(cfg, names, agg, wall):
    mean, var, se = _finish(agg)
    n = agg[0]
    stats = {k: {"count": n, "mean": mean[i], "variance": var[i], "stderr": se[i]} for i, k in enumerate(names)}
    extra = {}
    c = cfg.command
    if c == "free-energy":
        header = ["beta", "N", "mean_logZhat_over_N", "stderr", "gap_upper_bound",
                  "overlap_gap_estimate", "overlap_gap_stderr", "samples"]
        rows = []
        for j, b in enumerate(cfg.betas):
            f, g = 2 * j, 2 * j + 1
            rows.append([b, resolve_N(cfg, b), mean[f], se[f], -mean[f], mean[g], se[g], n])
    elif c == "overlap":
        header = ["k", "o_k", "stderr", "samples"]
        rows = [[k + 1, mean[k], se[k], n] for k in range(len(names))]
        lam = cumulants(DisorderLaw.parse(cfg.law), cfg.betas[0]).lambda_
        extra["overlap_gap_estimate"] = lam * float(np.mean(mean))
    else:
        refs = _references(cfg)
        header = ["statistic", "mean", "stderr", "samples", "reference", "reference_kind"]
        rows = []
        for i, k in enumerate(names):
            ref, kind = refs.get(k, (None, ""))
            rows.append([k, mean[i], se[i], n, "" if ref is None else ref, kind])
            if ref is not None:
                stats[k]["reference"] = ref
                stats[k]["reference_kind"] = kind
                if kind == "exact" and se[i] > 0:
                    stats[k]["z_score"] = (mean[i] - ref) / se[i]
        if c == "fractional-moment":
            extra["target_2_pow_minus_m"] = 2.0 ** -cfg.m
    _write_csv(cfg.output + ".csv", header, rows)
    _write_summary(cfg, stats, extra, wall)


def _references(cfg) -> dict:
    c = cfg.command
    law = DisorderLaw.parse(cfg.law)
    if c == "second-moment":
        b = cfg.betas[0]
        second = two_replica_exponential_moment(gamma(law, b), resolve_N(cfg, b), d=cfg.d, cap=cfg.cap)
        return {"Zhat": (1.0, "exact"), "Zhat_sq": (second, "exact"),
                "Zhat_ge_half": (1.0 / (4 * second), "lower_bound")}
    if c == "x-statistic":
        from .cgcm import x_second_moment_exact

        plan = cfg.plan
        return {"X": (0.0, "exact"), "X_sq": (x_second_moment_exact(plan), "exact"),
                "X_tail": (math.exp(-2 * plan.K ** 2), "target_upper")}
    if c == "w-statistic":
        from .cgcm import expected_w

        return {"W": (expected_w(cfg.plan), "exact")}
    return {}


def _write_summary(cfg, stats, extra, wall):
    _write_json(cfg.output + ".json", {
        "schema_version": SUMMARY_SCHEMA,
        "version": VERSION,
        "command": cfg.command,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "statistics": stats,
        "extra": extra,
        "wall_time_s": wall,
    })


def _exact(cfg, t0):
    c = cfg.command
    stats, extra = {}, {}
    if c == "kernel-table":
        D = mean_local_time_2d(cfg.T)
        Dh = restricted_local_time_2d(cfg.T)
        header = ["N", "D", "Dhat", "pi_D_over_logN"]
        rows = [[N, D[N], Dh[N], math.pi * D[N] / math.log(N)] for N in range(2, cfg.T + 1)]
        stats = {"D_T": {"value": D[cfg.T], "stderr": 0.0}, "Dhat_T": {"value": Dh[cfg.T], "stderr": 0.0}}
    elif c == "scale-table":
        header = ["beta", "eps", "log_N_required", "N", "reachable"]
        rows = []
        for b in cfg.betas:
            logn = (1 - cfg.eps) * math.pi / b ** 2
            try:
                rows.append([b, cfg.eps, logn, choose_scale_N(b, cfg.eps, cfg.cap), True])
            except ScaleUnreachable as exc:
                rows.append([b, cfg.eps, logn, "", False])
                print(f"beta={b}: {exc}", file=sys.stderr)
        extra["cap"] = cfg.cap
    elif c == "lemma-scan":
        from .oracle import binomial_ratio_scan, reduction_to_1d_check

        T = cfg.T
        lem = binomial_ratio_scan(min(T, 200))
        red = reduction_to_1d_check(min(T, 50))
        T_clt = max(T, 2000)
        c_all = local_clt_scan_2d(T_clt)
        c_pos = local_clt_scan_2d(T_clt, t_min=1)
        header = ["scan", "extremum", "location", "violations"]
        rows = [
            ["binomial_ratio", lem.extremum, _loc(lem.location), lem.violations],
            ["stirling_second_line", lem.extra["max_second_line"], _loc(lem.extra["max_second_line_at"]),
             lem.violations],
            ["rotation_factorization", red.extremum, _loc(red.location), red.violations],
            ["local_clt_t_ge_0", c_all[0], c_all[1], c_all[2]],
            ["local_clt_t_ge_1", c_pos[0], c_pos[1], c_pos[2]],
        ]
        extra = {"binomial_ratio": json.loads(lem.to_json()), "rotation": json.loads(red.to_json()),
                 "local_clt_T": T_clt}
    else:
        raise ConfigError(f"{c} is not an exact command")
    _write_csv(cfg.output + ".csv", header, rows)
    _write_summary(cfg, stats, extra, time.perf_counter() - t0)
    return EXIT_OK


def _loc(loc) -> str:
    return "" if loc is None else " ".join(str(v) for v in loc)


def _prepare_output(cfg):
    parent = os.path.dirname(os.path.abspath(cfg.output))
    os.makedirs(parent, exist_ok=True)


def run(cfg: ExperimentConfig, max_chunks: Optional[int] = None) -> int:
    """Run from scratch; ``max_chunks`` stops early (for interruption tests)."""
    validate(cfg)
    _prepare_output(cfg)
    t0 = time.perf_counter()
    if cfg.command in EXACT:
        return _exact(cfg, t0)
    ck = checkpoint_path(cfg)
    if os.path.exists(ck):
        os.remove(ck)
    shutil.rmtree(_rows_dir(cfg), ignore_errors=True)
    return _sampled(cfg, 0, None, max_chunks, t0)


def resume(path: str, max_chunks: Optional[int] = None, expected: Optional[ExperimentConfig] = None,
           workers: Optional[int] = None) -> int:
    """Continue the run stored in checkpoint ``path``.

    ``expected`` (optional) must hash to the checkpoint's config hash.  A
    completed run is left untouched.
    """
    body = read_checkpoint(path)
    cfg = body["cfg"]
    if expected is not None and config_hash(expected) != body["config_hash"]:
        raise CheckpointError("config hash mismatch: the checkpoint belongs to a different experiment")
    if workers is not None:
        cfg.workers = workers
    validate(cfg)
    cfg.output = path[: -len(".ckpt.json")] if path.endswith(".ckpt.json") else cfg.output
    done = body["next_chunk"] >= body["total_chunks"]
    if done and os.path.exists(cfg.output + ".csv"):
        return EXIT_OK
    agg = (body["count"], np.array(body["mean"], dtype=float), np.array(body["M2"], dtype=float))
    return _sampled(cfg, body["next_chunk"], agg, max_chunks, time.perf_counter())


# ---------------------------------------------------------------------- argv


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polymerlab", description="Directed polymer experiments in d = 1+2.")
    p.add_argument("command", choices=COMMANDS + ("resume",))
    p.add_argument("checkpoint", nargs="?", help="checkpoint file (resume only)")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--max-chunks", type=int, default=None, help="stop after this many chunks")
    for name, f in _FIELDS.items():
        if name == "command":
            continue
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, default=None, help=f"{f.type} (default {f.default!r})")
        if name == "beta":
            p.add_argument("--beta-grid", dest=name, default=None, help="alias of --beta")
    return p


def config_from_args(ns) -> ExperimentConfig:
    values = load_config_file(ns.config) if ns.config else {}
    values.pop("command", None)
    for name in _FIELDS:
        if name != "command" and getattr(ns, name, None) is not None:
            values[name] = _cast(name, getattr(ns, name))
    return ExperimentConfig(command=ns.command, **values)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "resume":
            if not ns.checkpoint:
                raise ConfigError("resume needs a checkpoint path")
            expected = None
            if ns.config:
                ns.command = load_config_file(ns.config).get("command") or read_checkpoint(ns.checkpoint)["cfg"].command
                expected = config_from_args(ns)
            workers = _cast("workers", ns.workers) if ns.workers is not None else None
            return resume(ns.checkpoint, ns.max_chunks, expected, workers)
        return run(config_from_args(ns), ns.max_chunks)
    except (ConfigError, CheckpointError, ScaleUnreachable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
