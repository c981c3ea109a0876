import contextlib
import json
import math

import numpy as np
import pytest

from polymerlab.cgcm import (
    CoarseGrainPlan,
    path_tuple_sum,
    sample_walks,
    x_second_moment_exact,
    x_statistic,
)
from polymerlab.disorder import DisorderLaw, EnvironmentField, gamma, sample_seed
from polymerlab.kernel import build_kernel_table, local_clt_constant, local_clt_scan_2d
from polymerlab.oracle import (
    binomial_ratio_scan,
    desperate_tail_check,
    enumerate_pair_second_moment,
    enumerate_path_tuple_sum,
    enumerate_paths_partition,
    enumerate_x_second_moment,
    enumerate_x_statistic,
    reduction_to_1d_check,
    walk_positions,
)
from polymerlab.partition import log_partition
from polymerlab.replica import two_replica_exponential_moment


def test_walk_positions_count():
    pos = walk_positions(3, 2)
    assert pos.shape == (64, 3, 2)
    assert np.all(np.abs(np.diff(pos, axis=1)).sum(-1) == 1)


def test_path_oracle_examples():
    env = EnvironmentField(DisorderLaw(), sample_seed(0, np.arange(3)), 6, 6)
    assert np.allclose(enumerate_paths_partition(env, 0.0, 6), 1.0)
    lz, _ = log_partition(env, 0.7, 1)
    assert np.allclose(np.log(enumerate_paths_partition(env, 0.7, 1)), lz, atol=1e-14)
    with pytest.raises(ValueError):
        enumerate_paths_partition(env, 0.7, 9)


def test_pair_oracle_examples():
    law = DisorderLaw()
    g = gamma(law, 0.6)
    assert enumerate_pair_second_moment(0.6, 1, law) == pytest.approx(0.75 + 0.25 * math.exp(g), abs=1e-14)
    assert enumerate_pair_second_moment(0.0, 4, law) == pytest.approx(1.0, abs=1e-14)
    for N in range(1, 7):
        assert enumerate_pair_second_moment(0.6, N, law) == pytest.approx(
            two_replica_exponential_moment(g, N), abs=1e-10
        )


def test_binomial_ratio_scan():
    rep = binomial_ratio_scan(60)
    assert math.isfinite(rep.extremum) and rep.extremum > 0
    assert rep.violations == 0
    assert rep.extra["max_second_line"] <= 1 + 1e-12
    json.loads(rep.to_json())


def test_binomial_ratio_scan_empty_region():
    rep = binomial_ratio_scan(2)
    assert rep.grid["points"] == 0 and rep.violations == 0


def test_binomial_ratio_max_shrinks_with_region():
    full = binomial_ratio_scan(40)
    inner = binomial_ratio_scan(40, lo=0.3, hi=0.7)
    assert inner.extremum <= full.extremum


def test_rotation_factorisation():
    rep = reduction_to_1d_check(50)
    assert rep.extremum <= 1e-12 and rep.violations == 0


def test_local_clt_routes_agree():
    table = build_kernel_table(2, 80)
    for tmin in (0, 1, 2, 5):
        assert local_clt_scan_2d(80, tmin)[0] == pytest.approx(local_clt_constant(table, 80, tmin), abs=1e-15)


def test_desperate_check_gaussian_skipped():
    rep = desperate_tail_check(DisorderLaw(), 1.0, 8, [1.0])
    assert "skipped" in rep.extra


def test_desperate_check_bernoulli():
    rep = desperate_tail_check(DisorderLaw("shifted-bernoulli", 0.3), 1.0, 16, [0.5, 3.0, 50.0, 1000.0],
                               samples=2000, seed=1)
    rows = {r["v"]: r for r in rep.extra["rows"]}
    assert rep.violations == 0
    assert rows[0.5]["vacuous"] and rows[3.0]["vacuous"]
    # v huge: both sides near zero
    assert rows[1000.0]["frequency"] == 0.0 and rows[1000.0]["bound"] < 1e-100


TINY = [(4, 1, 1), (4, 1, 2), (4, 1, 3), (4, 2, 2), (4, 2, 3)]


@pytest.mark.parametrize("ell,q,u", TINY)
def test_x_contraction_matches_enumeration(ell, q, u):
    with pytest.warns(UserWarning) if ell // 2 + q * u > ell else contextlib.nullcontext():
        plan = CoarseGrainPlan(ell, q, u)
    env = EnvironmentField(DisorderLaw(), sample_seed(7, np.arange(4)), ell, plan.box_radius)
    assert np.max(np.abs(x_statistic(env, plan) - enumerate_x_statistic(env, plan))) <= 1e-12
    assert x_second_moment_exact(plan) == pytest.approx(enumerate_x_second_moment(plan), abs=1e-12)


@pytest.mark.parametrize("q,u", [(1, 2), (1, 3), (2, 2), (2, 3)])
def test_path_tuple_sums_match_enumeration(q, u):
    plan = CoarseGrainPlan(16, q, u)
    for S in sample_walks(3, 4, 16):
        for lo, hi, box in [(1, 16, False), (1, 8, False), (3, 3, False), (1, 16, True)]:
            a = path_tuple_sum(S, plan, lo, hi, box)
            b = enumerate_path_tuple_sum(S, plan, lo, hi, box)
            assert a == pytest.approx(b, abs=1e-12)

