import math

import numpy as np
import pytest

from polymerlab.kernel import (
    ResourceError,
    build_kernel_table,
    kernel_1d,
    local_clt_constant,
    local_clt_scan_2d,
    mean_local_time,
    mean_local_time_2d,
    restricted_local_time,
    restricted_local_time_2d,
    return_probability_2d,
    rho,
)
from polymerlab.oracle import walk_positions


@pytest.fixture(scope="module")
def table():
    return build_kernel_table(2, 60)


def test_one_and_two_step_values(table):
    assert table.p(1, (1, 0)) == 0.25
    assert table.p(1, (0, 0)) == 0.0
    assert table.p(2, (0, 0)) == 0.25


def test_kernel_matches_path_enumeration():
    for t in range(1, 6):
        pos = walk_positions(t, 2)[:, -1, :]
        tab = build_kernel_table(2, t)
        sites, counts = np.unique(pos, axis=0, return_counts=True)
        for x, c in zip(sites, counts):
            assert tab.p(t, x) == pytest.approx(c / 4**t, abs=1e-15)


def test_probability_conservation_parity_symmetry(table):
    for t in range(table.T + 1):
        sl = table.slices[t]
        assert sl.sum() == pytest.approx(1.0, abs=1e-12)
        x1, x2 = np.meshgrid(np.arange(-t, t + 1), np.arange(-t, t + 1), indexing="ij")
        wrong = ((x1 + x2 + t) % 2 == 1) | (np.abs(x1) + np.abs(x2) > t)
        assert np.all(sl[wrong] == 0)
        assert np.array_equal(sl, sl[::-1, :])
        assert np.max(np.abs(sl - sl.T)) <= 1e-16  # equal up to summation order


def test_chapman_kolmogorov(table):
    rng = np.random.default_rng(0)
    for _ in range(20):
        s, t = rng.integers(1, 25, size=2)
        x = rng.integers(-5, 6, size=2)
        total = 0.0
        for z1 in range(-s, s + 1):
            for z2 in range(-s, s + 1):
                total += table.p(s, (z1, z2)) * table.p(t, (x[0] - z1, x[1] - z2))
        assert total == pytest.approx(table.p(s + t, x), abs=1e-12)


def test_budget_refusal():
    with pytest.raises(ResourceError) as e:
        build_kernel_table(2, 5000, budget=10_000)
    assert e.value.required > e.value.budget


def test_one_dimensional_kernel():
    q = kernel_1d(2)
    assert q.tolist() == pytest.approx([0.25, 0, 0.5, 0, 0.25])


def test_mean_local_time_examples(table):
    assert mean_local_time(table, 1) == 0.25
    assert mean_local_time_2d(1)[1] == 0.25
    assert mean_local_time(table, 30, "squares") == pytest.approx(mean_local_time(table, 30), abs=1e-14)


def test_both_forms_of_D_agree_to_500():
    # sum_t p(2t, 0) versus sum_t sum_x p(t, x)^2, the latter via the rotated
    # factorisation sum_x p(t,x)^2 = (sum_a q(t,a)^2)^2
    D = mean_local_time_2d(500)
    squares = np.cumsum([0.0] + [float(np.sum(kernel_1d(t) ** 2)) ** 2 for t in range(1, 501)])
    assert np.max(np.abs(D - squares)) <= 1e-12


def test_return_probability_against_table(table):
    r = return_probability_2d(30)
    for t in range(31):
        assert r[t] == pytest.approx(table.p(2 * t, (0, 0)), abs=1e-15)


def test_D_asymptotics():
    D = mean_local_time_2d(100_000)
    vals = [math.pi * D[N] / math.log(N) for N in (1000, 10_000, 100_000)]
    assert 0.9 <= vals[-1] <= 1.3
    assert vals[0] > vals[1] > vals[2] > 1.0
    assert np.all(np.diff(D) >= 0)


def test_rho_examples():
    assert rho(1) == 0
    assert rho(4) == 2
    assert rho(100) == pytest.approx(10 * math.log(100))
    with pytest.raises(ValueError):
        rho(0)


def test_restricted_local_time(table):
    assert restricted_local_time(table, 1) == 0.0
    Dh = restricted_local_time_2d(1000)
    D = mean_local_time_2d(1000)
    assert np.all(Dh <= D + 1e-15)
    assert np.all(np.diff(Dh) >= 0)
    for u in (2, 5, 17, 40):
        assert restricted_local_time(table, u) == pytest.approx(Dh[u], abs=1e-14)


def test_D_minus_Dhat_bounded():
    D = mean_local_time_2d(10_000)
    Dh = restricted_local_time_2d(10_000)
    gap = D - Dh
    # the window rho(t) swallows the walk's bulk quickly: past u ~ 100 the gap
    # stops moving, so C = sup_u (D - Dhat) is finite (about 0.392)
    assert abs(gap[10_000] - gap[1000]) < 1e-12
    assert abs(gap[1000] - gap[100]) < 1e-9
    assert gap.max() < 0.4


def test_local_clt_constant(table):
    assert local_clt_constant(table, 60) == 1.0
    assert local_clt_constant(table, 60, t_min=1) == pytest.approx(0.75)
    vals = [local_clt_constant(table, 60, t_min=k) for k in range(0, 10)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_local_clt_scan_routes_agree(table):
    for tmin in (0, 1, 3):
        assert local_clt_scan_2d(60, tmin)[0] == pytest.approx(local_clt_constant(table, 60, tmin), abs=1e-15)


def test_local_clt_scan_2000():
    best, where, viol = local_clt_scan_2d(2000)
    assert (best, where, viol) == (1.0, 0, 0)
    best, where, viol = local_clt_scan_2d(2000, t_min=1)
    assert best == pytest.approx(0.75) and where == 2 and viol == 0
