"""Green-function quadrature against an independent Bessel-integral oracle.

The pinned constants below were computed by ``tests/oracles.py`` (product of
modified Bessel functions integrated over time with scipy.quad, absolute
error below 1e-8) and are frozen here so the quadrature route is tested
against numbers it had no hand in producing.
"""

import itertools
import math

import numpy as np
import pytest

from voterperc.green import (
    GreenTable,
    build_table,
    default_resolution,
    displacement_bound,
    green_value,
    heat_kernel,
    hitting_prob,
    spread_out_decay,
    support_size,
    tail_integral,
    validate_kernel_bounds,
)

from oracles import green_nn, heat_kernel_nn, hitting_nn

# d = 3, R = 1 (rate-1 nearest-neighbour walk), Bessel route, ~1e-9 accurate
G3_PINS = {
    (0, 0, 0): 1.516386059,
    (1, 0, 0): 0.516386059,
    (1, 1, 0): 0.331148602,
    (1, 1, 1): 0.261470126,
}
H3_PINS = {
    (1, 0, 0): 0.340537330,
    (2, 0, 0): 0.169703411,
    (3, 0, 0): 0.108989910,
}
TAIL3_T1_ORIGIN = 0.870624430

G4_ORIGIN = 1.239467122
H4_NEIGHBOUR = 0.193201673
G5_ORIGIN = 1.156308125
H5_NEIGHBOUR = 0.135178610

# default table resolutions bound the quadrature accuracy per dimension
TOL = {3: 1e-6, 4: 5e-4, 5: 5e-4}


def test_green_d3_matches_bessel_oracle():
    tab = build_table(3, 1)
    for x, pin in G3_PINS.items():
        assert abs(tab.green(x) - pin) < TOL[3]
        # reported error estimate must dominate the true error
        assert abs(tab.green(x) - pin) < tab.green_error(x)


def test_hitting_d3_matches_bessel_oracle():
    tab = build_table(3, 1)
    for x, pin in H3_PINS.items():
        assert abs(tab.hitting(x) - pin) < TOL[3]
        assert abs(hitting_prob(3, 1, x) - pin) < TOL[3]


def test_green_d4_d5_origin_and_neighbour():
    t4 = build_table(4, 1)
    assert abs(t4.g0 - G4_ORIGIN) < TOL[4]
    assert abs(t4.hitting((1, 0, 0, 0)) - H4_NEIGHBOUR) < TOL[4]
    t5 = build_table(5, 1)
    assert abs(t5.g0 - G5_ORIGIN) < TOL[5]
    assert abs(t5.hitting((1, 0, 0, 0, 0)) - H5_NEIGHBOUR) < TOL[5]


def test_tail_integral_pins_and_limits():
    v, err = tail_integral(3, 1, (0, 0, 0), 1.0)
    assert abs(v - TAIL3_T1_ORIGIN) < TOL[3]
    assert abs(v - TAIL3_T1_ORIGIN) < err
    # T = 0 recovers the Green value, tails decrease in T
    v0, _ = tail_integral(3, 1, (0, 0, 0), 0.0)
    assert abs(v0 - G3_PINS[(0, 0, 0)]) < TOL[3]
    v4, _ = tail_integral(3, 1, (0, 0, 0), 4.0)
    assert v0 > v > v4 > 0
    with pytest.raises(ValueError):
        tail_integral(3, 1, (0, 0, 0), -1.0)


def test_first_step_identity_machine_precision():
    # g(0,0) = 1 + mean_z g(0,z): holds exactly for the midpoint quadrature
    tab = build_table(3, 1)
    assert abs(tab.first_step_residual()) < 1e-10
    assert abs(build_table(4, 1).first_step_residual()) < 1e-10


def test_recurrent_dimensions_rejected():
    for d in (1, 2):
        with pytest.raises(ValueError):
            build_table(d, 1)
        with pytest.raises(ValueError):
            green_value(d, 1, (0,) * d)
    with pytest.raises(ValueError):
        build_table(3, 0)


def test_support_size_matches_enumeration():
    for d, R in [(3, 1), (3, 2), (4, 1), (2, 3)]:
        brute = sum(
            1
            for z in itertools.product(range(-R, R + 1), repeat=d)
            if 0 < sum(abs(c) for c in z) <= R
        )
        assert support_size(d, R) == brute
    assert support_size(3, 1) == 6
    assert support_size(3, 2) == 24


def test_hitting_conventions():
    tab = build_table(3, 1)
    assert hitting_prob(3, 1, (0, 0, 0)) == 1.0
    # symmetric in sign and argument order
    assert tab.hitting((2, -1, 0)) == tab.hitting((-2, 1, 0))
    assert tab.hitting((1, 1, 1), (3, 0, 1)) == tab.hitting((3, 0, 1), (1, 1, 1))
    # beyond the table radius the far bound is returned, and it dominates
    far = tab.hitting((tab.radius + 5, 0, 0))
    assert far == tab.far_bound
    exact = hitting_nn((tab.radius + 5, 0, 0))
    assert exact <= far


def test_hitting_many_matches_scalar_and_far_bound():
    tab = build_table(3, 1)
    seps = np.array([[1, 0, 0], [2, -1, 3], [0, 0, 0], [tab.radius + 2, 0, 0]])
    out = tab.hitting_many(seps)
    for row, v in zip(seps, out):
        assert v == pytest.approx(tab.hitting(tuple(row)))
    assert out[-1] == tab.far_bound


def test_pair_residual_brute_force_and_cap():
    tab = build_table(3, 1)
    rng = np.random.default_rng(7)
    pos = rng.integers(-6, 7, size=(9, 3))
    brute = 0.0
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            brute += tab.hitting(tuple(pos[j] - pos[i]))
    assert tab.pair_residual(pos) == pytest.approx(brute, rel=1e-12)
    capped = tab.pair_residual(pos, cap=brute / 4)
    assert capped > brute / 4


def test_single_point_route_agrees_with_table():
    tab = build_table(3, 1)
    for x in [(5, 3, 2), (0, 0, 7), (10, 10, 10)]:
        v, err = green_value(3, 1, x)
        assert abs(v - tab.green(x)) < 1e-10
        assert abs(v - green_nn(x)) < err


def test_heat_kernel_matches_bessel_product():
    for x, t in [((0, 0, 0), 0.5), ((1, 0, 0), 1.0), ((2, 1, 0), 3.0), ((0, 0, 0), 10.0)]:
        assert abs(heat_kernel(3, 1, x, t) - heat_kernel_nn(x, t)) < 1e-8
    assert heat_kernel(3, 1, (0, 0, 0), 0.0) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        heat_kernel(3, 1, (0, 0, 0), -0.5)


def test_spread_out_sup_hitting_decreases():
    rows = spread_out_decay(3, [1, 2, 4, 8])
    sups = [r["sup_hitting"] for r in rows]
    pins = [0.3405373, 0.1432468, 0.0351328, 0.0059099]
    for s, pin in zip(sups, pins):
        assert abs(s - pin) < 1e-5
    assert all(a > b for a, b in zip(sups, sups[1:]))


def test_displacement_bound_closed_form():
    assert displacement_bound(3, 25.0, 10.0) == pytest.approx(0.1164229, abs=1e-6)
    # the bound is the exact expression 2d exp(-(r/2) ln(1 + d r / S))
    d, S, r = 4, 30.0, 12.0
    assert displacement_bound(d, S, r) == pytest.approx(
        2 * d * math.exp(-0.5 * r * math.log(1 + d * r / S))
    )
    assert displacement_bound(3, 0.0, 5.0) == 0.0


def test_validate_kernel_bounds_small_budget():
    rep = validate_kernel_bounds(
        d=3,
        R=1,
        spatial_radius=8,
        T_grid=(0.0, 1.0, 4.0),
        t_grid=(1.0, 4.0, 16.0),
        diff_radius=6,
        mc_budget=4000,
        seed=3,
    )
    assert rep["green_ratio"]["c_hat"] > 0
    assert math.isfinite(rep["green_ratio"]["C_hat"])
    assert rep["green_difference"]["C_hat"] > 0
    assert rep["heat_kernel"]["c_fit"] > 0
    assert rep["displacement"]["ok"]
    # deterministic given the seed
    rep2 = validate_kernel_bounds(
        d=3,
        R=1,
        spatial_radius=8,
        T_grid=(0.0, 1.0, 4.0),
        t_grid=(1.0, 4.0, 16.0),
        diff_radius=6,
        mc_budget=4000,
        seed=3,
    )
    assert rep2["displacement"]["empirical"] == rep["displacement"]["empirical"]


def test_table_csv_round_trip(tmp_path):
    tab = build_table(3, 1)
    path = tmp_path / "g.csv"
    tab.to_csv(str(path))
    import csv

    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2", "x3", "green", "error_estimate"]
    assert len(rows) - 1 == (tab.radius + 1) ** 3
    # spot check: first data row is the origin
    assert rows[1][:3] == ["0", "0", "0"]
    assert float(rows[1][3]) == tab.g0
