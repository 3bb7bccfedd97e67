from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eprgame.game import GameInputError
from eprgame.pte_exact import eliminate_round, maximin, pte_solve, solve_batch
from eprgame.pte_soft import (
    SoftSolver,
    TemperatureSchedule,
    anneal_temperature,
    smooth_extremum,
    soft_eliminate_round,
    soft_maximin,
    soft_solve,
)
from eprgame.scenario import ScenarioConfig, build_outcome_subgame, setting_pairs

from conftest import general_position_games

XY = [(1, 1), (1, -1), (-1, 1), (-1, -1)]


def test_smooth_extremum_zero_temperature_limit():
    assert smooth_extremum([0, 10], [1, 1], 1e-4, "max") == pytest.approx(10, abs=1e-3)
    assert smooth_extremum([0, 10], [1, 1], 1e-4, "min") == pytest.approx(0, abs=1e-3)


@given(st.floats(-100, 100), st.lists(st.floats(0.01, 10), min_size=3, max_size=3), st.floats(1e-3, 1e3))
def test_smooth_extremum_constant(a, w, tau):
    for mode in ("min", "max"):
        assert smooth_extremum([a, a, a], w, tau, mode) == pytest.approx(a, rel=1e-12, abs=1e-12)


def test_smooth_extremum_formula():
    ref = math.log((math.e + math.e**3) / 2)  # = 2.4338
    assert smooth_extremum([1, 3], [1, 1], 1.0, "max") == pytest.approx(ref, abs=1e-12)


def test_smooth_extremum_overflow_safe():
    assert smooth_extremum([1e5, 1e5 + 1], [1, 1], 1e-3, "max") == pytest.approx(1e5 + 1, abs=1e-2)


def test_smooth_extremum_errors():
    with pytest.raises(ValueError):
        smooth_extremum([1, 2], [0, 0], 1.0)
    with pytest.raises(ValueError):
        smooth_extremum([1, 2], [1, 1], 0.0)
    with pytest.raises(ValueError):
        smooth_extremum([1, 2], [1, 1], 1.0, "median")


def test_soft_maximin_matches_hard_on_survivor_sets(subgame):
    rng = np.random.default_rng(0)
    for u in general_position_games(100, 10):
        game = subgame.with_payoffs(u)
        keep = [z for z in game.leaves if rng.random() < 0.7] or [game.leaves[0]]
        retention = np.array([1.0 if z in keep else 0.0 for z in game.leaves])
        for p in (0, 1):
            assert soft_maximin(game, p, retention, 1e-4) == pytest.approx(maximin(game, p, keep), abs=1e-2)


def test_soft_maximin_infinite_temperature(subgame):
    game = subgame.with_payoffs([[4, 1, 2, 3], [4, 2, 1, 3]])
    assert soft_maximin(game, 0, np.ones(4), 1e7) == pytest.approx(2.5, abs=1e-5)


def test_soft_maximin_single_leaf(subgame):
    game = subgame.with_payoffs([[4, 1, 2, 3], [4, 2, 1, 3]])
    retention = np.array([0, 0, 1.0, 0])
    assert soft_maximin(game, 0, retention, 1e-6) == 2.0
    for tau in (0.1, 1.0, 10.0):
        assert abs(soft_maximin(game, 0, retention, tau) - 2.0) <= tau * math.log(2)


def test_soft_maximin_rejects_empty(subgame):
    with pytest.raises(GameInputError):
        soft_maximin(subgame, 0, np.zeros(4), 1.0)


def test_soft_eliminate_identical_payoffs(subgame):
    game = subgame.with_payoffs(np.ones((2, 4)))
    r = soft_eliminate_round(game, np.ones(4), 0.3, margin=0.0, presence_scale=None)
    np.testing.assert_allclose(r, 0.25, rtol=1e-14)
    r = soft_eliminate_round(game, np.ones(4), 0.3)
    sig = 1 / (1 + math.exp(-8.0))
    np.testing.assert_allclose(r, sig**2, rtol=1e-12)


def test_soft_eliminate_generic_separates(subgame):
    for u in general_position_games(200, 11):
        game = subgame.with_payoffs(u)
        survivors, _ = eliminate_round(game, game.leaves)
        r = soft_eliminate_round(game, np.ones(4), 1e-3)
        kept = [r[k] for k, z in enumerate(game.leaves) if z in survivors]
        dropped = [r[k] for k, z in enumerate(game.leaves) if z not in survivors]
        if dropped:
            assert max(dropped) < 1e-6 * min(kept)


def test_soft_eliminate_infinite_temperature(subgame):
    game = subgame.with_payoffs([[4, 1, 2, 3], [4, 2, 1, 3]])
    start = np.array([0.5, 0.2, 0.2, 0.1])
    r = soft_eliminate_round(game, start, 1e9, margin=0.0)
    np.testing.assert_allclose(r, start * 0.25, rtol=1e-8)
    r = soft_eliminate_round(game, start, 1e9)
    np.testing.assert_allclose(r / r.sum(), start / start.sum(), rtol=1e-8)


def test_soft_solve_matches_exact(subgame):
    for u in general_position_games(300, 12):
        game = subgame.with_payoffs(u)
        try:
            leaf = pte_solve(game).leaf
        except Exception:
            continue
        d = soft_solve(game, 1e-3).distribution
        assert d[game.leaves.index(leaf)] >= 0.999
        assert d.sum() == pytest.approx(1.0, abs=1e-12)


def test_soft_solve_infinite_temperature(subgame):
    game = subgame.with_payoffs([[4, 1, 2, 3], [4, 2, 1, 3]])
    np.testing.assert_allclose(soft_solve(game, 1e6).distribution, 0.25, atol=1e-6)


@pytest.mark.parametrize("tau", [1e-4, 1e-2, 1.0, 100.0])
def test_soft_solve_all_equal_uniform(subgame, tau):
    game = subgame.with_payoffs(np.full((2, 4), 0.7))
    d = soft_solve(game, tau).distribution
    assert np.all(d == d[0])
    assert d.sum() == pytest.approx(1.0, abs=1e-12)


def test_soft_solve_retention_in_range(subgame):
    game = subgame.with_payoffs([[4, 1, 2, 3], [4, 2, 1, 3]])
    res = soft_solve(game, 0.05)
    assert len(res.retention_rounds) == 4
    for r in res.retention_rounds:
        assert np.all((r > 0) & (r <= 1))


def test_anneal_temperature():
    sched = TemperatureSchedule(1.0, 0.01, 100, "geometric")
    assert anneal_temperature(0, sched) == 1.0
    assert anneal_temperature(100, sched) == 0.01
    assert anneal_temperature(50, sched) == pytest.approx(0.1, rel=1e-12)
    lin = TemperatureSchedule(1.0, 0.5, 10, "linear")
    assert anneal_temperature(5, lin) == pytest.approx(0.75)
    assert anneal_temperature(500, lin) == 0.5
    with pytest.raises(ValueError):
        anneal_temperature(0, TemperatureSchedule(0.01, 1.0, 10))


def test_zero_temperature_consistency(structure):
    U = general_position_games(2000, 13)
    codes = solve_batch(structure, U)
    ok = codes >= 0
    dist = SoftSolver(structure, 1e-3).forward(U[ok]).distribution
    point = np.zeros_like(dist)
    point[np.arange(ok.sum()), codes[ok]] = 1.0
    tv = 0.5 * np.abs(dist - point).sum(axis=1)
    assert ok.sum() >= 1000
    assert tv.mean() < 1e-3
    assert np.all(dist[np.arange(ok.sum()), codes[ok]] >= 0.999)


@pytest.mark.parametrize("tau", [0.1, 0.3, 1.0])
@pytest.mark.parametrize("kw", [{}, {"margin": 0.0, "presence_scale": None}])
def test_gradient_matches_finite_differences(structure, tau, kw):
    rng = np.random.default_rng(int(tau * 100))
    U = rng.normal(size=(6, 2, 4))
    g = rng.normal(size=(6, 4))
    solver = SoftSolver(structure, tau, **kw)
    analytic = solver.backward(solver.forward(U), g)
    h = 1e-5
    fd = np.zeros_like(U)
    for idx in np.ndindex(U.shape[1:]):
        e = np.zeros_like(U)
        e[(slice(None), *idx)] = h
        up = (solver.forward(U + e).distribution * g).sum(axis=1)
        down = (solver.forward(U - e).distribution * g).sum(axis=1)
        fd[(slice(None), *idx)] = (up - down) / (2 * h)
    err = np.abs(fd - analytic).max() / np.abs(fd).max()
    assert err < 1e-4


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-3, 3, allow_nan=False), min_size=8, max_size=8),
    st.booleans(),
    st.booleans(),
    st.sampled_from([1e-3, 0.1, 1.0]),
)
def test_permutation_equivariance(values, flip_x, flip_y, tau):
    subgame = build_outcome_subgame(ScenarioConfig(), setting_pairs()[0])
    u = np.array(values).reshape(2, 4)
    fx, fy = (-1 if flip_x else 1), (-1 if flip_y else 1)
    perm = [XY.index((fx * x, fy * y)) for x, y in XY]
    v = np.zeros_like(u)
    v[:, perm] = u
    d = soft_solve(subgame.with_payoffs(u), tau).distribution
    e = soft_solve(subgame.with_payoffs(v), tau).distribution
    np.testing.assert_allclose(e[perm], d, atol=1e-12)
    assert d.sum() == pytest.approx(1.0, abs=1e-12)
