import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from constrained_approach.game import (
    GameError,
    VectorPayoffGame,
    approachability_excess,
    check_conditions,
    check_convex_approachable,
    expected_payoff,
    feasible_set,
    find_safe_actions,
    pure,
    response_set,
    response_within_region,
    safety_gap,
    validate_mixed,
)
from constrained_approach.geometry import (
    GridOracle,
    OpenHalfspaceIntersection,
    SinglePoint,
    distance_to_body,
    hull_predicate,
    region_contains,
)
from constrained_approach.scenarios import build_scenario

THREE = build_scenario("convex_demo").game


def test_game_validation():
    with pytest.raises(GameError):
        VectorPayoffGame(np.zeros((1, 1, 2)))
    with pytest.raises(GameError):
        VectorPayoffGame(np.zeros((2, 2)))
    with pytest.raises(GameError):
        VectorPayoffGame(np.ones((2, 2, 2)), payoff_bound=0.5)
    g = VectorPayoffGame(np.arange(8, dtype=float).reshape(2, 2, 2) - 3)
    assert g.payoff_bound == 4.0
    assert g.row_names == ("r0", "r1") and g.dim == 2


def test_mixed_action_validation():
    with pytest.raises(GameError):
        validate_mixed([0.5, 0.6], 2)
    with pytest.raises(GameError):
        validate_mixed([1.2, -0.2], 2)
    with pytest.raises(GameError):
        validate_mixed([1.0], 2)


def test_expected_payoff_examples():
    half = np.array([0.0, 0.5, 0.5])
    for j in range(2):
        assert np.allclose(expected_payoff(THREE, half, pure(j, 2)), [0.0, 0.0])
    assert np.allclose(expected_payoff(THREE, pure(1, 3), pure(1, 2)), THREE.payoff[1, 1])
    two = VectorPayoffGame(np.arange(12, dtype=float).reshape(2, 2, 3))
    assert np.allclose(expected_payoff(two, [0.5, 0.5], [0.5, 0.5]), two.payoff.reshape(-1, 3).mean(axis=0))


@given(st.integers(0, 2**32 - 1))
def test_expected_payoff_is_bilinear(seed):
    rng = np.random.default_rng(seed)
    g = VectorPayoffGame(rng.normal(size=(3, 4, 2)))
    p1, p2 = rng.dirichlet(np.ones(3), size=2)
    q1, q2 = rng.dirichlet(np.ones(4), size=2)
    a = rng.random()
    mix = expected_payoff(g, a * p1 + (1 - a) * p2, q1)
    assert np.allclose(mix, a * expected_payoff(g, p1, q1) + (1 - a) * expected_payoff(g, p2, q1))
    mix = expected_payoff(g, p1, a * q1 + (1 - a) * q2)
    assert np.allclose(mix, a * expected_payoff(g, p1, q1) + (1 - a) * expected_payoff(g, p1, q2))


def test_response_sets():
    assert np.allclose(np.unique(response_set(THREE, pure(0, 3)).points, axis=0), [[0.0, 1.0]])
    block = build_scenario("block_reactive").game
    assert np.allclose(response_set(block, pure(2, 3)).points, [[2.0, 3.0], [3.0, 2.0]])


def test_feasible_set():
    pts = {tuple(p) for p in feasible_set(THREE).points}
    assert pts == {(0.0, 1.0), (1.0, 0.0), (-1.0, 0.0)}
    flat = VectorPayoffGame(np.full((2, 2, 2), 3.0))
    assert feasible_set(flat).points.shape == (1, 2)
    rng = np.random.default_rng(0)
    g = VectorPayoffGame(rng.normal(size=(3, 3, 2)))
    f = feasible_set(g)
    for _ in range(100):
        u = expected_payoff(g, rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3)))
        assert distance_to_body(u, f) <= 1e-9


def test_safe_actions():
    eps = OpenHalfspaceIntersection(np.array([[-1.0, 0.0]]), np.array([0.01]))
    assert find_safe_actions(THREE, eps) == [0]
    two = build_scenario("nonconvex_two_arms")
    assert find_safe_actions(two.game, two.region) == [0, 1]
    block = build_scenario("block_reactive")
    assert find_safe_actions(block.game, block.region) == [2]


def test_safety_gap_convex_demo():
    s = build_scenario("convex_demo")
    delta = safety_gap(s.game, s.region, pure(0, 3))
    assert delta == pytest.approx(0.25, abs=1e-15)
    # brute force: nearest grid point outside D, first in the plane, then inside F
    oracle = GridOracle([-1.5, -0.5], [1.5, 1.5], 601)
    pts = oracle.points().reshape(-1, 2)
    out = ~region_contains(s.region, pts)
    whole = cKDTree(pts[out]).query([0.0, 1.0])[0]
    within_f = cKDTree(pts[out & hull_predicate(s.game.payoff.reshape(-1, 2))(pts)]).query([0.0, 1.0])[0]
    assert abs(whole - delta) <= oracle.cell_diagonal
    assert delta <= within_f + oracle.cell_diagonal
    assert within_f == pytest.approx(math.sqrt(0.125), abs=oracle.cell_diagonal)


def test_safety_gap_edge_cases():
    whole = OpenHalfspaceIntersection.whole_space(2)
    assert safety_gap(THREE, whole, pure(0, 3)) == math.inf
    closed = build_scenario("impossibility_closed_halfplane")
    assert safety_gap(closed.game, closed.region, pure(0, 3)) == 0.0
    s = build_scenario("convex_demo")
    with pytest.raises(GameError):
        safety_gap(s.game, s.region, pure(1, 3))


def test_response_within_region():
    block = build_scenario("block_reactive")
    assert not response_within_region(block.game, block.region, pure(2, 3))
    s = build_scenario("convex_demo")
    assert response_within_region(s.game, s.region, pure(0, 3))


def test_dual_approachability():
    assert check_convex_approachable(THREE, SinglePoint(np.zeros(2)))
    assert not check_convex_approachable(THREE, SinglePoint(np.array([1.0, 0.0])))
    assert approachability_excess(THREE, SinglePoint(np.zeros(2)), [1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert check_convex_approachable(THREE, feasible_set(THREE))
    with pytest.raises(ValueError):
        check_convex_approachable(THREE, SinglePoint(np.zeros(2)), directions=4)


def test_check_conditions():
    s = build_scenario("convex_demo")
    rep = check_conditions(s.game, s.region, s.target)
    assert rep.safe_actions == [0] and rep.c2_holds and rep.c1_holds
    assert rep.safe_gap == pytest.approx(0.25)
    far = OpenHalfspaceIntersection(np.array([[1.0, 0.0]]), np.array([-5.0]))
    rep = check_conditions(s.game, far, s.target)
    assert rep.safe_actions == [] and not rep.c2_holds
