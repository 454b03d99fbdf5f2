from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from constrained_approach.game import GameError, VectorPayoffGame, feasible_set, payoff_against_columns, pure
from constrained_approach.geometry import Ball, GridOracle, SinglePoint, box_region, region_contains
from constrained_approach.scenarios import build_scenario
from constrained_approach.strategies import (
    AdaptivePush,
    BlockPlan,
    PublicHistory,
    Scripted,
    Stationary,
    WaypointPlan,
    adversary_step,
    blackwell_observe,
    blackwell_start,
    blackwell_step,
    block_observe,
    block_start,
    block_strategy_step,
    check_waypoint_conditions,
    decomposition_residual,
    sigma_star_observe,
    sigma_star_start,
    sigma_star_step,
    waypoint_observe,
    waypoint_start,
    waypoint_step,
)
from oracles import simplex_grid

DEMO = build_scenario("convex_demo")
LADDER = build_scenario("waypoint_ladder")
BLOCK = build_scenario("block_reactive")


def at_average(state, t, avg):
    return replace(state, stage_count=np.asarray(t), running_average=np.asarray(avg, dtype=float))


# --- Blackwell -------------------------------------------------------------------


def test_blackwell_fallbacks():
    s = blackwell_start(DEMO.game, DEMO.target)
    mix, cert = blackwell_step(s, DEMO.game)
    assert np.allclose(mix, np.full(3, 1 / 3)) and cert is None
    s = at_average(s, 5, [0.0, 0.0])
    s = replace(s, fallback_action=pure(2, 3))
    mix, cert = blackwell_step(s, DEMO.game)
    assert np.allclose(mix, pure(2, 3)) and cert is None


def test_blackwell_convex_demo_step():
    s = at_average(blackwell_start(DEMO.game, DEMO.target), 4, [1.0, 0.0])
    mix, cert = blackwell_step(s, DEMO.game)
    assert np.allclose(cert.direction, [1.0, 0.0])
    assert np.allclose(cert.projection_point, [0.0, 0.0])
    assert mix[1] == pytest.approx(mix[2])
    # grid oracle over the simplex for the scalarized game
    m = DEMO.game.scalarized([1.0, 0.0])
    grid = simplex_grid(3, 1e-3)
    oracle_value = np.min(np.max(grid @ m, axis=1))
    assert cert.scalar_value == pytest.approx(0.0, abs=1e-12)
    assert abs(cert.scalar_value - oracle_value) <= 1e-12
    assert np.max(mix @ m) == pytest.approx(oracle_value, abs=1e-12)


def test_blackwell_with_feasible_target_never_separates():
    target = feasible_set(DEMO.game)
    s = blackwell_start(DEMO.game, target)
    rng = np.random.default_rng(0)
    for _ in range(30):
        mix, cert = blackwell_step(s, DEMO.game)
        assert cert is None
        s = blackwell_observe(s, DEMO.game.payoff[rng.integers(3), rng.integers(2)], mix)


def test_blackwell_observe():
    s = blackwell_start(DEMO.game, DEMO.target)
    s = blackwell_observe(s, [1.0, 0.0])
    assert np.allclose(s.running_average, [1.0, 0.0]) and s.stage_count == 1
    s = blackwell_observe(s, [0.0, 1.0])
    assert np.allclose(s.running_average, [0.5, 0.5])
    c = blackwell_start(DEMO.game, DEMO.target)
    for _ in range(7):
        c = blackwell_observe(c, [0.25, -0.5])
    assert np.allclose(c.running_average, [0.25, -0.5])


@given(st.integers(0, 2**32 - 1))
def test_certificate_separates(seed):
    rng = np.random.default_rng(seed)
    game = VectorPayoffGame(rng.uniform(-1, 1, size=(3, int(rng.integers(2, 4)), 2)))
    target = Ball(rng.uniform(-0.2, 0.2, size=2), rng.uniform(0, 0.3))
    s = at_average(blackwell_start(game, target), 3, rng.uniform(-1, 1, size=2))
    mix, cert = blackwell_step(s, game)
    if cert is None:
        return
    assert np.linalg.norm(cert.direction) == pytest.approx(1.0, abs=1e-9)
    assert np.all(cert.separation_excess(game) <= cert.scalar_value - cert.direction @ cert.projection_point + 1e-9)
    assert mix.min() >= 0 and abs(mix.sum() - 1) <= 1e-12


def test_batched_blackwell_matches_single_runs():
    rng = np.random.default_rng(3)
    avgs = rng.uniform(-1, 1, size=(6, 2))
    avgs[2] = 0.0
    batch = at_average(blackwell_start(DEMO.game, DEMO.target, 6), np.full(6, 5), avgs)
    mixes, cert = blackwell_step(batch, DEMO.game)
    for k in range(6):
        one = at_average(blackwell_start(DEMO.game, DEMO.target), 5, avgs[k])
        mix, c1 = blackwell_step(one, DEMO.game)
        assert np.allclose(mix, mixes[k])
        assert (c1 is None) == (not cert.active[k])


# --- the constrained strategy -------------------------------------------------------


def sigma(batch=()):
    return sigma_star_start(DEMO.game, DEMO.region, DEMO.target, batch=batch)


def test_sigma_star_defaults():
    s = sigma()
    assert np.allclose(s.safe_action, pure(0, 3))
    assert s.threshold_coefficient == pytest.approx(3.0)
    assert s.delta == pytest.approx(0.25)


def test_sigma_star_branches():
    s = sigma()
    dec = sigma_star_step(s, DEMO.game, DEMO.region)
    assert dec.safe_branch and np.allclose(dec.mix, pure(0, 3))
    deep = replace(s, stage_count=100, overall_average=np.array([0.75, 0.0]))
    dec = sigma_star_step(deep, DEMO.game, DEMO.region)
    assert not dec.safe_branch
    near = replace(s, stage_count=10, overall_average=np.array([-0.05, 0.0]))
    assert sigma_star_step(near, DEMO.game, DEMO.region).safe_branch
    custom = sigma_star_start(DEMO.game, DEMO.region, DEMO.target, kappa=3.0)
    near = replace(custom, stage_count=10, overall_average=np.array([-0.05, 0.0]))
    assert sigma_star_step(near, DEMO.game, DEMO.region).safe_branch


def test_sigma_star_observe_examples():
    s = sigma_star_observe(sigma(), [0.0, 1.0], True)
    assert s.safe_count == 1 and np.allclose(s.safe_average, [0.0, 1.0])
    assert np.allclose(s.overall_average, [0.0, 1.0]) and s.inner.stage_count == 0
    a, b = np.array([0.0, 1.0]), np.array([1.0, 0.0])
    s = sigma_star_observe(sigma_star_observe(sigma(), a, True), b, False)
    assert np.allclose(s.overall_average, (a + b) / 2)
    assert np.allclose(s.safe_average, a) and np.allclose(s.inner.running_average, b)
    s = sigma()
    for _ in range(10):
        s = sigma_star_observe(s, [1.0, 0.0], False)
    assert s.inner.stage_count == 10 == s.stage_count - s.safe_count


@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
def test_decomposition_identity(seed, steps):
    rng = np.random.default_rng(seed)
    s = sigma(4)
    for _ in range(steps):
        s = sigma_star_observe(s, rng.uniform(-1, 1, size=(4, 2)), rng.random(4) < 0.5)
    assert np.all(decomposition_residual(s) <= 1e-9)
    assert np.all((0 <= s.safe_count) & (s.safe_count <= s.stage_count))


@given(st.integers(0, 2**32 - 1))
def test_unsafe_branch_keeps_average_inside(seed):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(1, 500))
    g = np.array([rng.uniform(-0.25, 1.0), rng.uniform(0, 1)])
    s = replace(sigma(), stage_count=t, overall_average=g)
    if sigma_star_step(s, DEMO.game, DEMO.region).safe_branch:
        return
    for u in DEMO.game.payoff.reshape(-1, 2):
        nxt = sigma_star_observe(s, u, False)
        assert region_contains(DEMO.region, nxt.overall_average)


# --- waypoint strategy --------------------------------------------------------------


def test_waypoint_initial_phase_plays_safe_mix():
    plan = LADDER.waypoint_plan
    s = waypoint_start(plan, LADDER.game)
    for _ in range(plan.initial_duration):
        dec = waypoint_step(s, LADDER.game)
        assert np.allclose(dec.mix, pure(0, 4))
        s = waypoint_observe(s, LADDER.game.payoff[0, 0], dec.mix)
    assert s.current_phase == 1
    assert s.phase_entry_stages[0] == plan.initial_duration
    assert np.allclose(waypoint_step(s, LADDER.game).mix, pure(1, 4))


def test_waypoint_reaches_intermediate_point_exactly():
    t0 = 10
    plan = WaypointPlan(
        safe_mix=pure(0, 4),
        phase_mixes=(pure(1, 4), np.array([0, 0, 0.5, 0.5])),
        checkpoints=(box_region([3.0, 1.0], [0.01, 0.01]), LADDER.waypoint_plan.checkpoints[1]),
        initial_duration=t0,
        final_target=LADDER.target,
    )
    s = waypoint_start(plan, LADDER.game)
    while s.current_phase < 2:
        dec = waypoint_step(s, LADDER.game)
        i = int(np.argmax(dec.mix))
        s = waypoint_observe(s, LADDER.game.payoff[i, 0], dec.mix)
    assert s.phase_entry_stages[1] == 3 * t0
    assert np.allclose(s.inner.running_average, [3.0, 1.0], atol=1e-12)


def test_waypoint_final_phase_mixes_the_top_rows():
    plan = LADDER.waypoint_plan
    s = waypoint_start(plan, LADDER.game)
    s = replace(s, current_phase=np.asarray(2), stage_count=3000,
                inner=at_average(s.inner, 3000, [3.05, 1.2]))
    dec = waypoint_step(s, LADDER.game)
    assert np.allclose(dec.mix, [0, 0, 0.5, 0.5])


def test_waypoint_conditions_for_builtin_plans():
    for name in ("waypoint_ladder", "nonconvex_two_arms"):
        sc = build_scenario(name)
        rep = check_waypoint_conditions(sc.waypoint_plan, sc.game, sc.region)
        assert rep.all_pass, (name, rep)
        assert rep.resolution == 400


def test_waypoint_condition_failures_and_degenerate_plan():
    bad = WaypointPlan(pure(0, 4), (pure(2, 4),), (Ball(np.array([3.0, 3.0]), 0.1),), 10, LADDER.target, 0.06)
    rep = check_waypoint_conditions(bad, LADDER.game, LADDER.region)
    assert rep.hull_inside == (False,)
    two = build_scenario("nonconvex_two_arms")
    assert two.waypoint_plan.m == 1
    # a checkpoint too small for the phase direction cannot be forced
    tiny = WaypointPlan(two.waypoint_plan.safe_mix, two.waypoint_plan.phase_mixes,
                        (Ball(np.array([1.5, 1.0]), 0.015),), 10, two.target, 0.01)
    rep = check_waypoint_conditions(tiny, two.game, two.region, GridOracle([0.5, 0.5], [2.5, 2.5], 400))
    assert rep.crossing_forced == (False,) and rep.hull_inside == (True,)
    assert not rep.all_pass


def test_waypoint_phases_are_monotone():
    plan = WaypointPlan(LADDER.waypoint_plan.safe_mix, LADDER.waypoint_plan.phase_mixes,
                        LADDER.waypoint_plan.checkpoints, 50, LADDER.target, 0.06)
    rng = np.random.default_rng(1)
    s = waypoint_start(plan, LADDER.game, 8)
    last = s.current_phase.copy()
    for _ in range(600):
        dec = waypoint_step(s, LADDER.game)
        i = np.array([rng.choice(4, p=m) for m in dec.mix])
        s = waypoint_observe(s, LADDER.game.payoff[i, rng.integers(2, size=8)], dec.mix)
        assert np.all(s.current_phase >= last)
        last = s.current_phase.copy()
    entries = s.phase_entry_stages
    done = entries[:, 1] >= 0
    assert np.all(entries[done, 1] > entries[done, 0])


def test_waypoint_plan_validation():
    with pytest.raises(GameError):
        WaypointPlan(pure(0, 4), (), (), 10, LADDER.target)
    with pytest.raises(GameError):
        WaypointPlan(pure(0, 4), (pure(1, 4),), (LADDER.target,), 0, LADDER.target)


# --- block strategy -----------------------------------------------------------------


def test_block_replies():
    s = block_start(BLOCK.block_plan, BLOCK.game)
    assert block_strategy_step(s, BLOCK.game) == 2
    after_l = block_observe(s, 0)
    assert block_strategy_step(after_l, BLOCK.game) == 1
    after_r = block_observe(s, 1)
    assert block_strategy_step(after_r, BLOCK.game) == 0
    u = BLOCK.game.payoff
    assert np.allclose(u[2, 0] + u[1, 0], [4.0, 4.0])
    assert np.allclose(u[2, 1] + u[0, 1], [4.0, 4.0])


def test_block_rejects_incompatible_game():
    with pytest.raises(GameError):
        block_start(BLOCK.block_plan, DEMO.game)
    s = block_start(BLOCK.block_plan, BLOCK.game)
    with pytest.raises(GameError):
        block_strategy_step(s, LADDER.game)
    with pytest.raises(GameError):
        block_start(BlockPlan(0, (1, 0)), BLOCK.game)


# --- adversaries --------------------------------------------------------------------


def test_stationary_and_scripted():
    h = PublicHistory.start(2)
    assert np.allclose(adversary_step(Stationary([0.5, 0.5]), h), [0.5, 0.5])
    script = Scripted((0, 1), 2)
    h3 = PublicHistory(2, np.zeros(2), np.asarray(1))
    assert np.allclose(adversary_step(script, h3), [1.0, 0.0])


def test_adaptive_push_picks_column_closest_to_boundary():
    g = np.array([-0.2, 0.3])
    for guess in (None, pure(1, 3), pure(2, 3)):
        adv = AdaptivePush(DEMO.game, DEMO.region, guess)
        h = PublicHistory(40, g, np.asarray(0))
        mix = adversary_step(adv, h)
        p = np.full(3, 1 / 3) if guess is None else guess
        cols = payoff_against_columns(DEMO.game, p)
        expected = int(np.argmin(cols[:, 0]))
        assert np.allclose(mix, pure(expected, 2))


def test_adversaries_emit_valid_mixes_in_batches():
    h = PublicHistory(3, np.random.default_rng(0).uniform(-0.2, 0.5, size=(5, 2)), np.zeros(5, dtype=int))
    for adv in (Stationary([0.9, 0.1]), Scripted((0, 0, 1), 2), AdaptivePush(DEMO.game, DEMO.region)):
        mix = adversary_step(adv, h)
        assert mix.shape == (5, 2)
        assert np.all(mix >= 0) and np.allclose(mix.sum(axis=1), 1)


def test_single_point_target_has_empty_interior():
    s = waypoint_start(WaypointPlan(pure(0, 4), (pure(1, 4),), (SinglePoint(np.zeros(2)),), 1, LADDER.target),
                       LADDER.game)
    assert s.current_phase == 0
