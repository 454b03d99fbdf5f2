"""Acceptance criteria, each run at its stated scale and tolerance.

Every test records one PASS/FAIL line through the ``acceptance`` fixture; the
lines are printed together at the end of the pytest session.
"""

from functools import partial

import numpy as np
import pytest

from constrained_approach.geometry import (
    OpenHalfspaceIntersection,
    distance_to_complement,
    distance_to_region,
    region_contains,
)
from constrained_approach.matrix_game import duality_gap, solve_matrix_game
from constrained_approach.scenarios import build_scenario
from constrained_approach.simulate import fit_rate_curves, monte_carlo, safe_frequency_from_counts, simulate_batch
from oracles import grid_game_value, support_enumeration_value

ADVERSARIES = ("uniform", "skewed", "push", "script_L", "script_R", "script_LLR")


@pytest.fixture(scope="module")
def constrained_runs():
    """500 runs of horizon 10^4 of the constrained strategy on convex_demo, per adversary."""
    s = build_scenario("convex_demo")
    out = {}
    for adv in ADVERSARIES:
        out[adv] = monte_carlo(
            s.game, partial(s.make_strategy, "sigma_star", audit=True), partial(s.make_adversary, adv),
            10_000, 500, 0, s.region, s.target, stride=1, safe_checkpoints=(2500, 5000, 10_000),
        )
    return out


def test_criterion_01_stay_in_region(constrained_runs, acceptance):
    rates = {adv: r.stay_in_region_rate for adv, r in constrained_runs.items()}
    ok = all(v == 1.0 for v in rates.values())
    acceptance("criterion 01 stay in D", ok, f"stay rates {rates}")
    assert ok


def test_criterion_02_rate(constrained_runs, acceptance):
    fits = {}
    for adv, r in constrained_runs.items():
        s = r.details
        fits[adv] = fit_rate_curves(s.recorded, s.dist, t_min=100, quantile=0.95, t_max=10_000)
    ok = all(-0.65 <= f.slope <= -0.35 and f.r2 >= 0.8 for f in fits.values())
    detail = ", ".join(f"{a}: slope {f.slope:.3f} r2 {f.r2:.3f}" for a, f in fits.items())
    acceptance("criterion 02 rate", ok, detail)
    assert ok


def test_criterion_03_safe_frequency(constrained_runs, acceptance):
    shares = {}
    for adv, r in constrained_runs.items():
        s = r.details
        stats = safe_frequency_from_counts(s.recorded, s.safe_counts, (2500, 5000))
        assert stats.doubling_stages == (2500, 5000)
        shares[adv] = float(np.mean(np.all(stats.doubling_ratios <= 2.5, axis=1)))
    ok = all(v >= 0.95 for v in shares.values())
    acceptance("criterion 03 safe frequency", ok, f"share of runs with ratio <= 2.5: {shares}")
    assert ok


def test_criterion_04_impossibility(acceptance):
    s = build_scenario("impossibility_closed_halfplane")
    r = monte_carlo(s.game, partial(s.make_strategy, "blackwell"), partial(s.make_adversary, "uniform"),
                    1000, 1000, 0, s.region, s.target, safe_checkpoints=None)
    exit_fraction = 1.0 - r.stay_in_region_rate
    ok = exit_fraction >= 0.3
    acceptance("criterion 04 impossibility", ok, f"exit fraction {exit_fraction:.3f}")
    assert ok


def test_criterion_05_waypoint(acceptance):
    stay, reach = {}, {}
    for t0 in (100, 1000, 10_000):
        s = build_scenario("waypoint_ladder", {"initial_duration": t0})
        r = monte_carlo(s.game, partial(s.make_strategy, "waypoint"), partial(s.make_adversary, "uniform"),
                        100_000, 500, 0, s.region, s.target)
        d = r.details
        stay[t0] = r.stay_in_region_rate
        alive = d.stayed
        reach[t0] = float(np.mean(d.dist[alive, -1] < s.alpha_prime)) if alive.any() else 0.0
    rates = [stay[t] for t in (100, 1000, 10_000)]
    monotone = all(a <= b for a, b in zip(rates, rates[1:]))
    ok = monotone and stay[10_000] >= 0.95 and all(v >= 0.95 for v in reach.values())
    acceptance("criterion 05 waypoint", ok,
               f"stay rate by T0 {stay}; share of survivors with d(g_T, A) < alpha' {reach}")
    assert ok


def test_criterion_06_block(acceptance):
    s = build_scenario("block_reactive")
    b = simulate_batch(s.game, s.make_strategy("block"), s.make_adversary("uniform"), 10_000, list(range(100)),
                       s.region, s.target, keep_safe_curve=False)
    worst = 0.0
    for k in range(100):
        g = b.trace(k).full_averages(s.game)
        worst = max(worst, float(np.max(np.abs(g[1::2] - 2.0))))
    inside = bool(b.in_region.all())
    ok = worst <= 1e-12 and inside
    acceptance("criterion 06 block", ok, f"max |g_2k - (2,2)| {worst:.3g}, all stages in D {inside}")
    assert ok


def test_criterion_07_distance_inequality(acceptance):
    rng = np.random.default_rng(20240607)
    worst = -np.inf
    count = 0
    while count < 10_000:
        dim = 2 + count % 2
        k = int(rng.integers(1, 6))
        normals = rng.normal(size=(k, dim))
        region = OpenHalfspaceIntersection(normals, rng.uniform(-0.5, 1.5, size=k))
        x = rng.uniform(-2, 2, size=dim)
        if not region_contains(region, x):
            continue
        payoffs = rng.uniform(-2, 2, size=(int(rng.integers(2, 7)), dim))
        y = rng.dirichlet(np.ones(payoffs.shape[0])) @ payoffs
        lam = rng.uniform()
        lhs = distance_to_complement(lam * x + (1 - lam) * y, region)
        rhs = lam * distance_to_complement(x, region) - (1 - lam) * distance_to_region(y, region)
        worst = max(worst, float(rhs - lhs))
        count += 1
    ok = worst <= 1e-7
    acceptance("criterion 07 distance inequality", ok, f"10000 instances, worst violation {worst:.3g}")
    assert ok


def test_criterion_08_solver_oracle(acceptance):
    rng = np.random.default_rng(8)
    worst_value, worst_gap = 0.0, 0.0
    for _ in range(1000):
        m = rng.uniform(-1, 1, size=tuple(rng.integers(1, 6, size=2)))
        sol = solve_matrix_game(m)
        rows, cols = m.shape
        oracle = grid_game_value(m, 1e-3) if min(rows, cols) <= 3 else support_enumeration_value(m)
        worst_value = max(worst_value, abs(sol.value - oracle))
        worst_gap = max(worst_gap, abs(duality_gap(m, sol.optimal_row, sol.optimal_col)))
    ok = worst_value <= 2e-3 and worst_gap <= 1e-9
    acceptance("criterion 08 solver oracle", ok,
               f"max value error {worst_value:.3g}, max duality gap {worst_gap:.3g}")
    assert ok


def test_criterion_09_certificates(constrained_runs, acceptance):
    excess = {adv: r.audit.get("separation_excess", -np.inf) for adv, r in constrained_runs.items()}
    ok = all(v <= 1e-6 for v in excess.values())
    acceptance("criterion 09 certificate separation", ok, f"max separation excess {excess}")
    assert ok


def test_criterion_10_decomposition(constrained_runs, acceptance):
    resid = {adv: r.audit["decomposition_residual"] for adv, r in constrained_runs.items()}
    ok = all(v <= 1e-9 for v in resid.values())
    acceptance("criterion 10 decomposition identity", ok, f"max residual {resid}")
    assert ok
