"""Player-1 strategies and player-2 adversaries as step/observe state machines.

States are immutable values; ``*_step`` maps a state to the mixed action for the
next stage and ``*_observe`` returns the successor state once the stage payoff
is known.  Array fields may carry a leading batch axis so that one state value
describes many independent runs advanced in lockstep (``stage_count`` is then
shared, everything else is per run).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .game import (
    GameError,
    check_convex_approachable,
    response_set,
    VectorPayoffGame,
    find_safe_actions,
    payoff_against_columns,
    pure,
    safety_gap,
    validate_mixed,
)
from .geometry import (
    Ball,
    ConvexBody,
    GridOracle,
    HalfspacePolytope,
    HullOfPoints,
    OpenBoxUnion,
    Region,
    SinglePoint,
    circle_points,
    extreme_samples,
    grid_path_connected,
    hull_predicate,
    region_contains,
    distance_to_body,
    distance_to_complement,
    interior_contains,
    project,
)
from .matrix_game import minimax_strategy

TARGET_TOL = 1e-12


def batch_shape(batch):
    """Normalize a batch argument: ``()`` for one run, an int ``R`` for ``R`` runs, or a shape tuple."""
    if isinstance(batch, (int, np.integer)):
        return (int(batch),)
    return tuple(int(b) for b in batch)


# ---------------------------------------------------------------------------
# Blackwell's strategy


@dataclass(frozen=True, eq=False)
class BlackwellState:
    stage_count: np.ndarray
    running_average: np.ndarray
    target: ConvexBody
    fallback_action: np.ndarray


def blackwell_start(game: VectorPayoffGame, target: ConvexBody, batch=()) -> BlackwellState:
    batch = batch_shape(batch)
    uniform = np.full(batch + (game.num_actions_p1,), 1.0 / game.num_actions_p1)
    return BlackwellState(
        stage_count=np.zeros(batch, dtype=np.int64),
        running_average=np.zeros(batch + (game.dim,)),
        target=target,
        fallback_action=uniform,
    )


@dataclass(frozen=True, eq=False)
class SeparationCertificate:
    """Projection ``y``, unit normal ``direction`` (from ``y`` towards the average) and the chosen mix.

    ``active`` marks the runs for which a certificate was produced; the other
    entries hold NaN.
    """

    projection_point: np.ndarray
    direction: np.ndarray
    scalar_value: np.ndarray
    chosen_mix: np.ndarray
    active: np.ndarray

    def separation_excess(self, game: VectorPayoffGame):
        """``max_j direction . U(p, j) - direction . y`` per run; ``-inf`` where inactive."""
        cols = payoff_against_columns(game, np.nan_to_num(self.chosen_mix))
        lhs = np.sum(cols * np.nan_to_num(self.direction)[..., None, :], axis=-1).max(axis=-1)
        rhs = np.sum(np.nan_to_num(self.direction) * np.nan_to_num(self.projection_point), axis=-1)
        return np.where(self.active, lhs - rhs, -np.inf)


def blackwell_step(state: BlackwellState, game: VectorPayoffGame, where=None):
    """Mixed action for the next stage and its separation certificate.

    Inside the target (or before the first stage) the fallback action is
    returned and no certificate is issued.  Otherwise the average ``x`` is
    projected onto the target, ``lambda = (x - y) / |x - y|`` and the returned
    mix minimizes ``max_j lambda . U(p, j)``.  ``where`` restricts the work to a
    subset of the batch.  The certificate is ``None`` when no run needed one.
    """
    avg = np.asarray(state.running_average, dtype=float)
    batch = avg.shape[:-1]
    n = avg.shape[-1]
    rows = game.num_actions_p1
    count = int(np.prod(batch, dtype=int))
    x = avg.reshape(count, n)
    t = np.broadcast_to(state.stage_count, batch).reshape(count)
    mix = np.array(np.broadcast_to(state.fallback_action, batch + (rows,))).reshape(count, rows)
    active = t > 0
    if where is not None:
        active &= np.broadcast_to(where, batch).reshape(count)
    if active.any():
        active[active] = distance_to_body(x[active], state.target) > TARGET_TOL
    if not active.any():
        return mix.reshape(batch + (rows,)), None

    xa = x[active]
    y = project(xa, state.target)
    diff = xa - y
    lam = diff / np.linalg.norm(diff, axis=-1, keepdims=True)
    values, p = minimax_strategy(game.scalarized(lam))
    mix[active] = p

    def spread(vals, tail):
        out = np.full((count,) + tail, np.nan)
        out[active] = vals
        return out.reshape(batch + tail)

    cert = SeparationCertificate(
        projection_point=spread(y, (n,)),
        direction=spread(lam, (n,)),
        scalar_value=spread(values, ()),
        chosen_mix=spread(p, (rows,)),
        active=active.reshape(batch),
    )
    return mix.reshape(batch + (rows,)), cert


def blackwell_observe(state: BlackwellState, realized_payoff, played_mix=None, where=None):
    """Fold one payoff into the running average; ``played_mix`` becomes the fallback."""
    u = np.asarray(realized_payoff, dtype=float)
    t = np.asarray(state.stage_count)
    avg = state.running_average
    new_t = t + 1
    new_avg = avg + (u - avg) / new_t[..., None]
    fallback = state.fallback_action
    if played_mix is not None:
        fallback = np.asarray(played_mix, dtype=float)
    if where is not None:
        w = np.asarray(where)
        new_t = np.where(w, new_t, t)
        new_avg = np.where(w[..., None], new_avg, avg)
        if played_mix is not None:
            fallback = np.where(w[..., None], fallback, state.fallback_action)
    return replace(state, stage_count=new_t, running_average=new_avg, fallback_action=fallback)


# ---------------------------------------------------------------------------
# the constrained strategy: safe action near the boundary, Blackwell elsewhere


@dataclass(frozen=True, eq=False)
class ConstrainedState:
    stage_count: int
    overall_average: np.ndarray
    safe_count: np.ndarray
    safe_average: np.ndarray
    inner: BlackwellState
    safe_action: np.ndarray
    threshold_coefficient: float
    delta: float


@dataclass(frozen=True, eq=False)
class SigmaStarDecision:
    mix: np.ndarray
    safe_branch: np.ndarray
    inner_mix: np.ndarray
    certificate: SeparationCertificate | None


def sigma_star_start(game: VectorPayoffGame, region: Region, target: ConvexBody, safe_action=None,
                     kappa=None, batch=()) -> ConstrainedState:
    """Initial state.  Defaults: lowest-index safe action, ``kappa = 3 * game.payoff_scale``."""
    if safe_action is None:
        safe = find_safe_actions(game, region)
        if not safe:
            raise GameError("no safe action: the constrained strategy is undefined")
        safe_action = pure(safe[0], game.num_actions_p1)
    elif np.ndim(safe_action) == 0:
        safe_action = pure(int(safe_action), game.num_actions_p1)
    safe_action = validate_mixed(safe_action, game.num_actions_p1)
    delta = safety_gap(game, region, safe_action)
    if kappa is None:
        kappa = 3.0 * game.payoff_scale
    inner = blackwell_start(game, target, batch)
    batch = inner.stage_count.shape
    return ConstrainedState(
        stage_count=0,
        overall_average=np.zeros(batch + (game.dim,)),
        safe_count=np.zeros(batch, dtype=np.int64),
        safe_average=np.zeros(batch + (game.dim,)),
        inner=inner,
        safe_action=safe_action,
        threshold_coefficient=float(kappa),
        delta=delta,
    )


def in_boundary_layer(state: ConstrainedState, region: Region, feasible=None):
    """Whether the current history belongs to the safe-play set: empty, or clearance <= kappa / t."""
    batch = state.safe_count.shape
    if state.stage_count == 0:
        return np.ones(batch, dtype=bool)
    clearance = distance_to_complement(state.overall_average, region, feasible)
    return clearance <= state.threshold_coefficient / state.stage_count


def sigma_star_step(state: ConstrainedState, game: VectorPayoffGame, region: Region,
                    feasible=None) -> SigmaStarDecision:
    safe = in_boundary_layer(state, region, feasible)
    inner_mix, cert = blackwell_step(state.inner, game, where=~safe)
    mix = np.where(safe[..., None], state.safe_action, inner_mix)
    return SigmaStarDecision(mix=mix, safe_branch=safe, inner_mix=inner_mix, certificate=cert)


def sigma_star_observe(state: ConstrainedState, realized_payoff, branch_was_safe,
                       inner_mix=None) -> ConstrainedState:
    """Safe-branch stages update the safe average only; the inner strategy never sees them."""
    u = np.asarray(realized_payoff, dtype=float)
    safe = np.asarray(branch_was_safe, dtype=bool)
    t1 = state.stage_count + 1
    g = state.overall_average + (u - state.overall_average) / t1
    f = state.safe_count + safe
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(
            safe[..., None],
            state.safe_average + (u - state.safe_average) / np.maximum(f, 1)[..., None],
            state.safe_average,
        )
    inner = blackwell_observe(state.inner, u, inner_mix, where=~safe)
    return replace(state, stage_count=t1, overall_average=g, safe_count=f, safe_average=alpha,
                   inner=inner)


def decomposition_residual(state: ConstrainedState):
    """``|g_t - (f/t) alpha_t - ((t-f)/t) beta_t|`` per run."""
    t = state.stage_count
    if t == 0:
        return np.zeros(state.safe_count.shape)
    f = state.safe_count[..., None]
    rebuilt = (f / t) * state.safe_average + ((t - f) / t) * state.inner.running_average
    return np.linalg.norm(state.overall_average - rebuilt, axis=-1)


# ---------------------------------------------------------------------------
# waypoint strategy for non-convex constraint sets


@dataclass(frozen=True, eq=False)
class WaypointPlan:
    """Safe mix, phase mixes ``x_1..x_m``, open checkpoints ``A_1..A_m`` and the initial duration.

    Only ``x_1..x_{m-1}`` are played; ``x_m`` and ``A_m`` enter the path
    conditions.  ``delta`` is the margin those conditions use.
    """

    safe_mix: np.ndarray
    phase_mixes: tuple
    checkpoints: tuple
    initial_duration: int
    final_target: ConvexBody
    delta: float = 0.0
    min_crossing: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "phase_mixes", tuple(np.asarray(x, dtype=float) for x in self.phase_mixes))
        object.__setattr__(self, "checkpoints", tuple(self.checkpoints))
        object.__setattr__(self, "safe_mix", np.asarray(self.safe_mix, dtype=float))
        if len(self.phase_mixes) != len(self.checkpoints) or not self.phase_mixes:
            raise GameError("need m >= 1 phase mixes and as many checkpoints")
        if int(self.initial_duration) < 1:
            raise GameError("initial duration must be >= 1")
        object.__setattr__(self, "initial_duration", int(self.initial_duration))

    @property
    def m(self):
        return len(self.phase_mixes)


@dataclass(frozen=True, eq=False)
class WaypointState:
    plan: WaypointPlan
    stage_count: int
    current_phase: np.ndarray
    phase_entry_stages: np.ndarray
    inner: BlackwellState


@dataclass(frozen=True, eq=False)
class WaypointDecision:
    mix: np.ndarray
    certificate: SeparationCertificate | None


def waypoint_start(plan: WaypointPlan, game: VectorPayoffGame, batch=()) -> WaypointState:
    validate_mixed(plan.safe_mix, game.num_actions_p1)
    for x in plan.phase_mixes:
        validate_mixed(x, game.num_actions_p1)
    inner = blackwell_start(game, plan.final_target, batch)
    shape = inner.stage_count.shape
    return WaypointState(
        plan=plan,
        stage_count=0,
        current_phase=np.zeros(shape, dtype=np.int64),
        phase_entry_stages=np.full(shape + (plan.m,), -1, dtype=np.int64),
        inner=inner,
    )


def waypoint_step(state: WaypointState, game: VectorPayoffGame) -> WaypointDecision:
    """Phase 0 plays the safe mix, phase l in [1, m-1] plays x_l, phase m runs Blackwell.

    The final-phase Blackwell strategy works on the overall average, so it
    steers the quantity that has to stay in the region.
    """
    plan = state.plan
    table = np.stack([plan.safe_mix] + list(plan.phase_mixes[: plan.m - 1]))
    phase = state.current_phase
    final = phase == plan.m
    base = table[np.minimum(phase, plan.m - 1)]
    if not final.any():
        return WaypointDecision(mix=base, certificate=None)
    bw_mix, cert = blackwell_step(state.inner, game, where=final)
    return WaypointDecision(mix=np.where(final[..., None], bw_mix, base), certificate=cert)


def waypoint_observe(state: WaypointState, realized_payoff, played_mix=None) -> WaypointState:
    plan = state.plan
    inner = blackwell_observe(state.inner, realized_payoff, played_mix)
    t1 = state.stage_count + 1
    g = inner.running_average
    phase = state.current_phase
    entries = state.phase_entry_stages.copy()
    new_phase = phase.copy()
    leave0 = (phase == 0) & (t1 >= plan.initial_duration)
    new_phase[leave0] = 1
    entries[..., 0][leave0] = t1
    for ell in range(1, plan.m):
        here = phase == ell
        if not here.any():
            continue
        hit = here & interior_contains(plan.checkpoints[ell - 1], g)
        new_phase[hit] = ell + 1
        entries[..., ell][hit] = t1
    return replace(state, stage_count=t1, current_phase=new_phase, phase_entry_stages=entries,
                   inner=inner)


@dataclass(frozen=True)
class WaypointConditionReport:
    """Per-link results for the path conditions; ``None`` marks an item that could not be checked.

    ``crossing_forced[l]``: every path from ``A_l`` towards ``R1(x_{l+1})``
    (thickened by ``delta``) must cross ``A_{l+1}``, i.e. removing ``A_{l+1}``
    disconnects the hull.  ``hull_inside[l]``: ``conv[A_l, B(A_{l+1}, delta)]``
    lies in ``D``.  ``final_approachable``: the final target passes the dual test.
    """

    crossing_forced: tuple
    hull_inside: tuple
    final_approachable: bool | None
    resolution: int

    @property
    def all_pass(self):
        items = list(self.crossing_forced) + list(self.hull_inside) + [self.final_approachable]
        return all(v is True for v in items)


def _outline(body, delta=0.0, count=64):
    """Points whose convex hull contains the closure of ``body`` thickened by ``delta`` (2D)."""
    if isinstance(body, OpenBoxUnion):
        corners = []
        for lo, hi in zip(body.lo, body.hi):
            corners += [lo, hi, [lo[0], hi[1]], [hi[0], lo[1]]]
        pts = np.array(corners, dtype=float)
    elif isinstance(body, Ball):
        pts = circle_points(body.center, body.radius, count)
    elif isinstance(body, (SinglePoint, HullOfPoints, HalfspacePolytope)):
        pts = extreme_samples(body)
    else:
        return None
    if delta > 0:
        pts = np.concatenate([circle_points(p, delta, count) for p in pts])
    return pts


def check_waypoint_conditions(plan: WaypointPlan, game: VectorPayoffGame, region: Region,
                              oracle: GridOracle | None = None, approach_directions=None):
    """Grid-based check of the path conditions of a waypoint plan (2D only).

    Both conditions are evaluated for every link ``l = 0..m-1`` with
    ``A_0 = R1(x_0)``.  Balls are replaced by circumscribed polygons, so the
    thickened sets are slightly larger than the exact ones.
    """
    m = plan.m
    links = range(m)
    final = None
    if isinstance(plan.final_target, (SinglePoint, Ball, HullOfPoints, HalfspacePolytope)):
        final = check_convex_approachable(game, plan.final_target, approach_directions)
    if game.dim != 2:
        return WaypointConditionReport((None,) * m, (None,) * m, final, 0)
    stages = [response_set(game, plan.safe_mix)] + list(plan.checkpoints)
    if oracle is None:
        cloud = [game.payoff.reshape(-1, 2)]
        cloud += [o for o in (_outline(b, plan.delta) for b in stages) if o is not None]
        oracle = GridOracle.around(np.concatenate(cloud), margin=0.25, resolution=400)
    grid = oracle.points()
    inside_region = region_contains(region, grid)
    crossing, hull_ok = [], []
    for ell in links:
        here, nxt = stages[ell], stages[ell + 1]
        mix = plan.phase_mixes[ell]
        a_pts = _outline(here)
        r_pts = _outline(response_set(game, mix), plan.delta)
        n_pts = _outline(nxt, plan.delta)
        if a_pts is None or n_pts is None:
            crossing.append(None)
            hull_ok.append(None)
            continue
        in_hull = hull_predicate(np.concatenate([a_pts, r_pts]))
        cut = interior_contains(nxt, grid)
        crossing.append(not grid_path_connected(lambda x: in_hull(x) & ~cut, oracle))
        in_hull2 = hull_predicate(np.concatenate([a_pts, n_pts]))(grid)
        hull_ok.append(bool(np.all(inside_region[in_hull2])))
    return WaypointConditionReport(tuple(crossing), tuple(hull_ok), final, oracle.resolution)


# ---------------------------------------------------------------------------
# block strategy


@dataclass(frozen=True)
class BlockPlan:
    """Play ``opener`` on odd stages and ``replies[j]`` after the opponent answered ``j``."""

    opener: int
    replies: tuple


def block_compatible(plan: BlockPlan, game: VectorPayoffGame, tol=1e-12):
    """Every two-stage block sums to the same vector whatever the opponent does."""
    cols = game.num_actions_p2
    if len(plan.replies) != cols:
        return False
    sums = [
        game.payoff[plan.opener, j] + game.payoff[plan.replies[j], k]
        for j in range(cols)
        for k in range(cols)
    ]
    return bool(np.all(np.abs(np.array(sums) - sums[0]) <= tol))


@dataclass(frozen=True, eq=False)
class BlockState:
    plan: BlockPlan
    stage_count: int
    last_opponent: np.ndarray


def block_start(plan: BlockPlan, game: VectorPayoffGame, batch=()) -> BlockState:
    if not block_compatible(plan, game):
        raise GameError("game is not block-compatible with this plan")
    shape = batch_shape(batch)
    return BlockState(plan=plan, stage_count=0, last_opponent=np.zeros(shape, dtype=np.int64))


def block_strategy_step(state: BlockState, game: VectorPayoffGame):
    """Pure action (index array) for the next stage."""
    if not block_compatible(state.plan, game):
        raise GameError("game is not block-compatible with this plan")
    if state.stage_count % 2 == 0:
        return np.full(state.last_opponent.shape, state.plan.opener, dtype=np.int64)
    return np.asarray(state.plan.replies, dtype=np.int64)[state.last_opponent]


def block_observe(state: BlockState, opponent_action) -> BlockState:
    j = np.broadcast_to(np.asarray(opponent_action, dtype=np.int64), state.last_opponent.shape)
    return replace(state, stage_count=state.stage_count + 1, last_opponent=j.copy())


# ---------------------------------------------------------------------------
# adversaries


@dataclass(frozen=True, eq=False)
class PublicHistory:
    """What player 2 knows: the stage count, the realized average and its own last action."""

    stage_count: int
    average: np.ndarray
    last_action: np.ndarray

    @classmethod
    def start(cls, dim, batch=()):
        shape = batch_shape(batch)
        return cls(0, np.zeros(shape + (dim,)), np.zeros(shape, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class Stationary:
    mix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mix", np.asarray(self.mix, dtype=float))

    def mix_for(self, history: PublicHistory):
        return np.broadcast_to(self.mix, history.last_action.shape + self.mix.shape)


@dataclass(frozen=True)
class Scripted:
    """Cycles through a fixed list of pure actions."""

    actions: tuple
    num_actions: int

    def mix_for(self, history: PublicHistory):
        j = self.actions[history.stage_count % len(self.actions)]
        return np.broadcast_to(pure(j, self.num_actions), history.last_action.shape + (self.num_actions,))


@dataclass(frozen=True, eq=False)
class AdaptivePush:
    """Greedy stress adversary: the column that would leave the least clearance to the region boundary.

    Player 1's mix is unobserved, so it is guessed (uniform by default).
    Ties go to the lowest index.
    """

    game: VectorPayoffGame
    region: Region
    guess: np.ndarray | None = None

    def column_averages(self):
        guess = self.guess
        if guess is None:
            guess = np.full(self.game.num_actions_p1, 1.0 / self.game.num_actions_p1)
        return payoff_against_columns(self.game, guess)

    def mix_for(self, history: PublicHistory):
        cols = self.column_averages()
        t = history.stage_count
        g = history.average[..., None, :]
        nxt = g + (cols - g) / (t + 1)
        clearance = distance_to_complement(nxt, self.region)
        j = np.argmin(clearance, axis=-1)
        return np.eye(self.game.num_actions_p2)[j]


AdversaryModel = Stationary | Scripted | AdaptivePush


def adversary_step(model, history: PublicHistory):
    return model.mix_for(history)


# ---------------------------------------------------------------------------
# policies: uniform wrappers the simulator drives


class Policy:
    """Interface: ``start(runs)``, ``act(state)``, ``update(...)``; optional audit hooks."""

    game: VectorPayoffGame
    tracks_safe_count = False

    def safe_counts(self, state):
        return None

    def audit(self, state, decision):
        return {}


@dataclass(eq=False)
class StationaryPolicy(Policy):
    game: VectorPayoffGame
    mix: np.ndarray

    def start(self, runs):
        return 0

    def act(self, state):
        m = np.asarray(self.mix, dtype=float)
        return m, None

    def update(self, state, decision, payoff, opponent_action):
        return state + 1


@dataclass(eq=False)
class BlackwellPolicy(Policy):
    game: VectorPayoffGame
    target: ConvexBody
    audit_certificates: bool = False

    def start(self, runs):
        return blackwell_start(self.game, self.target, runs)

    def act(self, state):
        mix, cert = blackwell_step(state, self.game)
        return mix, (mix, cert)

    def update(self, state, decision, payoff, opponent_action):
        return blackwell_observe(state, payoff, decision[0])

    def audit(self, state, decision):
        if not self.audit_certificates or decision[1] is None:
            return {}
        return {"separation_excess": decision[1].separation_excess(self.game)}


@dataclass(eq=False)
class SigmaStarPolicy(Policy):
    game: VectorPayoffGame
    region: Region
    target: ConvexBody
    safe_action: object = None
    kappa: float | None = None
    audit_invariants: bool = False
    tracks_safe_count = True

    def start(self, runs):
        return sigma_star_start(self.game, self.region, self.target, self.safe_action, self.kappa, runs)

    def act(self, state):
        dec = sigma_star_step(state, self.game, self.region)
        return dec.mix, dec

    def update(self, state, decision, payoff, opponent_action):
        return sigma_star_observe(state, payoff, decision.safe_branch, decision.inner_mix)

    def safe_counts(self, state):
        return state.safe_count

    def audit(self, state, decision):
        if not self.audit_invariants:
            return {}
        out = {"decomposition_residual": decomposition_residual(state)}
        if decision.certificate is not None:
            out["separation_excess"] = decision.certificate.separation_excess(self.game)
        return out


@dataclass(eq=False)
class WaypointPolicy(Policy):
    game: VectorPayoffGame
    plan: WaypointPlan

    def start(self, runs):
        return waypoint_start(self.plan, self.game, runs)

    def act(self, state):
        dec = waypoint_step(state, self.game)
        return dec.mix, dec

    def update(self, state, decision, payoff, opponent_action):
        return waypoint_observe(state, payoff, decision.mix)


@dataclass(eq=False)
class BlockPolicy(Policy):
    game: VectorPayoffGame
    plan: BlockPlan

    def start(self, runs):
        return block_start(self.plan, self.game, runs)

    def act(self, state):
        i = block_strategy_step(state, self.game)
        return np.eye(self.game.num_actions_p1)[i], None

    def update(self, state, decision, payoff, opponent_action):
        return block_observe(state, opponent_action)


def make_pure_actions(names: Sequence[str], game: VectorPayoffGame):
    return tuple(game.col_index(n) if isinstance(n, str) else int(n) for n in names)
