"""Repeated games with vector payoffs: payoffs, response sets and the necessary conditions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .geometry import (
    ConvexBody,
    GeometryError,
    GridOracle,
    HullOfPoints,
    OpenHalfspaceIntersection,
    Region,
    distance_to_complement,
    hull_predicate,
    region_contains,
    support,
)
from .matrix_game import solve_matrix_game

MIX_TOL = 1e-12


class GameError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VectorPayoffGame:
    """Finite two-player game whose outcome ``payoff[i, j]`` is a vector in R^n."""

    payoff: np.ndarray
    row_names: tuple = ()
    col_names: tuple = ()
    payoff_bound: float | None = None

    def __post_init__(self):
        u = np.asarray(self.payoff, dtype=float)
        if u.ndim != 3:
            raise GameError("payoff tensor must have shape (|I|, |J|, n)")
        if u.shape[0] < 2 or u.shape[1] < 2:
            raise GameError("both players need at least two actions")
        if not np.all(np.isfinite(u)):
            raise GameError("payoffs must be finite")
        u.setflags(write=False)
        object.__setattr__(self, "payoff", u)
        rows = tuple(self.row_names) or tuple(f"r{i}" for i in range(u.shape[0]))
        cols = tuple(self.col_names) or tuple(f"c{j}" for j in range(u.shape[1]))
        if len(rows) != u.shape[0] or len(cols) != u.shape[1]:
            raise GameError("action names do not match the payoff tensor")
        object.__setattr__(self, "row_names", rows)
        object.__setattr__(self, "col_names", cols)
        bound = float(np.max(np.abs(u)))
        if self.payoff_bound is None:
            object.__setattr__(self, "payoff_bound", bound)
        elif self.payoff_bound < bound:
            raise GameError("payoff_bound is below the largest payoff entry")

    @property
    def num_actions_p1(self):
        return self.payoff.shape[0]

    @property
    def num_actions_p2(self):
        return self.payoff.shape[1]

    @property
    def dim(self):
        return self.payoff.shape[2]

    @property
    def payoff_scale(self):
        """Half the diameter of the feasible set; one stage moves the average by at most 2x this over t+1."""
        pts = self.payoff.reshape(-1, self.dim)
        diffs = pts[:, None, :] - pts[None, :, :]
        return 0.5 * float(np.max(np.linalg.norm(diffs, axis=-1)))

    def row_index(self, name):
        return self.row_names.index(name)

    def col_index(self, name):
        return self.col_names.index(name)

    def scalarized(self, direction):
        """Matrix ``direction . U(i, j)``; ``direction`` may be batched ``(..., n)``."""
        d = np.asarray(direction, dtype=float)
        return np.sum(self.payoff * d[..., None, None, :], axis=-1)


def validate_mixed(weights, size):
    w = np.asarray(weights, dtype=float)
    if w.shape[-1] != size:
        raise GameError(f"mixed action has {w.shape[-1]} entries, expected {size}")
    if np.any(w < -MIX_TOL) or np.any(np.abs(w.sum(axis=-1) - 1.0) > MIX_TOL):
        raise GameError("mixed action must be nonnegative and sum to 1")
    return w


def pure(index, size):
    w = np.zeros(size)
    w[index] = 1.0
    return w


def expected_payoff(game: VectorPayoffGame, p, q):
    """``sum_ij p(i) q(j) U(i, j)``; ``p``/``q`` may carry matching batch axes."""
    p = validate_mixed(p, game.num_actions_p1)
    q = validate_mixed(q, game.num_actions_p2)
    return np.sum(q[..., :, None] * payoff_against_columns(game, p), axis=-2)


def payoff_against_columns(game: VectorPayoffGame, p):
    """``U(p, j)`` for every column ``j``: shape ``(..., J, n)``."""
    p = np.asarray(p, dtype=float)
    return np.sum(p[..., :, None, None] * game.payoff, axis=-3)


def response_set(game: VectorPayoffGame, p) -> HullOfPoints:
    p = validate_mixed(p, game.num_actions_p1)
    return HullOfPoints(payoff_against_columns(game, p))


def feasible_set(game: VectorPayoffGame) -> HullOfPoints:
    pts = np.unique(game.payoff.reshape(-1, game.dim), axis=0)
    return HullOfPoints(pts)


def find_safe_actions(game: VectorPayoffGame, region: Region):
    """Rows whose every outcome lies in the region, ascending."""
    inside = region_contains(region, game.payoff)
    return [i for i in range(game.num_actions_p1) if bool(np.all(inside[i]))]


def safety_gap(game: VectorPayoffGame, region: Region, safe_mix, oracle: GridOracle | None = None,
               samples=201):
    """Lower bound on ``d(F \\ D, R1(s))`` for a mix ``s`` over safe rows.

    Convex regions: the minimum complement clearance over the vertices of
    ``R1(s)`` (the clearance is concave, so vertices suffice).  Box unions: the
    minimum over a sample of points of ``R1(s)``.  The whole space gives ``inf``.
    """
    s = validate_mixed(safe_mix, game.num_actions_p1)
    safe = set(find_safe_actions(game, region))
    support_rows = [i for i in range(game.num_actions_p1) if s[i] > MIX_TOL]
    unsafe = [i for i in support_rows if i not in safe]
    if unsafe:
        raise GameError(f"mix puts weight on unsafe actions {unsafe}")
    verts = payoff_against_columns(game, s)
    if isinstance(region, OpenHalfspaceIntersection):
        return float(np.min(distance_to_complement(verts, region)))
    pts = _hull_samples(verts, samples, oracle)
    return float(np.min(distance_to_complement(pts, region)))


def _hull_samples(verts, samples, oracle):
    """Points of conv(verts): vertices, edge points and random interior mixtures."""
    k = verts.shape[0]
    out = [verts]
    ts = np.linspace(0.0, 1.0, samples)[:, None]
    for a in range(k):
        for b in range(a + 1, k):
            out.append((1 - ts) * verts[a] + ts * verts[b])
    if k > 2:
        rng = np.random.default_rng(0)
        w = rng.dirichlet(np.ones(k), size=samples * 4)
        out.append(w @ verts)
    pts = np.concatenate(out, axis=0)
    if oracle is not None and oracle.dim == verts.shape[1]:
        g = oracle.points().reshape(-1, oracle.dim)
        inside = hull_predicate(verts)(g)
        pts = np.concatenate([pts, g[inside]], axis=0)
    return pts


def response_within_region(game: VectorPayoffGame, region: Region, mix, samples=201):
    """Sampled test of ``R1(mix) subset of D`` (exact on vertices for convex regions)."""
    verts = payoff_against_columns(game, validate_mixed(mix, game.num_actions_p1))
    if getattr(region, "convex", False):
        return bool(np.all(region_contains(region, verts)))
    return bool(np.all(region_contains(region, _hull_samples(verts, samples, None))))


def _directions(dim, count):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = 2 * math.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    sob = qmc.Sobol(d=dim, scramble=True, seed=0).random(count)
    g = norm.ppf(np.clip(sob, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def approachability_excess(game: VectorPayoffGame, target: ConvexBody, direction):
    """``min_p max_j direction . U(p, j) - support(target, direction)``; <= 0 for approachable convex targets."""
    sol = solve_matrix_game(game.scalarized(direction))
    return sol.value - support(target, direction)


def check_convex_approachable(game: VectorPayoffGame, target: ConvexBody, directions=None,
                              tolerance=1e-9, refinements=32):
    """Blackwell's dual test for a closed convex target, on sampled directions.

    Sound when it answers ``False``; a ``True`` only covers the sampled
    directions (equiangular in 2D, scrambled Sobol on the sphere otherwise)
    plus a local refinement around the worst one.
    """
    if target.dim != game.dim:
        raise GeometryError("target dimension differs from the payoff dimension")
    if directions is None:
        directions = 512 if game.dim == 2 else 4096
    if directions < 8:
        raise ValueError("need at least 8 directions")
    dirs = _directions(game.dim, directions)
    excess = np.array([approachability_excess(game, target, d) for d in dirs])
    worst = int(np.argmax(excess))
    if excess[worst] > tolerance:
        return False
    rng = np.random.default_rng(1)
    spread = 2 * math.pi / directions
    base = dirs[worst]
    for _ in range(refinements):
        d = base + spread * rng.normal(size=game.dim)
        d /= np.linalg.norm(d)
        if approachability_excess(game, target, d) > tolerance:
            return False
    return True


@dataclass(frozen=True)
class ScenarioCheck:
    safe_actions: list
    safe_gap: float
    c1_holds: bool | None
    c2_holds: bool


def check_conditions(game, region: Region, target: ConvexBody | None, safe_mix=None,
                     directions=None, tolerance=1e-9) -> ScenarioCheck:
    """The two necessary conditions: approachability of the target and a safe action."""
    safe = find_safe_actions(game, region)
    gap = 0.0
    if safe:
        mix = safe_mix if safe_mix is not None else np.eye(game.num_actions_p1)[safe[0]]
        gap = safety_gap(game, region, mix)
    c1 = None
    if target is not None:
        c1 = check_convex_approachable(game, target, directions, tolerance)
    return ScenarioCheck(safe_actions=safe, safe_gap=gap, c1_holds=c1, c2_holds=bool(safe))

