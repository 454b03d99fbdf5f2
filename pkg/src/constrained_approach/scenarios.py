"""Built-in scenarios: game, target ``A``, constraint ``D`` and the strategies and adversaries that go with them."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .game import GameError, VectorPayoffGame, find_safe_actions, pure
from .geometry import (
    Ball,
    ConvexBody,
    GeometryError,
    HalfspacePolytope,
    HullOfPoints,
    OpenBoxUnion,
    OpenHalfspaceIntersection,
    Region,
    SinglePoint,
    box_region,
)
from .strategies import (
    AdaptivePush,
    BlackwellPolicy,
    BlockPlan,
    BlockPolicy,
    Scripted,
    SigmaStarPolicy,
    Stationary,
    StationaryPolicy,
    WaypointPlan,
    WaypointPolicy,
)

DEFAULT_ALPHA = 0.25
DEFAULT_ALPHA_PRIME = 0.125
DEFAULT_INITIAL_DURATION = 1000


class Expectation(enum.Enum):
    APPROACHABLE_WHILE_REMAINING = "ApproachableWhileRemaining"
    ONLY_WITH_HIGH_PROBABILITY = "OnlyWithHighProbability"
    IMPOSSIBLE = "Impossible"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    game: VectorPayoffGame
    target: ConvexBody
    region: Region
    alpha: float | None
    alpha_prime: float | None
    expectation: Expectation | None
    default_strategy: str
    strategy_names: tuple
    waypoint_plan: WaypointPlan | None = None
    block_plan: BlockPlan | None = None
    description: str = ""
    adversary_names: tuple = field(default=("uniform", "skewed", "push", "script_L", "script_R", "script_LLR"))

    def __post_init__(self):
        if self.alpha is not None and self.alpha_prime is not None:
            if not 0 < self.alpha_prime < self.alpha < 0.5:
                raise ScenarioError("need 0 < alpha_prime < alpha < 1/2")
        if self.target.dim != self.game.dim or self.region.dim != self.game.dim:
            raise ScenarioError("target/region dimension differs from the payoff dimension")

    def make_strategy(self, name=None, **params):
        """Fresh policy value for ``name`` (defaults to the scenario's recommended strategy)."""
        name = name or self.default_strategy
        if name not in self.strategy_names:
            raise ScenarioError(f"strategy {name!r} not available for {self.name}; "
                                f"choose from {', '.join(self.strategy_names)}")
        if name == "sigma_star":
            return SigmaStarPolicy(self.game, self.region, self.target,
                                   safe_action=params.get("safe_action"), kappa=params.get("kappa"),
                                   audit_invariants=params.get("audit", False))
        if name == "blackwell":
            return BlackwellPolicy(self.game, self.target, audit_certificates=params.get("audit", False))
        if name == "waypoint":
            plan = self.waypoint_plan
            if "initial_duration" in params:
                plan = _with_duration(plan, params["initial_duration"])
            return WaypointPolicy(self.game, plan)
        if name == "block":
            return BlockPolicy(self.game, self.block_plan)
        if name == "stationary":
            mix = params.get("mix")
            if mix is None:
                raise ScenarioError("stationary strategy needs a 'mix'")
            return StationaryPolicy(self.game, np.asarray(mix, dtype=float))
        raise ScenarioError(f"unknown strategy {name!r}")

    def make_adversary(self, name="uniform", **params):
        cols = self.game.num_actions_p2
        if name == "uniform":
            return Stationary(np.full(cols, 1.0 / cols))
        if name == "skewed":
            return Stationary(_skewed(cols))
        if name == "push":
            return AdaptivePush(self.game, self.region, params.get("guess"))
        if name.startswith("script_"):
            letters = name[len("script_"):]
            return Scripted(tuple(_col(self.game, c) for c in letters), cols)
        if name == "stationary":
            return Stationary(np.asarray(params["mix"], dtype=float))
        if name == "scripted":
            return Scripted(tuple(_col(self.game, c) for c in params["actions"]), cols)
        raise ScenarioError(f"unknown adversary {name!r}")


def _col(game, c):
    if isinstance(c, str):
        try:
            return game.col_index(c)
        except ValueError:
            raise ScenarioError(f"unknown column action {c!r}") from None
    return int(c)


def _skewed(cols):
    mix = np.full(cols, 0.1 / (cols - 1))
    mix[0] = 0.9
    return mix


def _with_duration(plan: WaypointPlan, duration):
    return WaypointPlan(plan.safe_mix, plan.phase_mixes, plan.checkpoints, int(duration),
                        plan.final_target, plan.delta, plan.min_crossing)


# ---------------------------------------------------------------------------
# payoff matrices


def _three_action_game():
    u = [
        [(0, 1), (0, 1)],
        [(1, 0), (-1, 0)],
        [(-1, 0), (1, 0)],
    ]
    return VectorPayoffGame(np.array(u, dtype=float), ("T", "B1", "B2"), ("L", "R"))


def _two_arm_game():
    u = [
        [(1, 2), (2, 2)],
        [(2, 2), (1, 2)],
        [(1, 1), (2, 1)],
        [(2, 1), (1, 1)],
    ]
    return VectorPayoffGame(np.array(u, dtype=float), ("T1", "T2", "B1", "B2"), ("L", "R"))


def _ladder_game():
    u = [
        [(1, 1), (1, 1)],
        [(4, 1), (4, 1)],
        [(2, 3), (4, 3)],
        [(4, 3), (2, 3)],
    ]
    return VectorPayoffGame(np.array(u, dtype=float), ("x0", "x1", "x2", "x3"), ("L", "R"))


def _block_game():
    u = [
        [(1, 2), (1, 2)],
        [(2, 1), (2, 1)],
        [(2, 3), (3, 2)],
    ]
    return VectorPayoffGame(np.array(u, dtype=float), ("T1", "T2", "B"), ("L", "R"))


def _boxes(*boxes):
    lo = np.array([b[0] for b in boxes], dtype=float)
    hi = np.array([b[1] for b in boxes], dtype=float)
    return OpenBoxUnion(lo, hi)


# ---------------------------------------------------------------------------
# builders


def _convex_demo(alpha, alpha_prime, initial_duration):
    game = _three_action_game()
    region = OpenHalfspaceIntersection(np.array([[-1.0, 0.0]]), np.array([alpha]))
    return Scenario(
        name="convex_demo", game=game, target=SinglePoint(np.zeros(2)), region=region,
        alpha=alpha, alpha_prime=alpha_prime,
        expectation=Expectation.APPROACHABLE_WHILE_REMAINING,
        default_strategy="sigma_star", strategy_names=("sigma_star", "blackwell", "stationary"),
        description="three-action game, open half-plane D = {x > -alpha}, A = {(0, 0)}",
    )


def _impossibility(alpha, alpha_prime, initial_duration):
    game = _three_action_game()
    region = OpenHalfspaceIntersection(np.array([[-1.0, 0.0]]), np.array([0.0]), closed=True)
    return Scenario(
        name="impossibility_closed_halfplane", game=game, target=SinglePoint(np.zeros(2)),
        region=region, alpha=alpha, alpha_prime=alpha_prime, expectation=Expectation.IMPOSSIBLE,
        default_strategy="blackwell", strategy_names=("blackwell", "sigma_star", "stationary"),
        description="three-action game, closed half-plane D = {x >= 0}, A = {(0, 0)}",
    )


def _two_arms(alpha, alpha_prime, initial_duration):
    game = _two_arm_game()
    region = _boxes(
        ((1 - alpha, 2 - alpha), (2 + alpha, 2 + alpha)),
        ((1.5 - alpha, 1 - alpha), (1.5 + alpha, 2 + alpha)),
    )
    target = Ball(np.array([1.5, 1.0]), alpha_prime)
    plan = WaypointPlan(
        safe_mix=np.array([0.5, 0.5, 0.0, 0.0]),
        phase_mixes=(np.array([0.0, 0.0, 0.5, 0.5]),),
        checkpoints=(box_region((1.5, 1.0), (0.88 * alpha_prime, 0.12 * alpha_prime)),),
        initial_duration=initial_duration,
        final_target=target,
        delta=0.48 * alpha_prime,
    )
    return Scenario(
        name="nonconvex_two_arms", game=game, target=target, region=region,
        alpha=alpha, alpha_prime=alpha_prime, expectation=Expectation.ONLY_WITH_HIGH_PROBABILITY,
        default_strategy="waypoint", strategy_names=("waypoint", "blackwell", "stationary"),
        waypoint_plan=plan,
        description="four-action game, T-shaped union of open boxes, A = ball((3/2, 1), alpha')",
    )


def _ladder(alpha, alpha_prime, initial_duration):
    game = _ladder_game()
    region = _boxes(
        ((1 - alpha, 1 - alpha), (3 + alpha, 1 + alpha)),
        ((3 - alpha, 1 - alpha), (3 + alpha, 3 + alpha)),
    )
    target = Ball(np.array([3.0, 3.0]), alpha_prime)
    plan = WaypointPlan(
        safe_mix=pure(0, 4),
        phase_mixes=(pure(1, 4), np.array([0.0, 0.0, 0.5, 0.5])),
        checkpoints=(
            box_region((3.0, 1.0), (0.4 * alpha, 0.4 * alpha)),
            box_region((3.0, 3.0), (0.88 * alpha_prime, 0.12 * alpha_prime)),
        ),
        initial_duration=initial_duration,
        final_target=target,
        delta=0.48 * alpha_prime,
    )
    return Scenario(
        name="waypoint_ladder", game=game, target=target, region=region,
        alpha=alpha, alpha_prime=alpha_prime, expectation=Expectation.ONLY_WITH_HIGH_PROBABILITY,
        default_strategy="waypoint", strategy_names=("waypoint", "blackwell", "stationary"),
        waypoint_plan=plan,
        description="four-action game, L-shaped union of open boxes, A = ball((3, 3), alpha')",
    )


def _block(alpha, alpha_prime, initial_duration):
    game = _block_game()
    region = _boxes(
        ((2 - alpha, 2 - alpha), (2 + alpha, 3 + alpha)),
        ((2 - alpha, 2 - alpha), (3 + alpha, 2 + alpha)),
    )
    plan = BlockPlan(opener=2, replies=(1, 0))
    return Scenario(
        name="block_reactive", game=game, target=SinglePoint(np.array([2.0, 2.0])), region=region,
        alpha=alpha, alpha_prime=alpha_prime, expectation=Expectation.APPROACHABLE_WHILE_REMAINING,
        default_strategy="block", strategy_names=("block", "blackwell", "stationary"),
        block_plan=plan,
        description="three-action game, L-shaped union of open boxes around (2, 2), A = {(2, 2)}",
    )


_BUILDERS = {
    "convex_demo": _convex_demo,
    "impossibility_closed_halfplane": _impossibility,
    "nonconvex_two_arms": _two_arms,
    "waypoint_ladder": _ladder,
    "block_reactive": _block,
}

SCENARIO_NAMES = tuple(_BUILDERS)


def build_scenario(name, overrides=None) -> Scenario:
    """Built-in scenario ``name``; ``overrides`` may set ``alpha``, ``alpha_prime``, ``initial_duration``."""
    if name not in _BUILDERS:
        raise ScenarioError(f"unknown scenario {name!r}; valid names: {', '.join(SCENARIO_NAMES)}")
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"alpha", "alpha_prime", "initial_duration"}
    if unknown:
        raise ScenarioError(f"unknown scenario overrides: {', '.join(sorted(unknown))}")
    alpha = float(overrides.get("alpha", DEFAULT_ALPHA))
    alpha_prime = float(overrides.get("alpha_prime", DEFAULT_ALPHA_PRIME))
    if not 0 < alpha_prime < alpha < 0.5:
        raise ScenarioError("need 0 < alpha_prime < alpha < 1/2")
    duration = int(overrides.get("initial_duration", DEFAULT_INITIAL_DURATION))
    return _BUILDERS[name](alpha, alpha_prime, duration)


# ---------------------------------------------------------------------------
# plain-data form of sets, used by inline scenario definitions in configs


def body_to_dict(body: ConvexBody):
    if isinstance(body, SinglePoint):
        return {"kind": "point", "point": body.point.tolist()}
    if isinstance(body, Ball):
        return {"kind": "ball", "center": body.center.tolist(), "radius": float(body.radius)}
    if isinstance(body, HullOfPoints):
        return {"kind": "hull", "points": body.points.tolist()}
    if isinstance(body, HalfspacePolytope):
        return {"kind": "polytope", "normals": body.normals.tolist(), "offsets": body.offsets.tolist()}
    raise ScenarioError(f"cannot serialize {type(body).__name__}")


def body_from_dict(d) -> ConvexBody:
    kind = d.get("kind")
    try:
        if kind == "point":
            return SinglePoint(np.asarray(d["point"], dtype=float))
        if kind == "ball":
            return Ball(np.asarray(d["center"], dtype=float), float(d["radius"]))
        if kind == "hull":
            return HullOfPoints(np.asarray(d["points"], dtype=float))
        if kind == "polytope":
            return HalfspacePolytope(np.asarray(d["normals"], dtype=float), np.asarray(d["offsets"], dtype=float))
    except KeyError as exc:
        raise ScenarioError(f"set of kind {kind!r} is missing field {exc.args[0]!r}") from None
    except (GeometryError, ValueError, TypeError) as exc:
        raise ScenarioError(f"invalid {kind} set: {exc}") from None
    raise ScenarioError(f"unknown set kind {kind!r} (point, ball, hull, polytope)")


def region_to_dict(region: Region):
    if isinstance(region, OpenHalfspaceIntersection):
        return {"kind": "halfspaces", "normals": region.normals.tolist(),
                "offsets": region.offsets.tolist(), "closed": bool(region.closed)}
    if isinstance(region, OpenBoxUnion):
        return {"kind": "boxes", "lo": region.lo.tolist(), "hi": region.hi.tolist(),
                "closed": bool(region.closed)}
    raise ScenarioError(f"cannot serialize {type(region).__name__}")


def region_from_dict(d) -> Region:
    kind = d.get("kind")
    try:
        if kind == "halfspaces":
            return OpenHalfspaceIntersection(np.asarray(d["normals"], dtype=float),
                                             np.asarray(d["offsets"], dtype=float), bool(d.get("closed", False)))
        if kind == "boxes":
            return OpenBoxUnion(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float),
                                bool(d.get("closed", False)))
    except KeyError as exc:
        raise ScenarioError(f"region of kind {kind!r} is missing field {exc.args[0]!r}") from None
    except (GeometryError, ValueError, TypeError) as exc:
        raise ScenarioError(f"invalid {kind} region: {exc}") from None
    raise ScenarioError(f"unknown region kind {kind!r} (halfspaces, boxes)")


def scenario_to_dict(s: Scenario):
    """Plain-data description of the game and sets (strategy plans are not included)."""
    return {
        "name": s.name,
        "payoff": s.game.payoff.tolist(),
        "row_names": list(s.game.row_names),
        "col_names": list(s.game.col_names),
        "target": body_to_dict(s.target),
        "region": region_to_dict(s.region),
    }


def scenario_from_dict(d) -> Scenario:
    """Inline scenario: game, target and region; strategies are sigma_star, blackwell, stationary."""
    required = ("payoff", "target", "region")
    for key in required:
        if key not in d:
            raise ScenarioError(f"inline scenario is missing {key!r}")
    unknown = set(d) - {"name", "payoff", "row_names", "col_names", "target", "region"}
    if unknown:
        raise ScenarioError(f"unknown inline scenario keys: {', '.join(sorted(unknown))}")
    try:
        game = VectorPayoffGame(np.asarray(d["payoff"], dtype=float), tuple(d.get("row_names", ())),
                                tuple(d.get("col_names", ())))
    except (GameError, ValueError) as exc:
        raise ScenarioError(f"invalid payoff: {exc}") from None
    region = region_from_dict(d["region"])
    names = ("sigma_star", "blackwell", "stationary") if find_safe_actions(game, region) else (
        "blackwell", "stationary")
    return Scenario(
        name=d.get("name", "inline"), game=game, target=body_from_dict(d["target"]), region=region,
        alpha=None, alpha_prime=None, expectation=None,
        default_strategy=names[0], strategy_names=names, description="inline scenario",
    )
