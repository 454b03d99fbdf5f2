"""Geometric primitives for payoff-space sets.

Two families of sets are used throughout the package:

* convex bodies (closed): targets, the feasible set and response sets;
* regions (open by default): the constraint set a running average must stay in.

Every point-valued argument may carry leading batch axes, i.e. have shape
``(..., n)``; results then have the matching batch shape.  The simulator relies
on this to advance many runs at once.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

PROJECTION_TOL = 1e-9
PROJECTION_MAX_ITER = 10_000
FEASIBILITY_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input (dimension mismatch, empty set, ...)."""


class ProjectionError(GeometryError):
    """Iterative projection hit its iteration cap."""

    def __init__(self, message, best, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.best = best
        self.residual = residual


def _as_points(x, dim=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        raise GeometryError("a point needs at least one coordinate")
    if dim is not None and x.shape[-1] != dim:
        raise GeometryError(f"dimension mismatch: got {x.shape[-1]}, expected {dim}")
    return x


@dataclass(frozen=True)
class Hyperplane:
    """The set ``{x : normal . x = offset}``.

    ``upper`` is the closed half-space ``normal . x >= offset`` and ``lower``
    the opposite one.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(normal))
        if not (0.0 < norm < math.inf):
            raise GeometryError("hyperplane normal must have finite nonzero norm")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self):
        return self.normal.shape[0]

    def signed_value(self, x):
        x = _as_points(x, self.dim)
        return x @ self.normal - self.offset

    def in_upper(self, x, tol=0.0):
        return self.signed_value(x) >= -tol

    def in_lower(self, x, tol=0.0):
        return self.signed_value(x) <= tol


# ---------------------------------------------------------------------------
# convex bodies


@dataclass(frozen=True)
class SinglePoint:
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _as_points(self.point).reshape(-1))

    @property
    def dim(self):
        return self.point.shape[0]


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_points(self.center).reshape(-1))
        if not self.radius >= 0:
            raise GeometryError("ball radius must be >= 0")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.shape[0]


@dataclass(frozen=True)
class HullOfPoints:
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0 or pts.ndim != 2:
            raise GeometryError("hull needs a nonempty (k, n) array of points")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class HalfspacePolytope:
    """Intersection of closed half-spaces ``normals @ x <= offsets``."""

    normals: np.ndarray
    offsets: np.ndarray
    _vertices: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        if normals.shape[0] != offsets.shape[0] or normals.shape[0] == 0:
            raise GeometryError("polytope needs matching nonempty normals/offsets")
        if np.any(np.linalg.norm(normals, axis=1) == 0):
            raise GeometryError("polytope normal with zero norm")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_hyperplanes(cls, planes: Sequence[tuple[Hyperplane, str]]):
        """Build from ``(hyperplane, side)`` pairs, side ``"-"`` (lower) or ``"+"`` (upper)."""
        normals, offsets = [], []
        for plane, side in planes:
            if side == "-":
                normals.append(plane.normal)
                offsets.append(plane.offset)
            elif side == "+":
                normals.append(-plane.normal)
                offsets.append(-plane.offset)
            else:
                raise GeometryError(f"unknown side marker {side!r}")
        return cls(np.array(normals), np.array(offsets))

    @property
    def dim(self):
        return self.normals.shape[1]

    def vertices(self):
        """Vertex enumeration by brute force over n-subsets of constraints (small n only)."""
        if self._vertices:
            return self._vertices[0]
        n = self.dim
        found = []
        for idx in itertools.combinations(range(len(self.offsets)), n):
            a = self.normals[list(idx)]
            if abs(np.linalg.det(a)) < 1e-12:
                continue
            v = np.linalg.solve(a, self.offsets[list(idx)])
            if np.all(self.normals @ v <= self.offsets + 1e-9):
                if not any(np.allclose(v, w, atol=1e-9) for w in found):
                    found.append(v)
        if not found:
            raise GeometryError("polytope is empty or unbounded (no vertices)")
        verts = np.array(found)
        self._vertices.append(verts)
        return verts


ConvexBody = Union[SinglePoint, Ball, HullOfPoints, HalfspacePolytope]


# ---------------------------------------------------------------------------
# regions (the constraint set)


@dataclass(frozen=True)
class OpenHalfspaceIntersection:
    """``{x : normals @ x < offsets}``; ``closed=True`` switches to ``<=``.

    No half-spaces means the whole space.
    """

    normals: np.ndarray
    offsets: np.ndarray
    closed: bool = False

    def __post_init__(self):
        normals = np.asarray(self.normals, dtype=float)
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        if normals.ndim != 2 or normals.shape[0] != offsets.shape[0]:
            raise GeometryError("need a (k, n) normal array and k offsets")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms == 0):
            raise GeometryError("half-space normal with zero norm")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "_norms", norms)

    convex = True

    @classmethod
    def whole_space(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self):
        return self.normals.shape[1]

    def slacks(self, x):
        """Signed Euclidean clearances to each boundary hyperplane, shape ``(..., k)``."""
        return (self.offsets - x @ self.normals.T) / self._norms


@dataclass(frozen=True)
class OpenBoxUnion:
    """Union of open axis-aligned boxes ``lo < x < hi``; ``closed=True`` uses ``<=``."""

    lo: np.ndarray
    hi: np.ndarray
    closed: bool = False

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_2d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.shape[0] == 0:
            raise GeometryError("need matching nonempty (k, n) lo/hi arrays")
        if not np.all(lo < hi):
            raise GeometryError("every box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    convex = False

    @property
    def dim(self):
        return self.lo.shape[1]

    def box_clearances(self, x):
        """Per-box signed clearance ``min(x - lo, hi - x)``, shape ``(..., k)``."""
        x = x[..., None, :]
        return np.minimum(x - self.lo, self.hi - x).min(axis=-1)


Region = Union[OpenHalfspaceIntersection, OpenBoxUnion]


def box_region(center, half_widths, closed=False) -> OpenBoxUnion:
    center = np.asarray(center, dtype=float)
    half = np.broadcast_to(np.asarray(half_widths, dtype=float), center.shape)
    return OpenBoxUnion(center - half, center + half, closed=closed)


# ---------------------------------------------------------------------------
# projections


def _min_norm_point(points, tol=PROJECTION_TOL, max_iter=PROJECTION_MAX_ITER):
    """Wolfe's nearest-point algorithm: the minimum-norm point of conv(points).

    Returns ``(point, weights)`` with weights on the rows of ``points``.
    """
    k = points.shape[0]
    scale = max(1.0, float(np.max(np.sum(points * points, axis=1))))
    first = int(np.argmin(np.sum(points * points, axis=1)))
    support = [first]
    weights = np.array([1.0])
    x = points[first].copy()
    for _ in range(max_iter):
        dots = points @ x
        j = int(np.argmin(dots))
        gap = float(x @ x - dots[j])
        if gap <= tol * scale or j in support:
            full = np.zeros(k)
            full[support] = weights
            return x, full
        support.append(j)
        weights = np.append(weights, 0.0)
        for _minor in range(max_iter):
            s = points[support]
            m = len(support)
            system = np.zeros((m + 1, m + 1))
            system[:m, :m] = s @ s.T
            system[:m, m] = 1.0
            system[m, :m] = 1.0
            rhs = np.zeros(m + 1)
            rhs[m] = 1.0
            lam = np.linalg.lstsq(system, rhs, rcond=None)[0][:m]
            if np.all(lam > tol):
                weights = lam
                break
            shrink = lam < weights
            ratios = weights[shrink] / (weights[shrink] - lam[shrink])
            theta = float(min(1.0, ratios.min())) if ratios.size else 1.0
            weights = theta * lam + (1.0 - theta) * weights
            keep = weights > tol
            if not np.any(keep):
                keep[int(np.argmax(weights))] = True
            support = [sv for sv, kp in zip(support, keep) if kp]
            weights = weights[keep]
            weights = weights / weights.sum()
        x = weights @ points[support]
    full = np.zeros(k)
    full[support] = weights
    residual = float(x @ x - np.min(points @ x))
    raise ProjectionError("nearest-point iteration did not converge", x, residual)


def _project_polyhedron(x, normals, offsets, tol=PROJECTION_TOL, max_iter=PROJECTION_MAX_ITER):
    """Hildreth's dual coordinate ascent for ``min |y - x|`` s.t. ``normals @ y <= offsets``."""
    if np.all(normals @ x <= offsets):
        return x.copy()
    if normals.shape[0] == 1:
        a = normals[0]
        return x - max(0.0, (a @ x - offsets[0]) / (a @ a)) * a
    y = x.copy()
    mu = np.zeros(len(offsets))
    sq = np.sum(normals * normals, axis=1)
    scale = max(1.0, float(np.max(np.abs(offsets))), float(np.max(np.abs(x))))
    residual = math.inf
    for _ in range(max_iter):
        for k in range(len(offsets)):
            a = normals[k]
            new = max(0.0, mu[k] + (a @ y - offsets[k]) / sq[k])
            if new != mu[k]:
                y -= (new - mu[k]) * a
                mu[k] = new
        slack = normals @ y - offsets
        residual = max(float(np.max(slack)), float(np.max(np.abs(mu * slack))))
        if residual <= tol * scale:
            return y
    raise ProjectionError("polyhedron projection did not converge", y, residual)


def _snap(offset, shifted):
    """Round a nearest-point offset that is zero up to rounding error to exactly zero."""
    if np.linalg.norm(offset) <= 1e-12 * max(1.0, float(np.max(np.abs(shifted)))):
        return np.zeros_like(offset)
    return offset


def _batch_apply(x, fn, out_shape):
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty((flat.shape[0],) + out_shape)
    for row in range(flat.shape[0]):
        out[row] = fn(flat[row])
    return out.reshape(x.shape[:-1] + out_shape)


def project(x, body: ConvexBody):
    """Nearest point of ``body`` to ``x`` (closed form for points and balls)."""
    x = _as_points(x, body.dim)
    if isinstance(body, SinglePoint):
        return np.broadcast_to(body.point, x.shape).copy()
    if isinstance(body, Ball):
        diff = x - body.center
        norm = np.linalg.norm(diff, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(norm > body.radius, body.radius / norm, 1.0)
        return body.center + diff * factor
    if isinstance(body, HullOfPoints):
        pts = body.points
        if pts.shape[0] == 1:
            return np.broadcast_to(pts[0], x.shape).copy()
        return _batch_apply(x, lambda p: p + _snap(_min_norm_point(pts - p)[0], pts - p), (body.dim,))
    if isinstance(body, HalfspacePolytope):
        return _batch_apply(
            x, lambda p: _project_polyhedron(p, body.normals, body.offsets), (body.dim,)
        )
    raise GeometryError(f"unsupported body {type(body).__name__}")


def distance_to_body(x, body: ConvexBody):
    """Euclidean distance from ``x`` to the closed convex ``body``."""
    x = _as_points(x, body.dim)
    if isinstance(body, SinglePoint):
        return np.linalg.norm(x - body.point, axis=-1)
    if isinstance(body, Ball):
        return np.maximum(np.linalg.norm(x - body.center, axis=-1) - body.radius, 0.0)
    return np.linalg.norm(x - project(x, body), axis=-1)


def support(body: ConvexBody, direction):
    """``sup_{y in body} direction . y``."""
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.shape[0] != body.dim:
        raise GeometryError("dimension mismatch")
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        raise GeometryError("support needs a nonzero direction")
    if isinstance(body, SinglePoint):
        return float(d @ body.point)
    if isinstance(body, Ball):
        return float(d @ body.center + body.radius * norm)
    if isinstance(body, HullOfPoints):
        return float(np.max(body.points @ d))
    if isinstance(body, HalfspacePolytope):
        return float(np.max(body.vertices() @ d))
    raise GeometryError(f"unsupported body {type(body).__name__}")


def extreme_samples(body: ConvexBody, count=16):
    """Points of ``body`` that generate it (vertices) or sample its boundary (balls)."""
    if isinstance(body, SinglePoint):
        return body.point[None, :]
    if isinstance(body, HullOfPoints):
        return body.points
    if isinstance(body, HalfspacePolytope):
        return body.vertices()
    if isinstance(body, Ball):
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(count, body.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return body.center + body.radius * dirs
    raise GeometryError(f"unsupported body {type(body).__name__}")


def interior_contains(body, x):
    """Strict interior membership for a checkpoint set (region or convex body)."""
    if isinstance(body, (OpenHalfspaceIntersection, OpenBoxUnion)):
        return region_contains(body, x)
    x = _as_points(x, body.dim)
    if isinstance(body, SinglePoint):
        return np.zeros(x.shape[:-1], dtype=bool)
    if isinstance(body, Ball):
        return np.linalg.norm(x - body.center, axis=-1) < body.radius
    if isinstance(body, HalfspacePolytope):
        return np.all(x @ body.normals.T < body.offsets, axis=-1)
    if isinstance(body, HullOfPoints):
        try:
            eq = ConvexHull(body.points).equations
        except (QhullError, ValueError):
            return np.zeros(x.shape[:-1], dtype=bool)
        return np.all(x @ eq[:, :-1].T + eq[:, -1] < 0, axis=-1)
    raise GeometryError(f"unsupported set {type(body).__name__}")


# ---------------------------------------------------------------------------
# regions


def region_contains(region: Region, x):
    x = _as_points(x, region.dim)
    if isinstance(region, OpenHalfspaceIntersection):
        if region.normals.shape[0] == 0:
            return np.ones(x.shape[:-1], dtype=bool)
        vals = x @ region.normals.T
        ok = vals <= region.offsets if region.closed else vals < region.offsets
        return np.all(ok, axis=-1)
    if isinstance(region, OpenBoxUnion):
        xb = x[..., None, :]
        if region.closed:
            inside = (region.lo <= xb) & (xb <= region.hi)
        else:
            inside = (region.lo < xb) & (xb < region.hi)
        return np.any(np.all(inside, axis=-1), axis=-1)
    raise GeometryError(f"unsupported region {type(region).__name__}")


def distance_to_complement(x, region: Region, feasible: ConvexBody | None = None):
    """Lower bound on ``d(x, F \\ D)``.

    For half-space intersections this is the exact distance to the complement
    of ``D`` in the whole space (``inf`` when ``D`` is everything).  For box
    unions it is the best clearance among the boxes containing ``x``, which is
    sound because ``F \\ D`` lies outside each of them.  Points outside ``D``
    get 0.

    ``feasible`` enables the precondition check that ``x`` lies in ``F``.
    """
    x = _as_points(x, region.dim)
    if feasible is not None:
        gap = distance_to_body(x, feasible)
        if np.any(gap > FEASIBILITY_TOL):
            raise GeometryError(f"point outside the feasible set (distance {np.max(gap):.3e})")
    if isinstance(region, OpenHalfspaceIntersection):
        if region.normals.shape[0] == 0:
            return np.full(x.shape[:-1], math.inf)
        return np.maximum(region.slacks(x).min(axis=-1), 0.0)
    if isinstance(region, OpenBoxUnion):
        clear = region.box_clearances(x)
        return np.maximum(clear.max(axis=-1), 0.0)
    raise GeometryError(f"unsupported region {type(region).__name__}")


def distance_to_region(y, region: Region):
    """Exact ``d(y, D)`` (distance to the closure)."""
    y = _as_points(y, region.dim)
    if isinstance(region, OpenBoxUnion):
        yb = y[..., None, :]
        clamped = np.clip(yb, region.lo, region.hi)
        return np.linalg.norm(yb - clamped, axis=-1).min(axis=-1)
    if isinstance(region, OpenHalfspaceIntersection):
        if region.normals.shape[0] == 0:
            return np.zeros(y.shape[:-1])
        proj = _batch_apply(
            y, lambda p: _project_polyhedron(p, region.normals, region.offsets), (region.dim,)
        )
        return np.linalg.norm(y - proj, axis=-1)
    raise GeometryError(f"unsupported region {type(region).__name__}")


# ---------------------------------------------------------------------------
# brute-force grid oracle (2D)


@dataclass(frozen=True)
class GridOracle:
    """Regular grid over a bounding box, used as a brute-force check."""

    lo: np.ndarray
    hi: np.ndarray
    resolution: int = 400

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if int(self.resolution) < 2:
            raise GeometryError("grid resolution must be >= 2")
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise GeometryError("grid bounding box needs lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "resolution", int(self.resolution))

    @classmethod
    def around(cls, points, margin=0.25, resolution=400):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts.min(axis=0) - margin, pts.max(axis=0) + margin, resolution)

    @property
    def dim(self):
        return self.lo.shape[0]

    @property
    def spacing(self):
        return (self.hi - self.lo) / (self.resolution - 1)

    @property
    def cell_diagonal(self):
        return float(np.linalg.norm(self.spacing))

    def axes(self):
        return [np.linspace(a, b, self.resolution) for a, b in zip(self.lo, self.hi)]

    def points(self):
        """All grid points, shape ``(resolution, ..., resolution, dim)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def mask(self, predicate: Callable[[np.ndarray], np.ndarray]):
        return np.asarray(predicate(self.points()), dtype=bool)


def grid_path_connected(predicate: Callable[[np.ndarray], np.ndarray], oracle: GridOracle):
    """True iff grid cells satisfying ``predicate`` form exactly one 4-connected component.

    Resolution dependent: thin necks narrower than a grid cell can be missed.
    """
    if oracle.dim != 2:
        raise GeometryError("grid connectivity check is 2D only")
    mask = oracle.mask(predicate)
    _, count = ndimage.label(mask)
    return count == 1


# ---------------------------------------------------------------------------
# 2D convex hull helpers used by the path-condition checks


def circle_points(center, radius, count=64, circumscribed=True):
    """Polygon approximating a circle; ``circumscribed`` makes it contain the disc."""
    center = np.asarray(center, dtype=float)
    r = radius / math.cos(math.pi / count) if circumscribed else radius
    ang = 2 * math.pi * np.arange(count) / count
    return center + r * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def hull_predicate(points, strict=False):
    """Vectorized membership predicate for conv(points) in 2D."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    try:
        eq = ConvexHull(pts).equations
    except (QhullError, ValueError):
        body = HullOfPoints(pts)

        def degenerate(x):
            if strict:
                return np.zeros(np.shape(x)[:-1], dtype=bool)
            return distance_to_body(x, body) <= 1e-12

        return degenerate

    def inside(x):
        vals = np.asarray(x) @ eq[:, :-1].T + eq[:, -1]
        return np.all(vals < 0 if strict else vals <= 1e-12, axis=-1)

    return inside
