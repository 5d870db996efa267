"""Velocity constraint sets and the radial constraint operator.

A constraint set is a bounded closed subset of ``R^r`` containing the origin.
It need not be convex. The operator implemented here keeps the direction of
its argument and shrinks its length to the radial *reach* of the set: the
largest ``beta`` such that the whole segment ``[0, beta * d]`` lies in the
set.

Shapes built from balls and axis-aligned boxes (and unions/intersections of
them) have their reach computed exactly from ray/primitive intervals. A
:class:`SampledOracle` wraps an arbitrary membership predicate; its reach is
found by dense sampling along the ray followed by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels
from .errors import ConstraintError, EmptyReach, NonUnitDirection, OriginNotMember

MEMBERSHIP_TOL = 1e-9
UNIT_TOL = 1e-9
BISECTION_STEPS = 60
DEFAULT_RELATIVE_RESOLUTION = 1e-4


# --------------------------------------------------------------------------
# shapes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    radius: float
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ConstraintError(f"ball radius must be positive, got {self.radius}")

    def _center(self, r: int) -> NDArray:
        return np.zeros(r) if self.center is None else np.asarray(self.center, float)

    def contains(self, points: NDArray) -> NDArray:
        c = self._center(points.shape[1])
        return np.linalg.norm(points - c, axis=1) <= self.radius + MEMBERSHIP_TOL

    def bounding_radius(self) -> float:
        c = 0.0 if self.center is None else float(np.linalg.norm(self.center))
        return c + self.radius

    def dimension(self) -> int | None:
        return None if self.center is None else len(self.center)


@dataclass(frozen=True)
class AxisBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ConstraintError("box bounds have different lengths")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ConstraintError(f"box lower {self.lower} exceeds upper {self.upper}")

    def contains(self, points: NDArray) -> NDArray:
        lo = np.asarray(self.lower) - MEMBERSHIP_TOL
        hi = np.asarray(self.upper) + MEMBERSHIP_TOL
        return np.all((points >= lo) & (points <= hi), axis=1)

    def bounding_radius(self) -> float:
        corner = np.maximum(np.abs(self.lower), np.abs(self.upper))
        return float(np.linalg.norm(corner))

    def dimension(self) -> int | None:
        return len(self.lower)


@dataclass(frozen=True)
class Union:
    members: tuple

    def __post_init__(self):
        if not self.members:
            raise ConstraintError("union needs at least one member")
        object.__setattr__(self, "members", tuple(self.members))

    def contains(self, points: NDArray) -> NDArray:
        out = np.zeros(points.shape[0], dtype=bool)
        for m in self.members:
            out |= m.contains(points)
        return out

    def bounding_radius(self) -> float:
        return max(m.bounding_radius() for m in self.members)

    def dimension(self) -> int | None:
        return _common_dimension(self.members)


@dataclass(frozen=True)
class Intersection:
    members: tuple

    def __post_init__(self):
        if not self.members:
            raise ConstraintError("intersection needs at least one member")
        object.__setattr__(self, "members", tuple(self.members))

    def contains(self, points: NDArray) -> NDArray:
        out = np.ones(points.shape[0], dtype=bool)
        for m in self.members:
            out &= m.contains(points)
        return out

    def bounding_radius(self) -> float:
        return min(m.bounding_radius() for m in self.members)

    def dimension(self) -> int | None:
        return _common_dimension(self.members)


@dataclass(frozen=True, eq=False)
class SampledOracle:
    """Set known only through a membership predicate.

    ``predicate`` takes an ``(N, r)`` array and returns ``N`` booleans when
    ``vectorized`` is true; otherwise it is called once per point with a
    length-``r`` vector.
    """

    predicate: Callable
    bounding_radius_: float
    dim: int
    vectorized: bool = False

    def contains(self, points: NDArray) -> NDArray:
        if self.vectorized:
            return np.asarray(self.predicate(points), dtype=bool)
        return np.fromiter((bool(self.predicate(p)) for p in points), bool, len(points))

    def bounding_radius(self) -> float:
        return float(self.bounding_radius_)

    def dimension(self) -> int | None:
        return self.dim


Shape = Ball | AxisBox | Union | Intersection | SampledOracle


def _common_dimension(members) -> int | None:
    dims = {m.dimension() for m in members} - {None}
    if len(dims) > 1:
        raise ConstraintError(f"members disagree on dimension: {sorted(dims)}")
    return dims.pop() if dims else None


def _is_analytic(shape) -> bool:
    if isinstance(shape, (Ball, AxisBox)):
        return True
    if isinstance(shape, (Union, Intersection)):
        return all(_is_analytic(m) for m in shape.members)
    return False


# --------------------------------------------------------------------------
# exact ray intervals
# --------------------------------------------------------------------------

def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    if not intervals:
        return []
    intervals = sorted(intervals)
    out = [list(intervals[0])]
    for lo, hi in intervals[1:]:
        if lo <= out[-1][1] + MEMBERSHIP_TOL:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


def _intersect(a: list, b: list) -> list[tuple[float, float]]:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo <= hi + MEMBERSHIP_TOL:
            out.append((lo, max(lo, hi)))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


class _Primitives:
    """Flattened balls and boxes of an analytic shape tree."""

    def __init__(self, shape, r: int):
        self.ball_centers, self.ball_radii = [], []
        self.box_lower, self.box_upper = [], []
        self.tree = self._flatten(shape, r)
        self.ball_centers = np.array(self.ball_centers, float).reshape(-1, r)
        self.ball_radii = np.array(self.ball_radii, float)
        self.box_lower = np.array(self.box_lower, float).reshape(-1, r)
        self.box_upper = np.array(self.box_upper, float).reshape(-1, r)

    def _flatten(self, shape, r):
        if isinstance(shape, Ball):
            self.ball_centers.append(shape._center(r))
            self.ball_radii.append(shape.radius)
            return ("ball", len(self.ball_radii) - 1)
        if isinstance(shape, AxisBox):
            self.box_lower.append(shape.lower)
            self.box_upper.append(shape.upper)
            return ("box", len(self.box_lower) - 1)
        kind = "union" if isinstance(shape, Union) else "intersection"
        return (kind, [self._flatten(m, r) for m in shape.members])

    def intervals(self, dirs: NDArray) -> list[list[tuple[float, float]]]:
        """Exact ``{t >= 0 : t d in set}`` as disjoint intervals, per direction."""
        if len(self.ball_radii):
            blo, bhi = _kernels.ray_ball_intervals(dirs, self.ball_centers, self.ball_radii)
        if len(self.box_lower):
            xlo, xhi = _kernels.ray_box_intervals(dirs, self.box_lower, self.box_upper)

        def walk(node, q):
            kind, arg = node
            if kind == "ball":
                lo = blo[q, arg]
                return [] if math.isnan(lo) else [(lo, bhi[q, arg])]
            if kind == "box":
                lo = xlo[q, arg]
                return [] if math.isnan(lo) else [(lo, xhi[q, arg])]
            parts = [walk(child, q) for child in arg]
            if kind == "union":
                return _merge([iv for part in parts for iv in part])
            acc = parts[0]
            for part in parts[1:]:
                acc = _intersect(acc, part)
            return acc

        return [walk(self.tree, q) for q in range(dirs.shape[0])]


# --------------------------------------------------------------------------
# public set object
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstrainedVector:
    input: NDArray
    output: NDArray
    e: float


@dataclass(eq=False)
class ConstraintSet:
    """A velocity constraint set ``V`` with ``0 in V``.

    Parameters
    ----------
    shape : shape tree built from :class:`Ball`, :class:`AxisBox`,
        :class:`Union`, :class:`Intersection` and :class:`SampledOracle`.
    dimension : ambient dimension ``r``. Required when the shape does not
        determine it (an origin-centred ball, for instance).
    resolution : ray-sampling step for non-analytic shapes. Defaults to
        ``1e-4 * bounding_radius``.
    """

    shape: object
    dimension: int | None = None
    resolution: float | None = None
    _prims: _Primitives | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        dim = self.shape.dimension()
        if self.dimension is None:
            if dim is None:
                raise ConstraintError("cannot infer the dimension; pass dimension=")
            self.dimension = dim
        elif dim is not None and dim != self.dimension:
            raise ConstraintError(f"shape has dimension {dim}, declared {self.dimension}")
        self.dimension = int(self.dimension)
        self.bounding_radius = float(self.shape.bounding_radius())
        if not self.bounding_radius > 0:
            raise ConstraintError("bounding radius must be positive")
        if self.resolution is None:
            self.resolution = DEFAULT_RELATIVE_RESOLUTION * self.bounding_radius
        self.analytic = _is_analytic(self.shape)
        if self.analytic:
            self._prims = _Primitives(self.shape, self.dimension)
        if not self.contains(np.zeros(self.dimension)):
            raise OriginNotMember(f"origin is not a member of {self.shape!r}")

    def contains(self, points: ArrayLike):
        """Membership with a ``1e-9`` boundary tolerance.

        Accepts one point (returns ``bool``) or an ``(N, r)`` array.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return bool(self.shape.contains(pts[None, :])[0])
        return self.shape.contains(pts)

    def as_oracle(self) -> "ConstraintSet":
        """The same set, seen only through its membership predicate."""
        oracle = SampledOracle(self.contains, self.bounding_radius, self.dimension, vectorized=True)
        return ConstraintSet(oracle, self.dimension)

    def reach_many(self, dirs: NDArray, resolution: float | None = None) -> NDArray:
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        if dirs.shape[1] != self.dimension:
            raise ConstraintError(f"direction dimension {dirs.shape[1]} != {self.dimension}")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise NonUnitDirection(f"direction norms {norms[np.abs(norms - 1) > UNIT_TOL]}")
        if self.analytic:
            out = np.array([_reach_from_intervals(ivs) for ivs in self._prims.intervals(dirs)])
            out = np.minimum(out, self.bounding_radius)
        else:
            res = self.resolution if resolution is None else resolution
            out = np.array([self._sampled_reach(d, res) for d in dirs])
        if np.any(out <= 0):
            raise EmptyReach(f"zero reach along {dirs[out <= 0][0]}")
        return out

    def reach(self, direction: ArrayLike, resolution: float | None = None) -> float:
        return float(self.reach_many(np.asarray(direction, float)[None, :], resolution)[0])

    def _sampled_reach(self, d: NDArray, resolution: float) -> float:
        if not resolution > 0:
            raise ConstraintError("resolution must be positive")
        R = self.bounding_radius
        steps = int(math.ceil(R / resolution))
        ts = np.linspace(0.0, R, steps + 1)
        inside = self.shape.contains(ts[:, None] * d[None, :])
        bad = np.flatnonzero(~inside)
        if bad.size == 0:
            return R
        j = int(bad[0])
        if j == 0:
            return 0.0
        lo, hi = ts[j - 1], ts[j]
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if self.shape.contains((mid * d)[None, :])[0]:
                lo = mid
            else:
                hi = mid
        return float(lo)

    def scale(self, x: ArrayLike) -> ConstrainedVector:
        """Apply the constraint operator to ``x``."""
        x = np.asarray(x, dtype=float)
        m = float(np.max(np.abs(x), initial=0.0))
        if m == 0.0:
            return ConstrainedVector(x, np.zeros_like(x), 1.0)
        # rescale before the norm so tiny vectors do not underflow to zero
        unit = x / m
        nu = float(np.linalg.norm(unit))
        nx = m * nu
        beta = self.reach(unit / nu)
        if nx <= beta:
            return ConstrainedVector(x, x.copy(), 1.0)
        e = beta / nx
        return ConstrainedVector(x, e * x, e)


def _reach_from_intervals(ivs: list[tuple[float, float]]) -> float:
    for lo, hi in ivs:
        if lo <= MEMBERSHIP_TOL:
            return hi
    return 0.0


# --------------------------------------------------------------------------
# functional API
# --------------------------------------------------------------------------

def reach(cset: ConstraintSet, direction: ArrayLike, resolution: float | None = None) -> float:
    return cset.reach(direction, resolution)


def scale_into_set(cset: ConstraintSet, x: ArrayLike) -> ConstrainedVector:
    return cset.scale(x)


def direction_grid(r: int, num_directions: int) -> NDArray:
    """Deterministic unit directions.

    ``r == 1`` gives ``+1, -1``; ``r == 2`` a golden-angle fan starting at the
    positive x-axis; higher dimensions the ``2r`` signed axes followed by
    normalised Halton points pushed through the normal quantile.
    """
    if num_directions < 2:
        raise ValueError("need at least two directions")
    if r == 1:
        return np.array([[1.0], [-1.0]])
    if r == 2:
        theta = np.arange(num_directions) * math.pi * (3.0 - math.sqrt(5.0))
        return np.column_stack([np.cos(theta), np.sin(theta)])
    from scipy.stats import norm, qmc

    axes = np.vstack([np.eye(r), -np.eye(r)])
    extra = max(num_directions - len(axes), 0)
    pts = qmc.Halton(d=r, scramble=False).random(extra + 1)[1:]
    g = norm.ppf(pts)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.vstack([axes, g])[:num_directions]


def estimate_rho_bounds(cset: ConstraintSet, num_directions: int = 360) -> tuple[float, float]:
    """Largest and smallest reach over a deterministic direction grid."""
    reaches = cset.reach_many(direction_grid(cset.dimension, num_directions))
    return float(reaches.max()), float(reaches.min())


# --------------------------------------------------------------------------
# descriptors
# --------------------------------------------------------------------------

def shape_from_descriptor(desc: dict, location: str = "set"):
    """Build a shape tree from a nested ``{"type": ...}`` descriptor."""
    kind = desc.get("type")
    if kind == "ball":
        center = desc.get("center")
        return Ball(float(desc["radius"]), None if center is None else tuple(map(float, center)))
    if kind == "box":
        return AxisBox(tuple(map(float, desc["lower"])), tuple(map(float, desc["upper"])))
    if kind in ("union", "intersection"):
        members = [
            shape_from_descriptor(m, f"{location}.members[{i}]")
            for i, m in enumerate(desc["members"])
        ]
        return Union(tuple(members)) if kind == "union" else Intersection(tuple(members))
    raise ConstraintError(f"{location}: unknown shape type {kind!r}")


def set_from_descriptor(desc: dict, dimension: int) -> ConstraintSet:
    return ConstraintSet(shape_from_descriptor(desc), dimension)


def shape_to_descriptor(shape) -> dict:
    if isinstance(shape, Ball):
        out = {"type": "ball", "radius": shape.radius}
        if shape.center is not None:
            out["center"] = list(shape.center)
        return out
    if isinstance(shape, AxisBox):
        return {"type": "box", "lower": list(shape.lower), "upper": list(shape.upper)}
    if isinstance(shape, (Union, Intersection)):
        kind = "union" if isinstance(shape, Union) else "intersection"
        return {"type": kind, "members": [shape_to_descriptor(m) for m in shape.members]}
    raise ConstraintError("sampled oracles have no descriptor form")


def ring_velocity_set() -> ConstraintSet:
    """Unit disc joined with the box ``[-0.5, 0.5] x [0, 1.5]``."""
    return ConstraintSet(Union((Ball(1.0), AxisBox((-0.5, 0.0), (0.5, 1.5)))), 2)


def segment_members(cset: ConstraintSet, v: NDArray, count: int = 64) -> bool:
    """True when ``alpha * v`` is a member for ``count`` equispaced ``alpha``."""
    alphas = np.linspace(0.0, 1.0, count)
    return bool(np.all(cset.contains(alphas[:, None] * np.asarray(v, float)[None, :])))


def random_star_union(rng: np.random.Generator, r: int = 2, max_members: int = 3) -> ConstraintSet:
    """Nonconvex union of an origin ball with boxes and balls that contain 0."""
    members: list = [Ball(float(rng.uniform(0.5, 1.5)))]
    for _ in range(int(rng.integers(1, max_members + 1))):
        if rng.random() < 0.6:
            lower = tuple(float(v) for v in -rng.uniform(0.0, 2.0, r))
            upper = tuple(float(v) for v in rng.uniform(0.0, 2.0, r))
            members.append(AxisBox(lower, upper))
        else:
            radius = float(rng.uniform(0.3, 1.5))
            c = rng.normal(size=r)
            c *= rng.uniform(0.0, 0.9) * radius / np.linalg.norm(c)
            members.append(Ball(radius, tuple(float(v) for v in c)))
    return ConstraintSet(Union(tuple(members)), r)
