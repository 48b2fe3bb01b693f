import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection as QhullHalfspaces
from scipy.stats import norm, qmc

from .config import DIRECTION_FACTOR, DYKSTRA_SWEEP_FACTOR, DYKSTRA_TOL, WITNESS_RESIDUAL_TOL
from .errors import EmptyInterior, InvalidSet, MarginViolated, UniformBoundViolated

logger = logging.getLogger(__name__)

CONTAINMENT_TOL = 1e-12
ACTIVE_TOL = 1e-9
POLISH_TOL = 1e-5


class ConvexSet:
    """Nonempty bounded closed convex set in R^m, optionally batched over grid nodes.

    Parameters may carry leading batch axes; every method broadcasts a point
    array of shape (..., m) against them. ``set[idx]`` extracts a sub-batch.
    """

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        raise NotImplementedError

    def project(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def depth(self, y: np.ndarray) -> np.ndarray:
        """Signed distance to the boundary: positive inside, -dist(y, D) outside."""
        raise NotImplementedError

    def support(self, directions: np.ndarray) -> np.ndarray:
        """Support function sampled at the rows of ``directions``; shape batch + (k,)."""
        raise NotImplementedError

    def bounding_radius(self) -> np.ndarray:
        """Radius of the smallest origin-centred ball containing the set."""
        raise NotImplementedError

    def jacobian(self, y: np.ndarray) -> np.ndarray:
        """A generalized Jacobian of the projection at y; shape batch + (m, m)."""
        raise NotImplementedError

    def shrink(self, eps: float) -> "ConvexSet":
        raise NotImplementedError

    def __getitem__(self, idx) -> "ConvexSet":
        raise NotImplementedError

    def dist(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.linalg.norm(y - self.project(y), axis=-1)

    def contains(self, y: np.ndarray, tol: float = CONTAINMENT_TOL) -> np.ndarray:
        return self.dist(y) <= tol


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim == 0 or lower.shape != upper.shape:
            raise InvalidSet(f"box bounds must share a shape (..., m), got {lower.shape} and {upper.shape}")
        if not np.all(lower < upper):
            raise InvalidSet("box needs lower < upper in every coordinate")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[-1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.lower.shape[:-1]

    def project(self, y):
        return np.clip(np.asarray(y, dtype=float), self.lower, self.upper)

    def depth(self, y):
        y = np.asarray(y, dtype=float)
        slack = np.minimum(y - self.lower, self.upper - y).min(axis=-1)
        return np.where(slack >= 0, slack, -self.dist(y))

    def support(self, directions):
        d = np.asarray(directions, dtype=float)
        lo = self.lower[..., None, :] * d
        hi = self.upper[..., None, :] * d
        return np.maximum(lo, hi).sum(axis=-1)

    def bounding_radius(self):
        return np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper)), axis=-1)

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        free = (y >= self.lower) & (y <= self.upper)
        return free[..., None] * np.eye(self.dim)

    def shrink(self, eps):
        lower, upper = self.lower + eps, self.upper - eps
        if not np.all(lower < upper):
            raise EmptyInterior(f"box has no interior after shrinking by {eps}")
        return Box(lower, upper)

    def __getitem__(self, idx):
        return Box(self.lower[idx], self.upper[idx])


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        radius = np.asarray(self.radius, dtype=float)
        if center.ndim == 0:
            raise InvalidSet("ball center must be a vector")
        if radius.shape != center.shape[:-1]:
            radius = np.broadcast_to(radius, center.shape[:-1]).copy()
        if not np.all(radius > 0):
            raise InvalidSet("ball radius must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", radius)

    @property
    def dim(self) -> int:
        return self.center.shape[-1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.center.shape[:-1]

    def project(self, y):
        y = np.asarray(y, dtype=float)
        offset = y - self.center
        r = np.linalg.norm(offset, axis=-1)
        scale = np.ones_like(r)
        outside = r > self.radius
        np.divide(self.radius * np.ones_like(r), r, out=scale, where=outside)
        return self.center + offset * scale[..., None]

    def depth(self, y):
        y = np.asarray(y, dtype=float)
        return self.radius - np.linalg.norm(y - self.center, axis=-1)

    def support(self, directions):
        d = np.asarray(directions, dtype=float)
        return self.center @ d.T + self.radius[..., None] * np.linalg.norm(d, axis=1)

    def bounding_radius(self):
        return np.linalg.norm(self.center, axis=-1) + self.radius

    def jacobian(self, y):
        offset = np.asarray(y, dtype=float) - self.center
        r = np.linalg.norm(offset, axis=-1)
        outside = r > self.radius
        safe = np.where(outside, r, 1.0)
        unit = offset / safe[..., None]
        tangent = np.eye(self.dim) - unit[..., :, None] * unit[..., None, :]
        scaled = (self.radius / safe)[..., None, None] * tangent
        return np.where(outside[..., None, None], scaled, np.eye(self.dim))

    def shrink(self, eps):
        radius = self.radius - eps
        if not np.all(radius > 0):
            raise EmptyInterior(f"ball radius would drop to {radius.min():.6g}")
        return Ball(self.center, radius)

    def __getitem__(self, idx):
        return Ball(self.center[idx], self.radius[idx])


@lru_cache(maxsize=64)
def _recession_is_trivial(normals_bytes: bytes, k: int, m: int) -> bool:
    # support of {N x <= 0, |x|_inf <= 1} along +-e_i stays at 0 iff the polyhedron is bounded
    normals = np.frombuffer(normals_bytes, dtype=float).reshape(k, m)
    for i in range(m):
        for sign in (1.0, -1.0):
            c = np.zeros(m)
            c[i] = -sign
            res = linprog(c, A_ub=normals, b_ub=np.zeros(k), bounds=[(-1.0, 1.0)] * m, method="highs")
            if res.status != 0 or -res.fun > 1e-9:
                return False
    return True


def _chebyshev_center(normals: np.ndarray, offsets: np.ndarray) -> Tuple[np.ndarray, float]:
    """Centre and radius of the largest inscribed ball (unit normals assumed)."""
    k, m = normals.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    a_ub = np.hstack([normals, np.ones((k, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=offsets, bounds=[(None, None)] * m + [(0, None)], method="highs")
    if res.status == 2:
        raise EmptyInterior("halfspace intersection is empty")
    if res.status != 0:
        raise InvalidSet(f"could not certify an interior point: {res.message}")
    return res.x[:m], float(res.x[-1])


@dataclass(frozen=True, eq=False)
class HalfspaceIntersection(ConvexSet):
    """{x : <n_i, x> <= b_i} with unit normals shared across the batch."""

    normals: np.ndarray
    offsets: np.ndarray
    interior_point: np.ndarray
    sweep_factor: int = DYKSTRA_SWEEP_FACTOR
    tol: float = DYKSTRA_TOL

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float)
        interior = np.asarray(self.interior_point, dtype=float)
        k, m = normals.shape
        if offsets.shape[-1:] != (k,) or interior.shape[-1:] != (m,):
            raise InvalidSet(f"need offsets (..., {k}) and interior point (..., {m})")
        lengths = np.linalg.norm(normals, axis=1)
        if np.any(lengths <= 0):
            raise InvalidSet("halfspace normals must be nonzero")
        normals = normals / lengths[:, None]
        offsets = offsets / lengths
        slack = offsets - interior @ normals.T
        if not np.all(slack > 0):
            raise InvalidSet("interior point is not strictly inside every halfspace")
        if not _recession_is_trivial(np.ascontiguousarray(normals).tobytes(), k, m):
            raise InvalidSet("halfspace intersection is unbounded")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "interior_point", interior)

    @classmethod
    def from_constraints(cls, normals, offsets, **kwargs) -> "HalfspaceIntersection":
        """Builds the set after certifying an interior point (Chebyshev centre)."""
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        offsets = np.asarray(offsets, dtype=float)
        lengths = np.linalg.norm(normals, axis=1)
        unit, scaled = normals / lengths[:, None], offsets / lengths
        flat = scaled.reshape(-1, unit.shape[0])
        centers = np.empty((flat.shape[0], unit.shape[1]))
        for i, b in enumerate(flat):
            centers[i], radius = _chebyshev_center(unit, b)
            if radius <= 0:
                raise EmptyInterior("halfspace intersection has empty interior")
        return cls(unit, scaled, centers.reshape(scaled.shape[:-1] + (unit.shape[1],)), **kwargs)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return np.broadcast_shapes(self.offsets.shape[:-1], self.interior_point.shape[:-1])

    def slack(self, y):
        return self.offsets - np.asarray(y, dtype=float) @ self.normals.T

    def project(self, y):
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(y.shape[:-1], self.batch_shape) + (self.dim,)
        y = np.broadcast_to(y, shape)
        offsets = np.broadcast_to(self.offsets, shape[:-1] + self.offsets.shape[-1:])
        if np.all(self.slack(y) >= 0):
            return y.copy()
        k, m = self.normals.shape
        x = y.copy()
        increments = np.zeros((k,) + shape)
        for _ in range(self.sweep_factor * m * k):
            previous = x
            for i in range(k):
                z = x + increments[i]
                excess = np.maximum(z @ self.normals[i] - offsets[..., i], 0.0)
                x = z - excess[..., None] * self.normals[i]
                increments[i] = z - x
            if np.max(np.abs(x - previous)) <= self.tol:
                break
        return self._polish(y, x, offsets)

    def _polish(self, y, x, offsets):
        """Replaces Dykstra iterates by the exact KKT projection.

        Every subset (of size <= m) of the constraints nearly active at the
        iterate is tried; a feasible candidate with nonnegative multipliers
        is the projection.
        """
        m = self.dim
        flat_y = y.reshape(-1, m)
        flat_x = x.reshape(-1, m).copy()
        flat_b = offsets.reshape(-1, offsets.shape[-1])
        near = (flat_x @ self.normals.T) >= flat_b - POLISH_TOL
        patterns, inverse = np.unique(near, axis=0, return_inverse=True)
        inverse = np.ravel(inverse)
        for p, pattern in enumerate(patterns):
            todo = np.flatnonzero(inverse == p)
            candidates = np.flatnonzero(pattern)
            for size in range(min(m, candidates.size), 0, -1):
                for subset in combinations(candidates, size):
                    if todo.size == 0:
                        break
                    n_act = self.normals[list(subset)]
                    gram = n_act @ n_act.T
                    if np.linalg.matrix_rank(gram) < size:
                        continue
                    rhs = flat_y[todo] @ n_act.T - flat_b[todo][:, list(subset)]
                    lam = np.linalg.solve(gram, rhs.T).T
                    candidate = flat_y[todo] - lam @ n_act
                    feasible = np.all(candidate @ self.normals.T <= flat_b[todo] + ACTIVE_TOL, axis=1)
                    accept = feasible & np.all(lam >= -ACTIVE_TOL, axis=1)
                    flat_x[todo[accept]] = candidate[accept]
                    todo = todo[~accept]
        return flat_x.reshape(x.shape)

    def depth(self, y):
        slack = self.slack(y)
        inside = np.all(slack >= 0, axis=-1)
        return np.where(inside, slack.min(axis=-1), -self.dist(y))

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        x = self.project(y)
        m = self.dim
        flat_y = y.reshape(-1, m) if y.shape == x.shape else np.broadcast_to(y, x.shape).reshape(-1, m)
        flat_x = x.reshape(-1, m)
        offsets = np.broadcast_to(self.offsets, x.shape[:-1] + self.offsets.shape[-1:]).reshape(-1, self.normals.shape[0])
        outside = np.any(flat_y @ self.normals.T > offsets, axis=1)
        active = (flat_x @ self.normals.T >= offsets - ACTIVE_TOL) & outside[:, None]
        result = np.broadcast_to(np.eye(m), (flat_x.shape[0], m, m)).copy()
        patterns, inverse = np.unique(active, axis=0, return_inverse=True)
        inverse = np.ravel(inverse)
        for p, pattern in enumerate(patterns):
            if pattern.any():
                n_act = self.normals[pattern]
                result[inverse == p] = np.eye(m) - n_act.T @ np.linalg.pinv(n_act @ n_act.T) @ n_act
        return result.reshape(x.shape + (m,))

    def vertices(self) -> np.ndarray:
        """Vertices of an unbatched set."""
        if self.batch_shape:
            raise ValueError("vertices() needs a single set; index the batch first")
        if self.dim == 1:
            upper = self.offsets[self.normals[:, 0] > 0].min()
            lower = -self.offsets[self.normals[:, 0] < 0].min()
            return np.array([[lower], [upper]])
        halfspaces = np.hstack([self.normals, -self.offsets[:, None]])
        hull = QhullHalfspaces(halfspaces, self.interior_point)
        return hull.intersections

    def _each(self):
        flat_b = np.broadcast_to(self.offsets, self.batch_shape + self.offsets.shape[-1:]).reshape(-1, self.normals.shape[0])
        flat_p = np.broadcast_to(self.interior_point, self.batch_shape + (self.dim,)).reshape(-1, self.dim)
        for b, p in zip(flat_b, flat_p):
            yield HalfspaceIntersection(self.normals, b, p, self.sweep_factor, self.tol)

    def support(self, directions):
        d = np.asarray(directions, dtype=float)
        if not self.batch_shape:
            return (self.vertices() @ d.T).max(axis=0)
        values = [piece.support(d) for piece in self._each()]
        return np.array(values).reshape(self.batch_shape + (d.shape[0],))

    def bounding_radius(self):
        if not self.batch_shape:
            return np.linalg.norm(self.vertices(), axis=1).max()
        radii = [piece.bounding_radius() for piece in self._each()]
        return np.array(radii).reshape(self.batch_shape)

    def shrink(self, eps):
        pieces = list(self._each())
        offsets = np.empty((len(pieces), self.normals.shape[0]))
        centers = np.empty((len(pieces), self.dim))
        for i, piece in enumerate(pieces):
            offsets[i] = piece.offsets - eps
            centers[i], radius = _chebyshev_center(self.normals, offsets[i])
            if radius <= 0:
                raise EmptyInterior(f"halfspace intersection has no interior after shrinking by {eps}")
        shape = self.batch_shape
        return HalfspaceIntersection(
            self.normals,
            offsets.reshape(shape + (self.normals.shape[0],)),
            centers.reshape(shape + (self.dim,)),
            self.sweep_factor,
            self.tol,
        )

    def translated(self, shift) -> "HalfspaceIntersection":
        """The set moved by ``shift`` (broadcast over the batch)."""
        shift = np.asarray(shift, dtype=float)
        return HalfspaceIntersection(
            self.normals,
            self.offsets + shift @ self.normals.T,
            self.interior_point + shift,
            self.sweep_factor,
            self.tol,
        )

    def __getitem__(self, idx):
        offsets = np.broadcast_to(self.offsets, self.batch_shape + self.offsets.shape[-1:])
        interior = np.broadcast_to(self.interior_point, self.batch_shape + (self.dim,))
        return HalfspaceIntersection(self.normals, offsets[idx], interior[idx], self.sweep_factor, self.tol)


def project(y, D: ConvexSet) -> np.ndarray:
    return D.project(y)


def dist(y, D: ConvexSet) -> np.ndarray:
    return D.dist(y)


def depth(y, D: ConvexSet) -> np.ndarray:
    return D.depth(y)


def shrink(D: ConvexSet, eps: float) -> ConvexSet:
    """Inner parallel set {y in D : dist(y, boundary) >= eps}."""
    if eps <= 0:
        raise ValueError("shrink needs eps > 0")
    return D.shrink(eps)


def sphere_directions(m: int, count: int) -> Tuple[np.ndarray, float]:
    """Deterministic unit directions and the covering radius used for error bounds."""
    if m == 1:
        return np.array([[-1.0], [1.0]]), 0.0
    if m == 2:
        angles = (np.arange(count) + 0.5) * 2.0 * np.pi / count
        return np.column_stack([np.cos(angles), np.sin(angles)]), 2.0 * np.sin(np.pi / (2 * count))
    points = qmc.Halton(d=m, scramble=False).random(count + 1)[1:]
    directions = norm.ppf(np.clip(points, 1e-12, 1 - 1e-12))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    probes = np.random.default_rng(0).standard_normal((4096, m))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    nearest = np.sqrt(np.maximum(2.0 - 2.0 * (probes @ directions.T).max(axis=1), 0.0))
    return directions, float(nearest.max())


def hausdorff_with_bound(D: ConvexSet, G: ConvexSet, n_dir: Optional[int] = None) -> Tuple[np.ndarray, float]:
    """Hausdorff distance and a bound on its discretisation error (0 for closed forms)."""
    if D.dim != G.dim:
        raise InvalidSet("sets live in different dimensions")
    if isinstance(D, Box) and isinstance(G, Box):
        forward = np.maximum(np.maximum(G.lower - D.lower, D.upper - G.upper), 0.0)
        backward = np.maximum(np.maximum(D.lower - G.lower, G.upper - D.upper), 0.0)
        value = np.maximum(np.linalg.norm(forward, axis=-1), np.linalg.norm(backward, axis=-1))
        return value, 0.0
    if isinstance(D, Ball) and isinstance(G, Ball):
        return np.linalg.norm(D.center - G.center, axis=-1) + np.abs(D.radius - G.radius), 0.0
    count = n_dir or DIRECTION_FACTOR * D.dim
    directions, covering = sphere_directions(D.dim, count)
    gap = np.abs(D.support(directions) - G.support(directions)).max(axis=-1)
    reach = float(np.max(D.bounding_radius()) + np.max(G.bounding_radius()))
    return gap, reach * covering


def hausdorff(D: ConvexSet, G: ConvexSet, n_dir: Optional[int] = None) -> np.ndarray:
    return hausdorff_with_bound(D, G, n_dir)[0]


@dataclass(frozen=True)
class ObstacleFamily:
    """The map (t, x) -> D(t, x) with a uniform bound R_D on every set."""

    evaluator: Callable[[float, np.ndarray], ConvexSet]
    bound: float
    name: str = "obstacle"

    def evaluate(self, t: float, points: np.ndarray) -> ConvexSet:
        return self.evaluator(float(t), np.atleast_2d(np.asarray(points, dtype=float)))


@dataclass(frozen=True, eq=False)
class SeparationWitness:
    epsilon: float
    values: np.ndarray  # (steps + 1, nodes, m)
    terminal: Optional[np.ndarray] = None
    source: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("witness margin epsilon must be positive")
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3:
            raise ValueError("witness values need shape (steps + 1, nodes, m)")
        if self.terminal is not None and np.shape(self.terminal) != values.shape[1:]:
            raise ValueError("witness terminal slice does not match the grid")
        if self.source is not None and np.shape(self.source) != values.shape:
            raise ValueError("witness source does not match the grid")
        object.__setattr__(self, "values", values)


@dataclass
class ContinuityReport:
    time_modulus: float
    space_modulus: float
    max_radius: float
    bound: float
    error_bound: float

    @property
    def modulus(self) -> float:
        return max(self.time_modulus, self.space_modulus)


@dataclass
class SeparationReport:
    passed: bool
    worst_margin: float
    worst_node: Tuple[int, int]
    residual: Optional[float] = None
    terminal_gap: Optional[float] = None


def validate_continuity(family: ObstacleFamily, grid, times, n_dir: Optional[int] = None) -> ContinuityReport:
    """Largest Hausdorff jump between grid-adjacent sets, plus the uniform bound check."""
    times = np.asarray(times, dtype=float)
    if grid.size == 0 or times.size == 0:
        raise ValueError("continuity check needs a nonempty grid")
    pairs = grid.neighbor_pairs()
    time_mod = space_mod = max_radius = error = 0.0
    previous = None
    for k, t in enumerate(times):
        sets = family.evaluate(t, grid.points)
        radii = np.asarray(sets.bounding_radius())
        worst = int(np.argmax(radii))
        max_radius = max(max_radius, float(radii[worst]))
        if radii[worst] > family.bound * (1 + 1e-12) + 1e-12:
            raise UniformBoundViolated((k, worst), float(radii[worst]), family.bound)
        if len(pairs):
            jumps, bound = hausdorff_with_bound(sets[pairs[:, 0]], sets[pairs[:, 1]], n_dir)
            space_mod = max(space_mod, float(np.max(jumps)))
            error = max(error, bound)
        if previous is not None:
            jumps, bound = hausdorff_with_bound(previous, sets, n_dir)
            time_mod = max(time_mod, float(np.max(jumps)))
            error = max(error, bound)
        previous = sets
    logger.info("Obstacle %s: time modulus %.3g, space modulus %.3g", family.name, time_mod, space_mod)
    return ContinuityReport(time_mod, space_mod, max_radius, family.bound, error)


def validate_separation(
    family: ObstacleFamily,
    witness: SeparationWitness,
    grid,
    times,
    coefficient=None,
    residual_tol: float = WITNESS_RESIDUAL_TOL,
) -> SeparationReport:
    """Checks that the witness stays epsilon-deep inside every D(t, x) on the grid."""
    times = np.asarray(times, dtype=float)
    if witness.values.shape[:2] != (times.size, grid.size):
        raise ValueError(
            f"witness shape {witness.values.shape[:2]} does not match grid ({times.size}, {grid.size})"
        )
    worst_margin, worst_node = np.inf, (0, 0)
    for k, t in enumerate(times):
        margins = family.evaluate(t, grid.points).depth(witness.values[k]) - witness.epsilon
        node = int(np.argmin(margins))
        if margins[node] < worst_margin:
            worst_margin, worst_node = float(margins[node]), (k, node)
    if worst_margin < -CONTAINMENT_TOL:
        raise MarginViolated(worst_node, worst_margin)

    residual = terminal_gap = None
    passed = True
    if witness.terminal is not None:
        terminal_gap = float(np.max(np.abs(witness.values[-1] - witness.terminal)))
        passed = terminal_gap <= 1e-9 * max(1.0, float(np.max(np.abs(witness.terminal))))
    if witness.source is not None and coefficient is not None:
        residual = witness_residual(witness, grid, times, coefficient)
        if residual > residual_tol:
            logger.warning("Witness residual %.3g exceeds tolerance %.3g", residual, residual_tol)
            passed = False
    return SeparationReport(passed, worst_margin, worst_node, residual, terminal_gap)


def witness_residual(witness: SeparationWitness, grid, times, coefficient) -> float:
    """Relative L2 residual of du*/dt + L u* + f* = 0 (midpoint rule in time)."""
    from .grid_operator import assemble

    inner = grid.interior
    u, f = witness.values, witness.source[:, inner]
    ops = [assemble(coefficient, grid, t) for t in times]
    num = den = 0.0
    for k in range(times.size - 1):
        dt = times[k + 1] - times[k]
        drift = 0.5 * (ops[k].apply_full(u[k]) + ops[k + 1].apply_full(u[k + 1]))
        r = (u[k + 1] - u[k])[inner] / dt + drift + 0.5 * (f[k] + f[k + 1])
        num += dt * np.sum(r**2)
        den += dt * np.sum((0.5 * (f[k] + f[k + 1])) ** 2)
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))
