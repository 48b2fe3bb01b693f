import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import trapezoid
from scipy.sparse.linalg import cg, splu

from .config import CG_ITER_FACTOR, CG_TOL, LINEAR_SOLVER, THETA
from .errors import EllipticityViolated, SolverDiverged

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform tensor grid on E = (0, l_1) x ... x (0, l_d); nodes in row-major order."""

    lengths: Tuple[float, ...]
    cells: Tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        if len(lengths) not in (1, 2) or len(cells) != len(lengths):
            raise ValueError("grid needs d in {1, 2} lengths and matching cell counts")
        if any(v <= 0 for v in lengths):
            raise ValueError("domain extents must be positive")
        if any(c < 2 for c in cells):
            raise ValueError("need at least two cells per axis for a nonempty interior")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(l / c for l, c in zip(self.lengths, self.cells))

    @property
    def node_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def axes(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.linspace(0.0, l, c + 1) for l, c in zip(self.lengths, self.cells))

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        index = np.indices(self.shape).reshape(self.dim, -1)
        last = np.array(self.cells)[:, None]
        return np.any((index == 0) | (index == last), axis=0)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def weights(self) -> np.ndarray:
        """Product trapezoidal weights."""
        per_axis = []
        for h, n in zip(self.spacing, self.shape):
            w = np.full(n, h)
            w[[0, -1]] = 0.5 * h
            per_axis.append(w)
        weights = per_axis[0]
        for w in per_axis[1:]:
            weights = np.outer(weights, w).ravel()
        return weights

    def cell_centers(self) -> np.ndarray:
        mids = [0.5 * (a[:-1] + a[1:]) for a in self.axes]
        mesh = np.meshgrid(*mids, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_index(self, *index: int) -> int:
        return int(np.ravel_multi_index(index, self.shape))

    def nearest_node(self, point) -> int:
        point = np.asarray(point, dtype=float)
        index = [int(round(p / h)) for p, h in zip(point, self.spacing)]
        return self.node_index(*index)

    def neighbor_pairs(self) -> np.ndarray:
        """Node pairs adjacent along some axis."""
        ids = np.arange(self.size).reshape(self.shape)
        pairs = []
        for axis in range(self.dim):
            lo = np.take(ids, np.arange(self.shape[axis] - 1), axis=axis).ravel()
            hi = np.take(ids, np.arange(1, self.shape[axis]), axis=axis).ravel()
            pairs.append(np.column_stack([lo, hi]))
        return np.concatenate(pairs)


def _probe_vectors(d: int) -> np.ndarray:
    if d == 1:
        return np.ones((1, 1))
    return np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]])


def _sqrt_spd(a: np.ndarray) -> np.ndarray:
    if a.shape[-1] == 1:
        return np.sqrt(a)
    # closed form square root of a symmetric positive definite 2x2 matrix
    det = np.sqrt(np.linalg.det(a))
    trace = np.sqrt(a[..., 0, 0] + a[..., 1, 1] + 2.0 * det)
    return (a + det[..., None, None] * np.eye(2)) / trace[..., None, None]


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Symmetric matrix field a(t, x) with declared ellipticity constant Lambda >= 1."""

    evaluator: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    ellipticity: float
    static: bool = True
    uniform: bool = False
    name: str = "coefficient"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("coefficient dimension must be 1 or 2")
        if self.ellipticity < 1:
            raise ValueError("ellipticity constant must be >= 1")

    @classmethod
    def constant(cls, matrix, dim: Optional[int] = None) -> "CoefficientField":
        a = np.atleast_2d(np.asarray(matrix, dtype=float))
        if a.shape == (1, 1) and dim:
            a = a[0, 0] * np.eye(dim)
        eig = np.linalg.eigvalsh(a)
        lam = max(1.0, eig.max(), 1.0 / eig.min()) if eig.min() > 0 else np.inf
        if not np.isfinite(lam):
            raise ValueError("constant coefficient must be positive definite")
        return cls(lambda t, x: np.broadcast_to(a, (len(x),) + a.shape), a.shape[0], lam, uniform=True, name="constant")

    @classmethod
    def piecewise(cls, left: float, right: float, interface: float, dim: int = 1, axis: int = 0) -> "CoefficientField":
        """Two isotropic materials split by the plane x_axis = interface."""
        if left <= 0 or right <= 0:
            raise ValueError("material conductivities must be positive")
        lam = max(1.0, left, right, 1.0 / left, 1.0 / right)
        eye = np.eye(dim)

        def evaluate(t, x):
            scale = np.where(x[:, axis] < interface, left, right)
            return scale[:, None, None] * eye

        return cls(evaluate, dim, lam, name="piecewise")

    @classmethod
    def rotating(cls, major: float, minor: float, frequency: float) -> "CoefficientField":
        """2-d anisotropy whose principal axes rotate with angle frequency * t."""
        if not major >= minor > 0:
            raise ValueError("need major >= minor > 0")
        lam = max(1.0, major, 1.0 / minor)

        def evaluate(t, x):
            c, s = np.cos(frequency * t), np.sin(frequency * t)
            rot = np.array([[c, -s], [s, c]])
            a = rot @ np.diag([major, minor]) @ rot.T
            return np.broadcast_to(a, (len(x), 2, 2))

        return cls(evaluate, 2, lam, static=False, uniform=True, name="rotating")

    def matrices(self, t: float, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        a = np.asarray(self.evaluator(float(t), points), dtype=float)
        return np.broadcast_to(a, (len(points), self.dim, self.dim))

    def check(self, t: float, points: np.ndarray) -> np.ndarray:
        """Evaluates a and enforces symmetry plus the ellipticity sandwich on probe vectors."""
        a = self.matrices(t, points)
        probes = _probe_vectors(self.dim)
        quad = np.einsum("ki,pij,kj->pk", probes, a, probes)
        norms = np.sum(probes**2, axis=1)
        lam = self.ellipticity * (1 + 1e-12)
        bad = np.any((quad * lam < norms) | (quad > lam * norms), axis=1)
        bad |= np.abs(a - np.swapaxes(a, -1, -2)).max(axis=(1, 2)) > SYMMETRY_TOL
        if bad.any():
            raise EllipticityViolated(int(np.argmax(bad)), t)
        return a

    def sigma(self, t: float, points: np.ndarray) -> np.ndarray:
        """Symmetric square root of a(t, x)."""
        points = np.atleast_2d(points)
        if self.uniform:
            root = _sqrt_spd(self.matrices(t, points[:1]))[0]
            return np.broadcast_to(root, (len(points), self.dim, self.dim))
        return _sqrt_spd(self.matrices(t, points))

    def sigma_on_grid(self, t: float, grid: SpatialGrid) -> np.ndarray:
        key = (0.0 if self.static else float(t), grid)
        if key not in self._cache:
            self._cache[key] = self.sigma(t, grid.points)
        return self._cache[key]


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse symmetric matrix acting as L_t on interior nodes (zero Dirichlet data)."""

    matrix: sparse.csr_matrix
    full: Optional[sparse.csr_matrix] = None
    interior: Optional[np.ndarray] = None
    node_volume: float = 1.0
    dim: int = 1
    t: float = 0.0

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def apply_full(self, values: np.ndarray) -> np.ndarray:
        """Action on a full-grid field (boundary values included), returned on interior rows."""
        return (self.full @ values)[self.interior]


def _difference(count: int, stride: int, size: int, start: np.ndarray, h: float) -> sparse.csr_matrix:
    rows = np.arange(count)
    data = np.concatenate([np.full(count, 1.0 / h), np.full(count, -1.0 / h)])
    cols = np.concatenate([start + stride, start])
    return sparse.csr_matrix((data, (np.concatenate([rows, rows]), cols)), shape=(count, size))


def assemble(coefficient: CoefficientField, grid: SpatialGrid, t: float = 0.0) -> DiscreteOperator:
    if coefficient.dim != grid.dim:
        raise ValueError(f"coefficient is {coefficient.dim}-d but grid is {grid.dim}-d")
    coefficient.check(t, grid.points)
    if grid.dim == 1:
        (h,) = grid.spacing
        a = coefficient.matrices(t, grid.points)[:, 0, 0]
        faces = 2.0 * a[:-1] * a[1:] / (a[:-1] + a[1:])
        cells = grid.cells[0]
        diff = _difference(cells, 1, grid.size, np.arange(cells), h)
        stiffness = h * (diff.T @ sparse.diags(faces) @ diff)
    else:
        hx, hy = grid.spacing
        nx, ny = grid.cells
        stride = grid.shape[1]
        a = coefficient.check(t, grid.cell_centers())
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        stiffness = sparse.csr_matrix((grid.size, grid.size))
        # each corner gradient pairs one x-edge with one y-edge of the cell
        for ci in (0, 1):
            for cj in (0, 1):
                gx = _difference(i.size, stride, grid.size, i * stride + j + cj, hx)
                gy = _difference(i.size, 1, grid.size, (i + ci) * stride + j, hy)
                stiffness = stiffness + (
                    gx.T @ sparse.diags(a[:, 0, 0]) @ gx
                    + gx.T @ sparse.diags(a[:, 0, 1]) @ gy
                    + gy.T @ sparse.diags(a[:, 1, 0]) @ gx
                    + gy.T @ sparse.diags(a[:, 1, 1]) @ gy
                )
        stiffness = stiffness * (hx * hy / 4.0)
    full = -stiffness / (2.0 * grid.node_volume)
    full = (0.5 * (full + full.T)).tocsr()
    inner = grid.interior
    matrix = full[inner][:, inner].tocsr()
    return DiscreteOperator(matrix, full, inner, grid.node_volume, grid.dim, float(t))


def grid_gradient(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Gradient of (..., nodes, m) values; central inside, second-order one-sided at the boundary."""
    values = np.asarray(values, dtype=float)
    lead, m = values.shape[:-2], values.shape[-1]
    shaped = values.reshape(lead + grid.shape + (m,))
    offset = len(lead)
    grads = [
        np.gradient(shaped, grid.spacing[axis], axis=offset + axis, edge_order=2)
        for axis in range(grid.dim)
    ]
    return np.stack(grads, axis=-1).reshape(lead + (grid.size, m, grid.dim))


def energy_norms(u, grid: SpatialGrid, times=None, coefficient: Optional[CoefficientField] = None) -> Tuple[float, float]:
    """(sup_s ||u(s)||_H^2, int ||| grad u |||_H^2 dt) on the grid."""
    values = np.asarray(getattr(u, "values", u), dtype=float)
    times = getattr(u, "times", times)
    if times is None:
        if values.shape[0] > 1:
            raise ValueError("energy norms of several slices need their times")
        times = np.zeros(1)
    times = np.asarray(times, dtype=float)
    w = grid.weights
    l2 = np.einsum("n,knm->k", w, values**2)
    grad = grid_gradient(values, grid)
    if coefficient is None:
        density = np.sum(grad**2, axis=(-2, -1))
    else:
        density = np.stack(
            [np.einsum("nid,nde,nie->n", g, coefficient.matrices(t, grid.points), g) for g, t in zip(grad, times)]
        )
    integrand = density @ w
    gradient_part = float(trapezoid(integrand, times)) if times.size > 1 else 0.0
    return float(l2.max()), gradient_part


def resolve_method(method: str, dim: int) -> str:
    if method == "auto":
        return "direct" if dim == 1 else "cg"
    if method not in ("direct", "cg"):
        raise ValueError(f"unknown linear solver {method!r}")
    return method


def solve_system(system, rhs, method: str, lu=None, guess=None, tol: float = CG_TOL, maxiter: Optional[int] = None):
    """Solves an SPD system for one or several right-hand sides; returns (solution, relative residual)."""
    rhs = np.asarray(rhs, dtype=float)
    columns = rhs.reshape(rhs.shape[0], -1)
    if method == "direct":
        lu = lu if lu is not None else splu(sparse.csc_matrix(system))
        out = lu.solve(columns)
    else:
        maxiter = maxiter or CG_ITER_FACTOR * system.shape[0]
        starts = None if guess is None else np.asarray(guess).reshape(columns.shape)
        out = np.empty_like(columns)
        for j in range(columns.shape[1]):
            x0 = None if starts is None else starts[:, j]
            out[:, j], info = cg(system, columns[:, j], x0=x0, rtol=tol, atol=0.0, maxiter=maxiter)
            if info != 0:
                residual = np.linalg.norm(system @ out[:, j] - columns[:, j])
                raise SolverDiverged(float(residual), maxiter)
    scale = max(np.linalg.norm(columns), np.finfo(float).tiny)
    residual = float(np.linalg.norm(system @ out - columns) / scale)
    if not np.isfinite(residual) or residual > max(10.0 * tol, 1e-9):
        raise SolverDiverged(residual, maxiter or 0)
    return out.reshape(rhs.shape), residual


class ThetaStepper:
    """Reusable solver for (I - theta dt A) v = rhs."""

    def __init__(
        self,
        operator: DiscreteOperator,
        dt: float,
        theta: float = THETA,
        method: str = LINEAR_SOLVER,
        cg_tol: float = CG_TOL,
        cg_iter_factor: int = CG_ITER_FACTOR,
    ):
        if dt <= 0:
            raise ValueError("time step must be positive")
        if not 0.5 <= theta <= 1.0:
            raise ValueError("theta must lie in [0.5, 1]")
        self.operator = operator
        self.dt = dt
        self.theta = theta
        self.method = resolve_method(method, operator.dim)
        self.cg_tol = cg_tol
        self.maxiter = cg_iter_factor * operator.size
        identity = sparse.identity(operator.size, format="csr")
        self.system = (identity - theta * dt * operator.matrix).tocsr()
        self._lu = splu(self.system.tocsc()) if self.method == "direct" else None
        self._guess = None
        self.last_residual = 0.0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out, self.last_residual = solve_system(
            self.system, rhs, self.method, self._lu, self._guess, self.cg_tol, self.maxiter
        )
        if self.method == "cg":
            self._guess = out
        return out


def solve_linear_step(
    operator: DiscreteOperator, rhs: np.ndarray, dt: float, theta: float = THETA, method: str = LINEAR_SOLVER
) -> Tuple[np.ndarray, float]:
    """One theta-scheme solve (I - theta dt A) v = rhs; returns (v, relative residual)."""
    stepper = ThetaStepper(operator, dt, theta, method=method)
    v = stepper.solve(rhs)
    logger.debug("Linear step solved with residual %.2e", stepper.last_residual)
    return v, stepper.last_residual
