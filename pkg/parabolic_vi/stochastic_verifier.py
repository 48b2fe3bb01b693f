import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .config import MC_CHUNK, VerifySettings, worker_count
from .errors import InsufficientPaths
from .grid_operator import CoefficientField, SpatialGrid
from .penalized_solver import ReactionMeasureField, ScenarioSpec, SolutionField

logger = logging.getLogger(__name__)

Integrand = Callable[[float, np.ndarray], np.ndarray]


@dataclass(eq=False)
class PathBatch:
    """Killed Euler-Maruyama paths started from (start_time, start)."""

    start_time: float
    start: np.ndarray
    dt: float
    seed: int
    exit_time: np.ndarray  # elapsed time at exit
    exit_position: np.ndarray  # raw crossing point for boundary exits
    boundary_exit: np.ndarray
    running: Optional[np.ndarray] = None  # accumulated integrand, (paths, m)
    trajectories: Optional[np.ndarray] = None  # (steps + 1, paths, d), NaN after exit

    @property
    def paths(self) -> int:
        return len(self.exit_time)


@dataclass
class FKEstimate:
    value: float
    standard_error: float
    paths: int
    component: int


@dataclass
class FKCheck:
    node: int
    time: float
    estimate: FKEstimate
    grid_value: float
    band: float
    passed: bool

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(out.pop("estimate"))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FKCheck":
        estimate = FKEstimate(data["value"], data["standard_error"], data["paths"], data["component"])
        return cls(data["node"], data["time"], estimate, data["grid_value"], data["band"], data["passed"])


def _simulate_chunk(grid, coefficient, start_time, start, horizon, size, dt, seed_seq, integrand, m, store):
    rng = np.random.default_rng(seed_seq)
    d = grid.dim
    upper = np.array(grid.lengths)
    x = np.tile(start, (size, 1))
    alive = np.ones(size, dtype=bool)
    boundary = np.zeros(size, dtype=bool)
    elapsed = np.zeros(size)
    running = np.zeros((size, m)) if integrand is not None else None
    count = int(np.ceil((horizon - start_time) / dt - 1e-9))
    trajectories = None
    if store:
        trajectories = np.full((count + 1, size, d), np.nan)
        trajectories[0] = x
    for j in range(count):
        t = start_time + j * dt
        h = min(dt, horizon - t)
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        noise = rng.standard_normal((size, d))
        if integrand is not None:
            running[idx] += h * integrand(t, x[idx])
        sigma = coefficient.sigma(t, x[idx])
        moved = x[idx] + np.sqrt(h) * np.einsum("pij,pj->pi", sigma, noise[idx])
        x[idx] = moved
        elapsed[idx] += h
        if store:
            trajectories[j + 1, idx] = moved
        crossed = np.any((moved <= 0.0) | (moved >= upper), axis=1)
        boundary[idx[crossed]] = True
        alive[idx[crossed]] = False
    return elapsed, x, boundary, running, trajectories


def simulate_paths(
    grid: SpatialGrid,
    coefficient: CoefficientField,
    start_time: float,
    start,
    horizon: float,
    paths: int,
    dt: float,
    seed: int,
    integrand: Optional[Integrand] = None,
    components: int = 1,
    store: bool = False,
    chunk: int = MC_CHUNK,
) -> PathBatch:
    """Euler-Maruyama paths of dX = sigma dB killed on leaving E or at the horizon.

    Chunks of ``chunk`` paths draw from independent streams spawned from ``seed``,
    so the batch does not depend on the worker count.
    """
    if dt <= 0:
        raise ValueError("Monte Carlo time step must be positive")
    start = np.atleast_1d(np.asarray(start, dtype=float))
    if np.any(start <= 0) or np.any(start >= np.array(grid.lengths)):
        raise ValueError(f"start point {start} is not interior")
    sizes = [min(chunk, paths - i) for i in range(0, paths, chunk)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [
        (grid, coefficient, start_time, start, horizon, size, dt, stream, integrand, components, store)
        for size, stream in zip(sizes, streams)
    ]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _simulate_chunk(*job), jobs))
    else:
        parts = [_simulate_chunk(*job) for job in jobs]
    elapsed, position, boundary, running, trajectories = zip(*parts)
    return PathBatch(
        start_time,
        start,
        dt,
        seed,
        np.concatenate(elapsed),
        np.concatenate(position),
        np.concatenate(boundary),
        np.concatenate(running) if integrand is not None else None,
        np.concatenate(trajectories, axis=1) if store else None,
    )


def _mean_and_error(samples: np.ndarray) -> Tuple[float, float]:
    n = len(samples)
    mean = float(np.sum(samples) / n)
    error = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, error


def stopped_expectation(
    batch: PathBatch, terminal_fn: Callable[[np.ndarray], np.ndarray], boundary_fn: Callable[[np.ndarray], np.ndarray]
) -> Tuple[float, float]:
    """Mean and standard error of g(X at exit), g = boundary_fn on boundary exits, terminal_fn otherwise."""
    values = np.where(
        batch.boundary_exit, boundary_fn(batch.exit_position), terminal_fn(batch.exit_position)
    )
    return _mean_and_error(values)


def mean_exit_time(
    grid: SpatialGrid,
    coefficient: CoefficientField,
    start,
    horizon: float,
    paths: int,
    dt: float,
    seed: int,
    chunk: int = MC_CHUNK,
) -> Tuple[float, float]:
    batch = simulate_paths(grid, coefficient, 0.0, start, horizon, paths, dt, seed, chunk=chunk)
    return _mean_and_error(batch.exit_time)


class GridField:
    """Multilinear interpolation of (steps + 1, nodes, m) slices, left time slice in time."""

    def __init__(self, grid: SpatialGrid, times: np.ndarray, values: np.ndarray):
        self.grid = grid
        self.times = times
        self.upper = np.array(grid.lengths)
        self._interpolators = [
            RegularGridInterpolator(grid.axes, v.reshape(grid.shape + v.shape[-1:]), method="linear")
            for v in values
        ]

    def slice_index(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return min(max(k, 0), len(self.times) - 2)

    def __call__(self, t: float, points: np.ndarray, k: Optional[int] = None) -> np.ndarray:
        k = self.slice_index(t) if k is None else k
        return self._interpolators[k](np.clip(points, 0.0, self.upper))


def running_cost(s: ScenarioSpec, u: SolutionField, mu: ReactionMeasureField) -> GridField:
    """f_u + density, the running cost of the penalized representation, on the solution grid."""
    cost = np.stack([
        s.driver(t, s.grid.points, u.values[k], u.gradients[k]) + mu.density[k] for k, t in enumerate(u.times)
    ])
    return GridField(s.grid, u.times, cost)


def feynman_kac_check(
    s: ScenarioSpec,
    node: int,
    u: SolutionField,
    mu: ReactionMeasureField,
    settings: Optional[VerifySettings] = None,
    start_time: float = 0.0,
    paths: Optional[int] = None,
    seed: Optional[int] = None,
    value_scale: Optional[float] = None,
) -> List[FKCheck]:
    """Monte Carlo estimate of every component of u_n(start_time, node) against the grid value."""
    settings = settings or VerifySettings()
    paths = paths or settings.mc_paths
    seed = s.seed if seed is None else seed
    if s.grid.boundary_mask[node]:
        raise ValueError(f"node {node} lies on the boundary")
    cost = running_cost(s, u, mu)
    terminal = GridField(s.grid, np.array([0.0, s.horizon]), np.stack([s.terminal, s.terminal]))
    batch = simulate_paths(
        s.grid, s.coefficient, start_time, s.grid.points[node], s.horizon, paths, settings.mc_dt, seed,
        integrand=cost, components=s.components, chunk=settings.mc_chunk,
    )
    at_exit = terminal(s.horizon, batch.exit_position, k=0)
    samples = np.where(batch.boundary_exit[:, None], 0.0, at_exit) + batch.running
    scale = float(np.max(np.abs(u.values))) if value_scale is None else value_scale
    k = int(np.argmin(np.abs(u.times - start_time)))
    h = max(s.grid.spacing)
    checks = []
    for i in range(s.components):
        value, error = _mean_and_error(samples[:, i])
        if error > settings.se_fraction * scale:
            raise InsufficientPaths(error, settings.se_fraction * scale)
        grid_value = float(u.values[k, node, i])
        band = 3.0 * error + settings.c_disc * (h + settings.mc_dt)
        checks.append(FKCheck(node, start_time, FKEstimate(value, error, paths, i), grid_value, band, abs(value - grid_value) <= band))
    logger.info("Feynman-Kac at node %d: %s", node, ", ".join(f"{c.estimate.value:.4f}~{c.grid_value:.4f}" for c in checks))
    return checks


def sample_nodes(s: ScenarioSpec, count: int, seed: Optional[int] = None) -> np.ndarray:
    """Distinct interior nodes drawn reproducibly."""
    rng = np.random.default_rng(s.seed if seed is None else seed)
    inner = s.grid.interior
    return np.sort(rng.choice(inner, size=min(count, len(inner)), replace=False))


def feynman_kac_table(
    s: ScenarioSpec,
    u: SolutionField,
    mu: ReactionMeasureField,
    settings: Optional[VerifySettings] = None,
    nodes: Optional[Sequence[int]] = None,
    seed: Optional[int] = None,
) -> List[FKCheck]:
    settings = settings or VerifySettings()
    nodes = sample_nodes(s, settings.mc_nodes, seed) if nodes is None else nodes
    table = []
    for i, node in enumerate(nodes):
        table.extend(feynman_kac_check(s, int(node), u, mu, settings, seed=(s.seed if seed is None else seed) + i))
    return table
