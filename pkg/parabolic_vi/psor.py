import logging
from typing import Optional, Tuple

import numpy as np
from scipy import sparse

from .config import VerifySettings
from .convex_geometry import Box
from .errors import SolverDiverged, ValidationError
from .grid_operator import assemble
from .penalized_solver import ScenarioSpec, SolutionField, sigma_gradients

logger = logging.getLogger(__name__)


def projected_sor(
    matrix: sparse.csr_matrix,
    rhs: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    start: np.ndarray,
    omega: float,
    tol: float,
    max_iter: int,
) -> Tuple[np.ndarray, int]:
    """Solves lower <= x <= upper, complementarity with M x - rhs, by projected SOR."""
    indptr, indices, data = matrix.indptr, matrix.indices, matrix.data
    diag = matrix.diagonal()
    x = np.clip(start, lower, upper).astype(float)
    for sweep in range(1, max_iter + 1):
        change = 0.0
        for i in range(len(x)):
            lo, hi = indptr[i], indptr[i + 1]
            off = data[lo:hi] @ x[indices[lo:hi]] - diag[i] * x[i]
            target = x[i] + omega * ((rhs[i] - off) / diag[i] - x[i])
            new = min(max(target, lower[i]), upper[i])
            change = max(change, abs(new - x[i]))
            x[i] = new
        if change <= tol:
            return x, sweep
    raise SolverDiverged(change, max_iter)


def psor_solve(s: ScenarioSpec, settings: Optional[VerifySettings] = None, steps: Optional[int] = None) -> SolutionField:
    """Implicit Euler with the box constraint enforced exactly at each step (m = 1)."""
    settings = settings or VerifySettings()
    if s.components != 1:
        raise ValidationError("verify.oracle", "the projected SOR oracle handles scalar problems only")
    if s.driver.depends_on_solution:
        raise ValidationError("verify.oracle", "the projected SOR oracle needs a driver independent of the solution")
    steps = steps or s.steps
    times = s.times(steps)
    dt = s.horizon / steps
    inner = s.grid.interior
    identity = sparse.identity(len(inner), format="csr")
    values = np.zeros((steps + 1, s.grid.size, 1))
    values[-1] = s.terminal
    system = None
    sweeps = 0
    for k in range(steps - 1, -1, -1):
        t = times[k]
        if system is None or not s.coefficient.static:
            system = (identity - dt * assemble(s.coefficient, s.grid, t).matrix).tocsr()
        sets = s.obstacle_slice(t)
        if not isinstance(sets, Box):
            raise ValidationError("verify.oracle", "the projected SOR oracle needs a box obstacle")
        rhs = values[k + 1, inner, 0] + dt * s.driver.base(t, s.points)[:, 0]
        values[k, inner, 0], used = projected_sor(
            system, rhs, sets.lower[:, 0], sets.upper[:, 0], values[k + 1, inner, 0],
            settings.psor_omega, settings.psor_tol, settings.psor_max_iter,
        )
        sweeps += used
    logger.info("Projected SOR finished %d steps in %d sweeps", steps, sweeps)
    return SolutionField(times, values, sigma_gradients(s, times, values), picard_iterations=sweeps)


def psor_gap(
    s: ScenarioSpec, solution: SolutionField, settings: Optional[VerifySettings] = None
) -> Tuple[float, SolutionField]:
    """Max-norm distance between a penalized solution and the oracle on the same time grid."""
    oracle = psor_solve(s, settings, solution.steps)
    return float(np.max(np.abs(solution.values - oracle.values))), oracle
