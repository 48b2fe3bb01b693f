import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property, partial
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import trapezoid
from scipy.interpolate import interp1d

from .config import SEED, SolverSettings, worker_count
from .convex_geometry import ConvexSet, ObstacleFamily, SeparationWitness
from .errors import (
    InfeasibleTestFunction,
    LadderInvalid,
    LipschitzViolated,
    NonFinite,
    NotConverging,
    PicardDiverged,
    ValidationError,
)
from .grid_operator import (
    CoefficientField,
    DiscreteOperator,
    SpatialGrid,
    ThetaStepper,
    assemble,
    energy_norms,
    grid_gradient,
    resolve_method,
    solve_system,
)

logger = logging.getLogger(__name__)

ADMISSIBLE_TOL = 1e-9
BLOWUP = 1e12


@dataclass(frozen=True, eq=False)
class Driver:
    """f(t, x, y, z) = c y + s(t, x) - lam clip(y, -kappa, kappa)^3 + gamma min(|z^i|, kappa).

    ``z`` holds the rows sigma grad u^i, one per component.
    """

    components: int
    coupling: Optional[np.ndarray] = None
    source: Optional[np.ndarray] = None
    source_field: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    cubic: float = 0.0
    clip: float = 1.0
    gradient_weight: float = 0.0
    declared_alpha: Optional[float] = None
    declared_beta: Optional[float] = None
    kind: str = "zero"

    def __post_init__(self):
        m = self.components
        coupling = np.zeros((m, m)) if self.coupling is None else np.asarray(self.coupling, dtype=float)
        source = np.zeros(m) if self.source is None else np.asarray(self.source, dtype=float).reshape(-1)
        if coupling.shape != (m, m) or source.shape != (m,):
            raise ValueError(f"driver needs a ({m}, {m}) coupling and a length-{m} source")
        if self.cubic < 0 or self.gradient_weight < 0 or self.clip <= 0:
            raise ValueError("driver needs cubic >= 0, gradient_weight >= 0 and clip > 0")
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "source", source)

    @classmethod
    def zero(cls, components: int, source=None, source_field=None) -> "Driver":
        return cls(components, source=source, source_field=source_field, kind="zero")

    @classmethod
    def linear(cls, coupling, source=None, source_field=None) -> "Driver":
        coupling = np.atleast_2d(np.asarray(coupling, dtype=float))
        return cls(coupling.shape[0], coupling, source, source_field, kind="linear")

    @classmethod
    def clipped(cls, coupling, source=None, cubic=0.0, clip=1.0, gradient_weight=0.0, source_field=None) -> "Driver":
        coupling = np.atleast_2d(np.asarray(coupling, dtype=float))
        return cls(coupling.shape[0], coupling, source, source_field, cubic, clip, gradient_weight, kind="clipped")

    @property
    def alpha(self) -> float:
        if self.declared_alpha is not None:
            return self.declared_alpha
        return float(np.linalg.norm(self.coupling, 2) + 3.0 * self.cubic * self.clip**2)

    @property
    def beta(self) -> float:
        return self.gradient_weight if self.declared_beta is None else self.declared_beta

    @property
    def depends_on_solution(self) -> bool:
        return bool(np.any(self.coupling) or self.cubic or self.gradient_weight)

    @property
    def depends_on_gradient(self) -> bool:
        return self.gradient_weight != 0.0

    def base(self, t: float, points: np.ndarray) -> np.ndarray:
        """f(t, x, 0, 0)."""
        out = np.broadcast_to(self.source, (len(points), self.components)).copy()
        if self.source_field is not None:
            out += np.asarray(self.source_field(t, points), dtype=float)
        return out

    def __call__(self, t: float, points: np.ndarray, y: np.ndarray, z: Optional[np.ndarray] = None) -> np.ndarray:
        out = self.base(t, points) + y @ self.coupling.T
        if self.cubic:
            out -= self.cubic * np.clip(y, -self.clip, self.clip) ** 3
        if self.gradient_weight and z is not None:
            out += self.gradient_weight * np.minimum(np.linalg.norm(z, axis=-1), self.clip)
        return out


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    name: str
    grid: SpatialGrid
    horizon: float
    steps: int
    components: int
    terminal: np.ndarray
    driver: Driver
    coefficient: CoefficientField
    obstacle: ObstacleFamily
    witness: Optional[SeparationWitness] = None
    settings: SolverSettings = field(default_factory=SolverSettings)
    seed: int = SEED

    def __post_init__(self):
        object.__setattr__(self, "terminal", np.asarray(self.terminal, dtype=float).reshape(self.grid.size, self.components))

    @property
    def points(self) -> np.ndarray:
        return self.grid.points[self.grid.interior]

    def times(self, steps: Optional[int] = None) -> np.ndarray:
        return np.linspace(0.0, self.horizon, (steps or self.steps) + 1)

    def obstacle_slice(self, t: float) -> ConvexSet:
        """D(t, .) on the interior nodes."""
        return self.obstacle.evaluate(t, self.points)

    def validate(self) -> None:
        """Terminal data inside D(T, x), finite source, sampled Lipschitz bound on the driver."""
        if self.horizon <= 0 or self.steps < 1:
            raise ValidationError("time", "need a positive horizon and at least one step")
        if self.coefficient.dim != self.grid.dim:
            raise ValidationError("coefficient", "coefficient dimension does not match the domain")
        if self.driver.components != self.components:
            raise ValidationError("driver", "driver size does not match the system size")
        validated_ladder(self.settings.ladder)
        inner = self.grid.interior
        gaps = self.obstacle_slice(self.horizon).dist(self.terminal[inner])
        worst = int(np.argmax(gaps))
        if gaps[worst] > ADMISSIBLE_TOL * (1.0 + self.obstacle.bound):
            raise ValidationError(
                "terminal", f"terminal value lies {gaps[worst]:.3e} outside D(T, x) at node {inner[worst]}"
            )
        for t in self.times():
            if not np.all(np.isfinite(self.driver.base(t, self.grid.points))):
                raise ValidationError("driver", f"f(t, x, 0, 0) is not finite at t={t:.6g}")
        probe_lipschitz(self)


def validated_ladder(ladder) -> Tuple[int, ...]:
    ladder = tuple(ladder)
    if len(ladder) < 3:
        raise LadderInvalid("penalization ladder needs at least three rungs")
    if any(n <= 0 for n in ladder) or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise LadderInvalid(f"ladder {ladder} must be positive and strictly increasing")
    return ladder


def probe_lipschitz(s: ScenarioSpec, probes: Optional[int] = None) -> float:
    """Largest sampled |f1 - f2| / (alpha|y1 - y2| + beta|z1 - z2|); raises if above one."""
    rng = np.random.default_rng(s.seed)
    count = probes or s.settings.lipschitz_probes
    m, d = s.components, s.grid.dim
    nodes = rng.integers(0, s.grid.size, count)
    points = s.grid.points[nodes]
    t = float(rng.uniform(0.0, s.horizon))
    scale = max(1.0, s.obstacle.bound)
    y1, y2 = scale * rng.standard_normal((2, count, m))
    z1, z2 = scale * rng.standard_normal((2, count, m, d))
    gap = np.linalg.norm(s.driver(t, points, y1, z1) - s.driver(t, points, y2, z2), axis=1)
    allowed = s.driver.alpha * np.linalg.norm(y1 - y2, axis=1) + s.driver.beta * np.linalg.norm(z1 - z2, axis=(1, 2))
    ratio = float(np.max(gap / np.maximum(allowed, np.finfo(float).tiny)))
    if np.any(gap > allowed * (1 + 1e-9) + 1e-12):
        raise LipschitzViolated(f"driver exceeds its Lipschitz constants (ratio {ratio:.3f})")
    return ratio


def driver_eval(s: ScenarioSpec, t: float, x, y, z=None) -> np.ndarray:
    """f(t, x, y, z) for one point or a batch of points."""
    single = np.ndim(y) == 1
    points = np.asarray(x, dtype=float).reshape(-1, s.grid.dim)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if z is not None:
        z = np.asarray(z, dtype=float).reshape(len(y), s.components, s.grid.dim)
    out = s.driver(t, points, y, z)
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"driver returned non-finite values at t={t:.6g}")
    return out[0] if single else out


@dataclass(eq=False)
class SolutionField:
    times: np.ndarray
    values: np.ndarray  # (steps + 1, nodes, m)
    gradients: np.ndarray  # sigma grad u, (steps + 1, nodes, m, d)
    penalty: Optional[float] = None
    picard_iterations: int = 0
    retries: int = 0

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def restrict(self, steps: int) -> "SolutionField":
        """Subsamples onto a coarser time grid whose step count divides ours."""
        if self.steps % steps:
            raise ValueError(f"cannot restrict {self.steps} steps to {steps}")
        stride = self.steps // steps
        return SolutionField(
            self.times[::stride], self.values[::stride], self.gradients[::stride],
            self.penalty, self.picard_iterations, self.retries,
        )


@dataclass(eq=False)
class ReactionMeasureField:
    times: np.ndarray
    density: np.ndarray  # (steps + 1, nodes, m)
    node_volume: float
    penalty: Optional[float] = None

    @property
    def step_weights(self) -> np.ndarray:
        # left-point rule; the terminal slice carries no mass
        return np.append(np.diff(self.times), 0.0)

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.node_volume * self.step_weights[:, None, None]

    @cached_property
    def total_variation(self) -> float:
        return float(np.abs(self.masses).sum())

    def pairing(self, psi: np.ndarray) -> float:
        return float(np.sum(self.masses * psi))


def sigma_gradients(s: ScenarioSpec, times: np.ndarray, values: np.ndarray) -> np.ndarray:
    grad = grid_gradient(values, s.grid)
    out = np.empty_like(grad)
    for k, t in enumerate(times):
        out[k] = np.einsum("nde,nie->nid", s.coefficient.sigma_on_grid(t, s.grid), grad[k])
    return out


def _interior_forcing(s: ScenarioSpec, t: float, v: np.ndarray) -> np.ndarray:
    """Driver at the interior nodes for an interior iterate (zero Dirichlet values)."""
    z = None
    if s.driver.depends_on_gradient:
        full = np.zeros((s.grid.size, s.components))
        full[s.grid.interior] = v
        z = sigma_gradients(s, np.array([t]), full[None])[0][s.grid.interior]
    return s.driver(t, s.points, v, z)


def _newton_candidate(op, sets, v, proj, rhs, dt, ndt, method, settings):
    """Solves the step with the projection linearized at v (component-major unknowns)."""
    size, m = v.shape
    jac = sets.jacobian(v)
    base = sparse.identity(size, format="csr") - dt * op.matrix
    blocks = [[ndt * sparse.diags(float(i == j) - jac[:, i, j]) for j in range(m)] for i in range(m)]
    system = (sparse.bmat(blocks) + sparse.kron(sparse.identity(m), base)).tocsr()
    rhs = rhs + ndt * (proj - np.einsum("pij,pj->pi", jac, v))
    flat, _ = solve_system(
        system, rhs.T.reshape(-1), method, tol=settings.cg_tol, maxiter=settings.cg_iter_factor * size * m
    )
    return flat.reshape(m, size).T


def picard_damping(n: float, dt: float, relaxation: float = 1.0) -> float:
    """omega = min(1, 2 / (1 + n dt)), scaled by the configured relaxation."""
    return relaxation * min(1.0, 2.0 / (1.0 + n * dt))


def _implicit_step(s, op, sets, t, b, dt, n, step) -> Tuple[np.ndarray, int]:
    st = s.settings
    ndt = n * dt
    scale = 1.0 + float(np.max(np.abs(b)))
    if st.penalty_jacobian:
        method = resolve_method(st.linear_solver, s.grid.dim)
        omega = st.picard_relaxation
        stepper = None
    else:
        # (I - dt A) is fixed across the iterations of a step: factorise it once
        method = "direct" if st.linear_solver == "auto" else st.linear_solver
        omega = picard_damping(n, dt, st.picard_relaxation)
        stepper = ThetaStepper(op, dt, 1.0, method=method, cg_tol=st.cg_tol, cg_iter_factor=st.cg_iter_factor)
    v = b.copy()
    proj = sets.project(v)
    force = _interior_forcing(s, t, v)
    residual = np.inf
    for iteration in range(1, st.picard_max_iter + 1):
        rhs = b + dt * force
        if stepper is None:
            candidate = _newton_candidate(op, sets, v, proj, rhs, dt, ndt, method, st)
        else:
            candidate = stepper.solve(rhs - ndt * (v - proj))
        v_new = v + omega * (candidate - v)
        if not np.all(np.isfinite(v_new)) or np.max(np.abs(v_new)) > BLOWUP * scale:
            raise PicardDiverged(step, np.inf)
        proj = sets.project(v_new)
        force = _interior_forcing(s, t, v_new)
        defect = v_new - dt * op.apply(v_new) + ndt * (v_new - proj) - b - dt * force
        residual = float(np.max(np.abs(defect))) / scale
        increment = float(np.max(np.abs(v_new - v))) / scale
        v = v_new
        if residual <= st.tol_res and increment <= st.tol_picard:
            return v, iteration
    raise PicardDiverged(step, residual)


def _operators(s: ScenarioSpec, times: np.ndarray) -> List[DiscreteOperator]:
    if s.coefficient.static:
        op = assemble(s.coefficient, s.grid, times[0])
        return [op] * len(times)
    return [assemble(s.coefficient, s.grid, t) for t in times]


def solve_penalized(s: ScenarioSpec, n: float, steps: Optional[int] = None) -> Tuple[SolutionField, ReactionMeasureField]:
    """Backward implicit Euler for the penalized system at penalty level n."""
    if n <= 0:
        raise ValueError("penalty level must be positive")
    steps = steps or s.steps
    times = s.times(steps)
    dt = s.horizon / steps
    inner = s.grid.interior
    values = np.zeros((steps + 1, s.grid.size, s.components))
    values[-1] = s.terminal
    ops = _operators(s, times)
    iterations = 0
    for k in range(steps - 1, -1, -1):
        sets = s.obstacle_slice(times[k])
        values[k, inner], used = _implicit_step(s, ops[k], sets, times[k], values[k + 1, inner], dt, n, k)
        iterations += used
    solution = SolutionField(times, values, sigma_gradients(s, times, values), n, iterations)
    return solution, reaction_measure(s, solution, n)


def reaction_measure(s: ScenarioSpec, u: SolutionField, n: float) -> ReactionMeasureField:
    """Density -n (u - Pi_D(u)) at interior nodes; zero on the boundary and the terminal slice."""
    inner = s.grid.interior
    density = np.zeros_like(u.values)
    for k, t in enumerate(u.times[:-1]):
        v = u.values[k, inner]
        density[k, inner] = -n * (v - s.obstacle_slice(t).project(v))
    return ReactionMeasureField(u.times, density, s.grid.node_volume, n)


def solve_unconstrained(s: ScenarioSpec, steps: Optional[int] = None) -> SolutionField:
    """The theta-scheme without penalty, driver handled by fixed-point iteration."""
    st = s.settings
    steps = steps or s.steps
    times = s.times(steps)
    dt = s.horizon / steps
    theta = st.theta
    inner = s.grid.interior
    values = np.zeros((steps + 1, s.grid.size, s.components))
    values[-1] = s.terminal
    ops = _operators(s, times)
    for k in range(steps - 1, -1, -1):
        stepper = ThetaStepper(ops[k], dt, theta, method=st.linear_solver, cg_tol=st.cg_tol, cg_iter_factor=st.cg_iter_factor)
        known = values[k + 1, inner]
        explicit = known + (1.0 - theta) * dt * (ops[k + 1].apply(known) + _interior_forcing(s, times[k + 1], known))
        v = known.copy()
        for iteration in range(st.picard_max_iter):
            v_new = stepper.solve(explicit + theta * dt * _interior_forcing(s, times[k], v))
            increment = float(np.max(np.abs(v_new - v))) / (1.0 + float(np.max(np.abs(known))))
            v = v_new
            if not s.driver.depends_on_solution or increment <= st.tol_picard:
                break
        else:
            raise PicardDiverged(k, increment)
        values[k, inner] = v
    return SolutionField(times, values, sigma_gradients(s, times, values))


def feasibility_gap(s: ScenarioSpec, u: SolutionField) -> float:
    """||dist(u, D)|| in L2 over space-time."""
    inner = s.grid.interior
    per_slice = np.array([
        np.sum(s.obstacle_slice(t).dist(u.values[k, inner]) ** 2) * s.grid.node_volume
        for k, t in enumerate(u.times)
    ])
    return float(np.sqrt(trapezoid(per_slice, u.times)))


def contact_band(s: ScenarioSpec, mu: ReactionMeasureField, reference: SolutionField) -> float:
    """Largest depth of ``reference`` inside D where the density is nonzero (0 without contact)."""
    inner = s.grid.interior
    widest = 0.0
    for k, t in enumerate(mu.times[:-1]):
        active = np.any(mu.density[k, inner] != 0.0, axis=-1)
        if active.any():
            depths = s.obstacle_slice(t).depth(reference.values[k, inner])[active]
            widest = max(widest, float(depths.max()))
    return widest


def reaction_support(s: ScenarioSpec, u: SolutionField, mu: ReactionMeasureField) -> float:
    """Largest dist(u, boundary of D) at nodes carrying reaction density (0 without contact)."""
    inner = s.grid.interior
    widest = 0.0
    for k, t in enumerate(mu.times[:-1]):
        active = np.any(mu.density[k, inner] != 0.0, axis=-1)
        if active.any():
            depths = np.abs(s.obstacle_slice(t).depth(u.values[k, inner][active]))
            widest = max(widest, float(depths.max()))
    return widest


def _space_time_norm(values: np.ndarray, grid: SpatialGrid, times: np.ndarray) -> float:
    axes = tuple(range(2, values.ndim))
    per_slice = np.einsum("kn,n->k", np.sum(values**2, axis=axes), grid.weights)
    return float(np.sqrt(trapezoid(per_slice, times)))


def witness_on(s: ScenarioSpec, times: np.ndarray) -> np.ndarray:
    """Witness values resampled onto ``times`` (linear in time)."""
    values = s.witness.values
    if len(values) == len(times):
        return values
    return interp1d(s.times(), values, axis=0)(times)


def smooth_test_field(s: ScenarioSpec, times: np.ndarray) -> np.ndarray:
    """psi(t, x) = (1 + t) prod sin(pi x_i / l_i), vanishing on the boundary."""
    bump = np.prod(np.sin(np.pi * s.grid.points / np.array(s.grid.lengths)), axis=1)
    return (1.0 + times)[:, None, None] * bump[None, :, None] * np.ones(s.components)


def admissible_test_family(u: SolutionField, s: ScenarioSpec) -> Dict[str, np.ndarray]:
    """Admissible fields h(t, x) in D(t, x) used by the minimality and inequality checks."""
    inner = s.grid.interior
    slices = [s.obstacle_slice(t) for t in u.times]

    def projected(values):
        out = u.values.copy()
        for k, sets in enumerate(slices):
            out[k, inner] = sets.project(values[k, inner])
        return out

    family = {"projected_solution": projected(u.values)}
    constants = {"zero": np.zeros(s.components)}
    if s.witness is not None:
        witness = witness_on(s, u.times)
        family["projected_witness"] = projected(witness)
        constants["witness_mean"] = witness[:, inner].mean(axis=(0, 1))
    for name, value in constants.items():
        if all(np.all(sets.contains(np.broadcast_to(value, (len(inner), s.components)), ADMISSIBLE_TOL)) for sets in slices):
            field_values = u.values.copy()
            field_values[:, inner] = value
            family[f"constant_{name}"] = field_values
    rng = np.random.default_rng(s.seed)
    delta = s.settings.perturbation * (1.0 + float(np.max(np.abs(u.values))))
    noise = rng.standard_normal(u.values.shape)
    family["perturbed_up"] = projected(u.values + delta * noise)
    family["perturbed_down"] = projected(u.values - delta * noise)
    return family


def _require_admissible(h: np.ndarray, s: ScenarioSpec, times: np.ndarray) -> None:
    inner = s.grid.interior
    tol = ADMISSIBLE_TOL * (1.0 + s.obstacle.bound)
    for k, t in enumerate(times):
        gaps = s.obstacle_slice(t).dist(h[k, inner])
        worst = int(np.argmax(gaps))
        if gaps[worst] > tol:
            raise InfeasibleTestFunction((k, int(inner[worst])), float(gaps[worst]))


def check_minimality(u: SolutionField, mu: ReactionMeasureField, h: np.ndarray, s: ScenarioSpec) -> np.ndarray:
    """int_t^T int_E <u - h, dmu> for every lower limit t on the time grid."""
    h = np.asarray(h, dtype=float)
    if h.shape != u.values.shape or mu.density.shape != u.values.shape:
        raise ValueError("test field, solution and measure must share the space-time grid")
    _require_admissible(h, s, u.times)
    inner = s.grid.interior
    pointwise = np.einsum("knm,knm->k", (u.values - h)[:, inner], mu.density[:, inner])
    terms = pointwise * mu.node_volume * mu.step_weights
    return np.cumsum(terms[::-1])[::-1]


def _driver_slices(s: ScenarioSpec, u: SolutionField) -> np.ndarray:
    inner = s.grid.interior
    return np.stack([
        s.driver(t, s.points, u.values[k, inner], u.gradients[k, inner]) for k, t in enumerate(u.times)
    ])


def check_variational_inequality(u: SolutionField, s: ScenarioSpec, v: np.ndarray) -> float:
    """LHS of the parabolic inequality minus (1/2)||v(T) - phi||^2; nonpositive for a solution."""
    v = np.asarray(v, dtype=float)
    if v.shape != u.values.shape:
        raise ValueError("test field must share the solution's space-time grid")
    _require_admissible(v, s, u.times)
    inner = s.grid.interior
    vol = s.grid.node_volume
    ops = _operators(s, u.times)
    force = _driver_slices(s, u)
    gap = (v - u.values)[:, inner]
    lhs = 0.0
    for k in range(u.steps):
        dt = u.times[k + 1] - u.times[k]
        rate = (v[k + 1] - v[k])[inner]
        lhs += np.sum(rate * gap[k]) + dt * np.sum((ops[k].apply(u.values[k, inner]) + force[k]) * gap[k])
    terminal = 0.5 * np.sum((v[-1] - s.terminal)[inner] ** 2)
    return float(vol * (lhs - terminal))


def check_weak_formulation(u: SolutionField, mu: ReactionMeasureField, s: ScenarioSpec, eta: Optional[np.ndarray] = None) -> np.ndarray:
    """Residual of the weak identity for a test field vanishing on the boundary, per lower limit t."""
    eta = smooth_test_field(s, u.times) if eta is None else np.broadcast_to(eta, u.values.shape)
    inner = s.grid.interior
    vol = s.grid.node_volume
    ops = _operators(s, u.times)
    force = _driver_slices(s, u)
    uu, ee, rho = u.values[:, inner], eta[:, inner], mu.density[:, inner]
    terms = np.zeros(u.steps + 1)
    for k in range(u.steps):
        dt = u.times[k + 1] - u.times[k]
        terms[k] = np.sum(uu[k + 1] * (ee[k + 1] - ee[k])) - dt * np.sum(
            (ops[k].apply(uu[k]) + force[k] + rho[k]) * ee[k]
        )
    tail = np.cumsum(terms[::-1])[::-1]
    start = np.einsum("knm,knm->k", uu, ee)
    final = np.sum(s.terminal[inner] * ee[-1])
    return vol * (start + tail - final)


@dataclass
class RungDiagnostics:
    penalty: float
    steps: int
    retries: int
    picard_iterations: int
    sup_l2: float
    gradient_energy: float
    difference: Optional[float]
    gradient_difference: Optional[float]
    feasibility: float
    total_variation: float
    pairing: float
    minimality: float
    vi_residual: float
    wall_time: float

    @property
    def energy(self) -> float:
        return self.sup_l2 + self.gradient_energy

    def to_dict(self) -> dict:
        row = asdict(self)
        row["energy"] = self.energy
        return row


@dataclass
class ConvergenceReport:
    rows: List[RungDiagnostics] = field(default_factory=list)
    data_norm: float = 0.0
    tol_feas: float = 0.0
    energy_scale: float = 1.0
    decay_ok: bool = False
    feasibility_ok: bool = False
    minimality_ok: bool = False
    vi_ok: bool = False
    success: bool = False

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "rows"}
        out["rows"] = [row.to_dict() for row in self.rows]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ConvergenceReport":
        names = set(RungDiagnostics.__dataclass_fields__)
        rows = [RungDiagnostics(**{k: v for k, v in row.items() if k in names}) for row in data.get("rows", [])]
        return cls(rows, **{k: v for k, v in data.items() if k != "rows"})


@dataclass
class EnergyBoundResult:
    passed: bool
    energy_ratio: float
    tv_ratio: float
    empirical_constant: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def data_norm(s: ScenarioSpec) -> float:
    """||phi||_H^2 + ||f(., ., 0, 0)||^2 over space-time."""
    w = s.grid.weights
    times = s.times()
    source = np.array([np.einsum("nm,n->", s.driver.base(t, s.grid.points) ** 2, w) for t in times])
    return float(np.einsum("nm,n->", s.terminal**2, w) + trapezoid(source, times))


def solve_with_retries(s: ScenarioSpec, n: float) -> Tuple[SolutionField, ReactionMeasureField, float]:
    """solve_penalized, halving dt on PicardDiverged up to max_retries times; also returns wall time."""
    steps = s.steps
    for attempt in range(s.settings.max_retries + 1):
        start = time.perf_counter()
        try:
            solution, measure = solve_penalized(s, n, steps)
        except PicardDiverged as exc:
            if attempt == s.settings.max_retries:
                raise
            logger.warning("Picard diverged at step %d for n=%g, halving dt", exc.step, n)
            steps *= 2
            continue
        solution.retries = attempt
        elapsed = time.perf_counter() - start
        logger.info("Solved rung n=%g in %.2fs (%d Picard iterations)", n, elapsed, solution.picard_iterations)
        return solution, measure, elapsed


def family_residuals(s, solution, measure) -> Tuple[float, float]:
    worst_min = worst_vi = -np.inf
    for name, h in admissible_test_family(solution, s).items():
        worst_min = max(worst_min, float(np.max(check_minimality(solution, measure, h, s))))
        worst_vi = max(worst_vi, check_variational_inequality(solution, s, h))
    return worst_min, worst_vi


def _decays(values: List[float], slack: float, floor: float) -> List[bool]:
    return [b <= slack * a + floor for a, b in zip(values, values[1:])]


def run_ladder(s: ScenarioSpec) -> Tuple[SolutionField, ReactionMeasureField, ConvergenceReport]:
    """Solves every rung of the penalization ladder and assembles the convergence diagnostics."""
    st = s.settings
    ladder = validated_ladder(st.ladder)
    workers = min(worker_count(), len(ladder))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(partial(solve_with_retries, s), ladder))
    else:
        results = [solve_with_retries(s, n) for n in ladder]

    base = s.times()
    report = ConvergenceReport(data_norm=data_norm(s), tol_feas=st.tol_feas_factor * s.obstacle.bound)
    previous = None
    for n, (solution, measure, elapsed) in zip(ladder, results):
        coarse = solution.restrict(s.steps)
        sup_l2, grad_energy = energy_norms(solution, s.grid)
        difference = gradient_difference = None
        if previous is not None:
            difference = _space_time_norm(coarse.values - previous.values, s.grid, base)
            gradient_difference = _space_time_norm(coarse.gradients - previous.gradients, s.grid, base)
        minimality, vi_residual = family_residuals(s, solution, measure)
        report.rows.append(RungDiagnostics(
            penalty=float(n),
            steps=solution.steps,
            retries=solution.retries,
            picard_iterations=solution.picard_iterations,
            sup_l2=sup_l2,
            gradient_energy=grad_energy,
            difference=difference,
            gradient_difference=gradient_difference,
            feasibility=feasibility_gap(s, solution),
            total_variation=measure.total_variation,
            pairing=measure.pairing(smooth_test_field(s, solution.times)),
            minimality=minimality,
            vi_residual=vi_residual,
            wall_time=elapsed,
        ))
        previous = coarse

    finest_solution, finest_measure, _ = results[-1]
    _assess(report, s, finest_solution)
    return finest_solution, finest_measure, report


def _assess(report: ConvergenceReport, s: ScenarioSpec, finest: SolutionField) -> None:
    st = s.settings
    rows = report.rows
    report.energy_scale = 1.0 + rows[-1].energy
    floor = st.tol_res * (1.0 + float(np.max(np.abs(finest.values))))
    differences = [r.difference for r in rows[1:]]
    steps_ok = _decays(differences, st.decay_slack, floor)
    report.decay_ok = all(steps_ok) and all(_decays([r.gradient_difference for r in rows[1:]], st.decay_slack, floor / min(s.grid.spacing)))
    feas = [r.feasibility for r in rows]
    report.feasibility_ok = rows[-1].feasibility < report.tol_feas and all(
        _decays(feas, st.feasibility_slack, floor)
    )
    report.minimality_ok = all(r.minimality <= st.tol_min * report.energy_scale for r in rows)
    report.vi_ok = all(r.vi_residual <= st.tol_vi * report.energy_scale for r in rows)
    report.success = report.decay_ok and report.feasibility_ok and report.minimality_ok and report.vi_ok
    if not steps_ok[-1]:
        raise NotConverging(
            f"rung differences {differences[-2]:.3e} -> {differences[-1]:.3e} fail to decay at the finest rungs"
        )
    logger.info("Ladder %s: feasibility %.3e (tol %.1e), success=%s", s.name, rows[-1].feasibility, report.tol_feas, report.success)


def check_energy_bound(report: ConvergenceReport, factor: Optional[float] = None) -> EnergyBoundResult:
    """Uniform-in-n energy and total-variation traces: max over rungs within factor x median."""
    if len(report.rows) < 2:
        raise ValueError("energy bound check needs at least two rungs")
    factor = factor or SolverSettings().bound_factor
    energies = np.array([r.energy for r in report.rows])
    variations = np.array([r.total_variation for r in report.rows])

    def ratio(values):
        median = float(np.median(values))
        return float(values.max() / median) if median > 0 else (0.0 if values.max() == 0 else np.inf)

    energy_ratio, tv_ratio = ratio(energies), ratio(variations)
    constant = float(energies.max() / report.data_norm) if report.data_norm > 0 else None
    return EnergyBoundResult(energy_ratio <= factor and tv_ratio <= factor, energy_ratio, tv_ratio, constant)


def separation_bound(s: ScenarioSpec, report: ConvergenceReport) -> Tuple[Optional[float], Optional[float]]:
    """Witness-based bound on the reaction total variation and the empirical constant max TV / bound."""
    w = s.witness
    if w is None:
        return None, None
    weights = s.grid.weights
    times = s.times()
    phi_star = w.values[-1] if w.terminal is None else w.terminal
    f_star = np.zeros_like(w.values) if w.source is None else w.source
    terminal_gap = float(np.einsum("nm,n->", (s.terminal - phi_star) ** 2, weights))
    source_gap = np.array([
        np.einsum("nm,n->", (s.driver.base(t, s.grid.points) - f_star[k]) ** 2, weights) for k, t in enumerate(times)
    ])
    sup_l2, grad_energy = energy_norms(w.values, s.grid, times)
    bound = (terminal_gap + float(trapezoid(source_gap, times)) + sup_l2 + grad_energy) / w.epsilon
    largest = max(r.total_variation for r in report.rows)
    constant = largest / bound if bound > 0 else None
    logger.info("Reaction TV %.3e against witness bound %.3e", largest, bound)
    return bound, constant
