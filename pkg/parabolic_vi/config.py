import os
from dataclasses import dataclass
from typing import Tuple

# Penalization ladder
LADDER = (16, 64, 256, 1024, 4096)
THETA = 1.0  # implicit Euler for the unconstrained march

# Picard / linear solves
TOL_PICARD = 1e-10
TOL_RES = 1e-8
PICARD_MAX_ITER = 20000
PICARD_RELAXATION = 1.0  # scales the damping min(1, 2 / (1 + n dt))
PENALTY_JACOBIAN = False  # true: semi-smooth Newton with the projection's generalized Jacobian
MAX_RETRIES = 4  # dt halvings per rung
LINEAR_SOLVER = "auto"  # auto | direct | cg
CG_TOL = 1e-10
CG_ITER_FACTOR = 10

# Acceptance tolerances
TOL_FEAS_FACTOR = 1e-3  # times the obstacle bound R_D
TOL_MIN = 1e-6  # times the energy scale
TOL_VI = 1e-6
DECAY_SLACK = 1.5
FEASIBILITY_SLACK = 1.05
BOUND_FACTOR = 2.0
WITNESS_RESIDUAL_TOL = 0.05
UNCONSTRAINED_TOL = 1e-6
HEAT_CONSTANT = 5.0
PSOR_GAP = 1e-3

# Convex geometry
DYKSTRA_SWEEP_FACTOR = 10  # sweeps = factor * m * #halfspaces
DYKSTRA_TOL = 1e-12
DIRECTION_FACTOR = 256  # support directions = factor * m

# Admissible test family / sampling
LIPSCHITZ_PROBES = 64
PERTURBATION = 0.1

# Projected SOR oracle
PSOR_OMEGA = 1.5
PSOR_TOL = 1e-12
PSOR_MAX_ITER = 10000

# Monte Carlo
MC_PATHS = 100000
MC_DT = 0.01
MC_NODES = 20
MC_CHUNK = 10000
C_DISC = 1.0
SE_FRACTION = 0.1
SEED = 0

# Result browser
API_PORT = 8000

WORKERS_ENV = "PARABOLIC_VI_WORKERS"


def worker_count() -> int:
    """Number of worker threads, from the environment."""
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SolverSettings:
    ladder: Tuple[int, ...] = LADDER
    theta: float = THETA
    tol_picard: float = TOL_PICARD
    tol_res: float = TOL_RES
    picard_max_iter: int = PICARD_MAX_ITER
    picard_relaxation: float = PICARD_RELAXATION
    penalty_jacobian: bool = PENALTY_JACOBIAN
    max_retries: int = MAX_RETRIES
    linear_solver: str = LINEAR_SOLVER
    cg_tol: float = CG_TOL
    cg_iter_factor: int = CG_ITER_FACTOR
    tol_feas_factor: float = TOL_FEAS_FACTOR
    tol_min: float = TOL_MIN
    tol_vi: float = TOL_VI
    decay_slack: float = DECAY_SLACK
    feasibility_slack: float = FEASIBILITY_SLACK
    bound_factor: float = BOUND_FACTOR
    witness_residual_tol: float = WITNESS_RESIDUAL_TOL
    dykstra_sweep_factor: int = DYKSTRA_SWEEP_FACTOR
    dykstra_tol: float = DYKSTRA_TOL
    direction_factor: int = DIRECTION_FACTOR
    lipschitz_probes: int = LIPSCHITZ_PROBES
    perturbation: float = PERTURBATION


@dataclass(frozen=True)
class VerifySettings:
    mc_paths: int = MC_PATHS
    mc_dt: float = MC_DT
    mc_nodes: int = MC_NODES
    mc_chunk: int = MC_CHUNK
    c_disc: float = C_DISC
    se_fraction: float = SE_FRACTION
    psor_omega: float = PSOR_OMEGA
    psor_tol: float = PSOR_TOL
    psor_max_iter: int = PSOR_MAX_ITER
    psor_gap: float = PSOR_GAP
    heat_constant: float = HEAT_CONSTANT
    unconstrained_tol: float = UNCONSTRAINED_TOL
