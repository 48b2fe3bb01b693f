import logging
import os
from typing import Optional, Tuple

import numpy as np

from .convex_geometry import validate_continuity, validate_separation
from .errors import (
    MarginViolated,
    ObstacleProblemError,
    ScenarioFailure,
    UniformBoundViolated,
    ValidationError,
)
from .grid_operator import energy_norms
from .penalized_solver import (
    ADMISSIBLE_TOL,
    ConvergenceReport,
    ReactionMeasureField,
    ScenarioSpec,
    SolutionField,
    check_energy_bound,
    check_weak_formulation,
    contact_band,
    family_residuals,
    feasibility_gap,
    reaction_support,
    run_ladder,
    separation_bound,
    sigma_gradients,
    solve_unconstrained,
    solve_with_retries,
)
from .provenance import stamp
from .psor import psor_gap
from .scenarios import ScenarioConfig, build_scenario, isotropic_constant, laplace_eigenvalue
from .stochastic_verifier import feynman_kac_table, mean_exit_time, sample_nodes, simulate_paths, stopped_expectation
from .storage import RESULT_FILE, RunResult, check, read_result

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("solve", "ladder", "verify", "mc-check")
MARTINGALE_SEED_OFFSET = 7919


def run(config: ScenarioConfig, subcommand: str, out_dir: Optional[str] = None, seed: Optional[int] = None) -> RunResult:
    """Runs one subcommand on a scenario; module errors come back as ScenarioFailure."""
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r} (choose from {', '.join(SUBCOMMANDS)})")
    if seed is not None:
        config = config.with_value("scenario", "seed", seed)
    try:
        s = build_scenario(config)
        result = RunResult(
            scenario=config.name,
            subcommand=subcommand,
            config_text=config.to_text(),
            provenance=stamp(config.config_hash(), config.seed),
            grid={"lengths": list(s.grid.lengths), "cells": list(s.grid.cells), "components": s.components},
        )
        if subcommand == "solve":
            u, mu = _solve(config, s, result)
            _solution_checks(config, s, u, mu, result)
        elif subcommand == "ladder":
            u, mu, report = run_ladder(s)
            _record(result, u, mu, report)
            _solution_checks(config, s, u, mu, result, family=False)
            _ladder_checks(s, report, result)
        elif subcommand == "verify":
            _verify(config, s, result, out_dir)
        else:
            u, mu = _solve(config, s, result)
            _monte_carlo_checks(config, s, u, mu, result)
    except ObstacleProblemError as exc:
        raise ScenarioFailure(config.name, subcommand, exc) from exc
    failed = [name for name, c in result.checks.items() if not c["passed"]]
    if failed:
        logger.warning("%s/%s failed checks: %s", config.name, subcommand, ", ".join(failed))
    else:
        logger.info("%s/%s passed %d checks", config.name, subcommand, len(result.checks))
    return result


def _record(result: RunResult, u: SolutionField, mu: ReactionMeasureField, report: Optional[ConvergenceReport] = None):
    result.times = u.times
    result.solution = u.values
    result.density = mu.density
    result.penalty = None if u.penalty is None else float(u.penalty)
    result.report = report
    result.diagnostics["total_variation"] = mu.total_variation
    result.diagnostics["picard_iterations"] = float(u.picard_iterations)
    result.diagnostics["retries"] = float(u.retries)


def _solve(config: ScenarioConfig, s: ScenarioSpec, result: RunResult) -> Tuple[SolutionField, ReactionMeasureField]:
    u, mu, elapsed = solve_with_retries(s, config.solve_penalty())
    _record(result, u, mu)
    result.diagnostics["wall_time"] = elapsed
    return u, mu


def _energy_scale(s: ScenarioSpec, u: SolutionField) -> float:
    return 1.0 + sum(energy_norms(u, s.grid))


def _solution_checks(config, s, u, mu, result, family: bool = True) -> None:
    st = s.settings
    checks = result.checks
    scale = _energy_scale(s, u)
    tol_feas = st.tol_feas_factor * s.obstacle.bound
    gap = feasibility_gap(s, u)
    checks["feasibility"] = check(gap < tol_feas, gap, tol_feas)
    support = reaction_support(s, u, mu)
    checks["reaction_support"] = check(support < 2.0 * tol_feas, support, 2.0 * tol_feas)
    if family:
        minimality, vi = family_residuals(s, u, mu)
        checks["minimality"] = check(minimality <= st.tol_min * scale, minimality, st.tol_min * scale)
        checks["variational_inequality"] = check(vi <= st.tol_vi * scale, vi, st.tol_vi * scale)

    weak = float(np.max(np.abs(check_weak_formulation(u, mu, s))))
    # per-step defects of size tol_res, summed against the test field
    volume = float(np.prod(s.grid.lengths))
    weak_limit = 10.0 * st.tol_res * u.steps * (1.0 + float(np.max(np.abs(u.values)))) * volume * (1.0 + s.horizon)
    checks["weak_formulation"] = check(weak <= weak_limit, weak, weak_limit)

    oracle = config["verify"]["oracle"]
    if oracle == "heat":
        error, limit = heat_error(config, s, u)
        checks["heat_oracle"] = check(error <= limit, error, limit)
    elif oracle == "psor":
        _psor_checks(config, s, u, mu, result)
    _no_contact_check(config, s, u, mu, result)


def heat_error(config: ScenarioConfig, s: ScenarioSpec, u: SolutionField) -> Tuple[float, float]:
    """Max-norm error against phi(x) exp(-(kappa / 2) lam (T - t)) and its allowed size C (h^2 + dt)."""
    v = config.values
    kappa = isotropic_constant(v["coefficient"], s.grid.dim)
    if v["terminal"]["kind"] != "sine" or kappa is None or s.driver.depends_on_solution or np.any(s.driver.source):
        raise ValidationError(
            "verify.oracle", "the heat oracle needs a sine terminal, a constant isotropic coefficient and f = 0"
        )
    inner = s.grid.interior
    decay = np.exp(-0.5 * kappa * laplace_eigenvalue(s.grid.lengths) * (s.horizon - u.times))
    exact = decay[:, None, None] * s.terminal[inner][None]
    error = float(np.max(np.abs(u.values[:, inner] - exact)))
    h = max(s.grid.spacing)
    limit = config.verify_settings().heat_constant * (h**2 + s.horizon / u.steps)
    return error, limit


def _psor_checks(config, s, u, mu, result) -> None:
    vs = config.verify_settings()
    gap, oracle = psor_gap(s, u, vs)
    result.checks["psor_gap"] = check(gap < vs.psor_gap, gap, vs.psor_gap)
    lowest = float(np.min(mu.density))
    result.checks["density_sign"] = check(lowest >= 0.0, lowest, 0.0)
    band = contact_band(s, mu, oracle)
    result.checks["contact_band"] = check(band <= vs.psor_gap, band, vs.psor_gap)


def _no_contact_check(config, s, u, mu, result) -> None:
    """When the unconstrained solution never leaves D, the penalty must stay idle."""
    if s.settings.theta != 1.0:
        return
    free = solve_unconstrained(s, u.steps)
    inner = s.grid.interior
    tol = ADMISSIBLE_TOL * (1.0 + s.obstacle.bound)
    if not all(np.all(s.obstacle_slice(t).contains(free.values[k, inner], tol)) for k, t in enumerate(free.times)):
        return
    vs = config.verify_settings()
    limit = vs.unconstrained_tol * (1.0 + float(np.max(np.abs(free.values))))
    difference = float(np.max(np.abs(u.values - free.values)))
    tol_feas = s.settings.tol_feas_factor * s.obstacle.bound
    result.checks["no_contact"] = check(difference < limit and mu.total_variation < tol_feas, difference, limit)


def _ladder_checks(s: ScenarioSpec, report: ConvergenceReport, result: RunResult) -> None:
    st = s.settings
    rows = report.rows
    checks = result.checks
    checks["decay"] = check(report.decay_ok, rows[-1].difference, st.decay_slack * rows[-2].difference)
    checks["feasibility"] = check(report.feasibility_ok, rows[-1].feasibility, report.tol_feas)
    checks["minimality"] = check(
        report.minimality_ok, max(r.minimality for r in rows), st.tol_min * report.energy_scale
    )
    checks["variational_inequality"] = check(
        report.vi_ok, max(r.vi_residual for r in rows), st.tol_vi * report.energy_scale
    )
    bound = check_energy_bound(report, st.bound_factor)
    checks["energy_bound"] = check(bound.passed, max(bound.energy_ratio, bound.tv_ratio), st.bound_factor)
    result.diagnostics["energy_constant"] = bound.empirical_constant

    try:
        continuity = validate_continuity(s.obstacle, s.grid, s.times(), n_dir=st.direction_factor * s.components)
        checks["continuity"] = check(True, continuity.max_radius, continuity.bound)
        result.diagnostics["continuity_modulus"] = continuity.modulus
        result.diagnostics["continuity_error_bound"] = continuity.error_bound
    except UniformBoundViolated as exc:
        checks["continuity"] = check(False, exc.radius, exc.bound)

    if s.witness is None:
        return
    try:
        separation = validate_separation(
            s.obstacle, s.witness, s.grid, s.times(), s.coefficient, st.witness_residual_tol
        )
        checks["separation"] = check(separation.passed, separation.worst_margin, 0.0)
        result.diagnostics["witness_residual"] = separation.residual
    except MarginViolated as exc:
        checks["separation"] = check(False, exc.margin, 0.0)
        return
    tv_bound, tv_constant = separation_bound(s, report)
    result.diagnostics["tv_bound"] = tv_bound
    result.diagnostics["tv_constant"] = tv_constant


def _stored(config: ScenarioConfig, out_dir: Optional[str]) -> Optional[RunResult]:
    if out_dir is None or not os.path.exists(os.path.join(out_dir, RESULT_FILE)):
        return None
    stored = read_result(out_dir)
    if stored.provenance.get("config_hash") != config.config_hash() or stored.solution is None or stored.report is None:
        logger.info("Stored result in %s does not match this configuration, rerunning the ladder", out_dir)
        return None
    return stored


def _verify(config: ScenarioConfig, s: ScenarioSpec, result: RunResult, out_dir: Optional[str]) -> None:
    stored = _stored(config, out_dir)
    if stored is None:
        u, mu, report = run_ladder(s)
    else:
        logger.info("Verifying the stored solution in %s", out_dir)
        times, values = stored.times, stored.solution
        u = SolutionField(times, values, sigma_gradients(s, times, values), stored.penalty)
        mu = ReactionMeasureField(times, stored.density, s.grid.node_volume, stored.penalty)
        report = stored.report
    _record(result, u, mu, report)
    result.diagnostics["reused_result"] = float(stored is not None)
    _solution_checks(config, s, u, mu, result)
    bound = check_energy_bound(report, s.settings.bound_factor)
    result.checks["energy_bound"] = check(bound.passed, max(bound.energy_ratio, bound.tv_ratio), s.settings.bound_factor)


def _monte_carlo_checks(config, s, u, mu, result) -> None:
    vs = config.verify_settings()
    table = feynman_kac_table(s, u, mu, vs)
    result.fk = table
    worst = max(abs(c.estimate.value - c.grid_value) / c.band if c.band > 0 else 0.0 for c in table)
    result.checks["feynman_kac"] = check(all(c.passed for c in table), worst, 1.0)

    # affine g is harmonic, so E g(X stopped) = g(x) for the discrete paths as well
    node = int(sample_nodes(s, 1)[0])
    start = s.grid.points[node]
    lengths = np.array(s.grid.lengths)

    def affine(x):
        return 1.0 + np.sum(x / lengths, axis=-1)

    batch = simulate_paths(
        s.grid, s.coefficient, 0.0, start, s.horizon, vs.mc_paths, vs.mc_dt,
        s.seed + MARTINGALE_SEED_OFFSET, chunk=vs.mc_chunk,
    )
    mean, error = stopped_expectation(batch, affine, affine)
    miss = abs(mean - float(affine(start)))
    result.checks["optional_stopping"] = check(miss <= 3.0 * error + 1e-12, miss, 3.0 * error)

    kappa = isotropic_constant(config["coefficient"], s.grid.dim)
    if s.grid.dim == 1 and kappa is not None:
        length = s.grid.lengths[0]
        x = 0.5 * length
        horizon = 16.0 * x**2 / kappa
        value, error = mean_exit_time(s.grid, s.coefficient, [x], horizon, vs.mc_paths, vs.mc_dt, s.seed, vs.mc_chunk)
        expected = x * (length - x) / kappa
        # discrete monitoring overshoots the exit by O(sqrt(dt))
        band = 3.0 * error + vs.c_disc * length * np.sqrt(vs.mc_dt / kappa)
        result.checks["mean_exit_time"] = check(abs(value - expected) <= band, abs(value - expected), band)
        result.diagnostics["mean_exit_time"] = value
