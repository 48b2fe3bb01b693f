import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.linalg import spsolve

from parabolic_vi.errors import EllipticityViolated
from parabolic_vi.grid_operator import (
    CoefficientField,
    DiscreteOperator,
    SpatialGrid,
    ThetaStepper,
    assemble,
    energy_norms,
    solve_linear_step,
)


def second_difference(n, h):
    return sparse.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2


def test_grid_boundary_and_weights():
    grid = SpatialGrid((1.0, 2.0), (4, 8))
    assert grid.size == 45
    assert len(grid.interior) == 3 * 7
    assert grid.weights.sum() == pytest.approx(2.0)
    assert grid.boundary_mask[grid.node_index(0, 3)]
    assert not grid.boundary_mask[grid.node_index(2, 3)]
    assert grid.nearest_node([0.5, 1.0]) == grid.node_index(2, 4)


def test_grid_needs_an_interior():
    with pytest.raises(ValueError):
        SpatialGrid((1.0,), (1,))


def test_one_dimensional_stencil_is_half_second_difference():
    grid = SpatialGrid((1.0,), (10,))
    op = assemble(CoefficientField.constant(1.0, dim=1), grid)
    expected = 0.5 * second_difference(9, 0.1)
    np.testing.assert_allclose(op.matrix.toarray(), expected.toarray(), rtol=1e-12, atol=1e-9)


def test_two_dimensional_identity_is_half_five_point_laplacian():
    grid = SpatialGrid((1.0, 1.0), (4, 4))
    op = assemble(CoefficientField.constant(np.eye(2)), grid)
    t = second_difference(3, 0.25)
    eye = sparse.identity(3)
    expected = 0.5 * (sparse.kron(t, eye) + sparse.kron(eye, t))
    np.testing.assert_allclose(op.matrix.toarray(), expected.toarray(), rtol=1e-12, atol=1e-9)


def test_operator_is_exactly_symmetric():
    grid = SpatialGrid((1.0, 1.0), (6, 5))
    op = assemble(CoefficientField.rotating(3.0, 0.5, 2.0), grid, 0.3)
    assert abs(op.matrix - op.matrix.T).max() == 0.0


def test_ellipticity_sandwich():
    grid = SpatialGrid((1.0, 1.0), (8, 8))
    coefficient = CoefficientField.constant([[2.0, 0.5], [0.5, 1.0]])
    op = assemble(coefficient, grid)
    reference = assemble(CoefficientField.constant(np.eye(2)), grid)
    lam = coefficient.ellipticity
    rng = np.random.default_rng(0)
    for v in rng.standard_normal((20, op.size)):
        form, base = -v @ op.apply(v), -v @ reference.apply(v)
        assert base / lam <= form * (1 + 1e-12)
        assert form <= lam * base * (1 + 1e-12)


def test_two_material_flux_continuity():
    # interface at a cell midpoint; (a u')' = -2 with a = 1 left of 0.5 and 1/4 right of it
    cells = 31
    grid = SpatialGrid((1.0,), (cells,))
    op = assemble(CoefficientField.piecewise(1.0, 0.25, 0.5), grid)
    u = spsolve(op.matrix.tocsc(), -np.ones(op.size))
    x = grid.points[grid.interior, 0]
    exact = np.where(x <= 0.5, -x**2 + 1.3 * x, 0.4 + 4.0 * (-x**2 + 1.3 * x - 0.4))
    h = 1.0 / cells
    assert np.max(np.abs(u - exact)) <= 5.0 * h**2


def test_ellipticity_violation_names_the_node():
    coefficient = CoefficientField(lambda t, x: np.full((len(x), 1, 1), 10.0), 1, 2.0)
    with pytest.raises(EllipticityViolated) as excinfo:
        assemble(coefficient, SpatialGrid((1.0,), (4,)))
    assert excinfo.value.node == 0


def test_constant_coefficient_must_be_positive_definite():
    with pytest.raises(ValueError):
        CoefficientField.constant([[1.0, 2.0], [2.0, 1.0]])


def test_sigma_squares_to_the_coefficient():
    coefficient = CoefficientField.rotating(3.0, 0.5, 2.0)
    points = SpatialGrid((1.0, 1.0), (2, 2)).points
    sigma = coefficient.sigma(0.7, points)
    np.testing.assert_allclose(sigma @ sigma, coefficient.matrices(0.7, points), atol=1e-12)


# energy norms

def test_energy_norms_of_zero():
    grid = SpatialGrid((1.0,), (16,))
    assert energy_norms(np.zeros((3, grid.size, 1)), grid, np.linspace(0.0, 1.0, 3)) == (0.0, 0.0)


def test_energy_norms_of_a_sine():
    cells = 64
    grid = SpatialGrid((1.0,), (cells,))
    times = np.linspace(0.0, 1.0, 5)
    values = np.broadcast_to(np.sin(np.pi * grid.points[:, :1]), (len(times), grid.size, 1))
    l2, gradient = energy_norms(values, grid, times)
    h = 1.0 / cells
    assert l2 == pytest.approx(0.5, rel=h**2)
    assert gradient == pytest.approx(np.pi**2 / 2, rel=(np.pi * h) ** 2)


def test_energy_norms_ignore_zero_components():
    grid = SpatialGrid((1.0, 1.0), (8, 8))
    times = np.linspace(0.0, 1.0, 4)
    rng = np.random.default_rng(1)
    single = rng.standard_normal((len(times), grid.size, 1))
    padded = np.concatenate([single, np.zeros_like(single)], axis=-1)
    assert energy_norms(padded, grid, times) == pytest.approx(energy_norms(single, grid, times), rel=1e-14)


# theta steps

def test_zero_operator_returns_rhs():
    op = DiscreteOperator(sparse.csr_matrix((5, 5)))
    rhs = np.arange(5.0)
    v, residual = solve_linear_step(op, rhs, 0.1)
    np.testing.assert_allclose(v, rhs)
    assert residual == 0.0


def test_heat_step_matches_eigen_decomposition():
    grid = SpatialGrid((1.0,), (9,))
    op = assemble(CoefficientField.constant(1.0, dim=1), grid)
    rhs = np.random.default_rng(2).standard_normal(op.size)
    dt, theta = 0.05, 0.75
    eigenvalues, vectors = np.linalg.eigh(op.matrix.toarray())
    oracle = vectors @ ((vectors.T @ rhs) / (1.0 - theta * dt * eigenvalues))
    v, _ = solve_linear_step(op, rhs, dt, theta)
    np.testing.assert_allclose(v, oracle, atol=1e-10)


def test_theta_schemes_agree_to_second_order():
    grid = SpatialGrid((1.0,), (64,))
    op = assemble(CoefficientField.constant(1.0, dim=1), grid)
    w = np.sin(np.pi * grid.points[grid.interior, 0])

    def gap(dt):
        implicit, _ = solve_linear_step(op, w, dt, 1.0)
        crank, _ = solve_linear_step(op, w + 0.5 * dt * op.apply(w), dt, 0.5)
        return np.max(np.abs(implicit - crank))

    assert 3.5 <= gap(0.01) / gap(0.005) <= 4.5


def test_conjugate_gradient_in_two_dimensions():
    grid = SpatialGrid((1.0, 1.0), (12, 12))
    op = assemble(CoefficientField.rotating(2.0, 1.0, 1.0), grid, 0.4)
    rhs = np.random.default_rng(4).standard_normal(op.size)
    v, residual = solve_linear_step(op, rhs, 0.01)
    direct = spsolve((sparse.identity(op.size) - 0.01 * op.matrix).tocsc(), rhs)
    assert residual <= 1e-9
    np.testing.assert_allclose(v, direct, atol=1e-8)


def test_step_arguments_are_checked():
    op = DiscreteOperator(sparse.csr_matrix((3, 3)))
    with pytest.raises(ValueError):
        solve_linear_step(op, np.ones(3), 0.0)
    with pytest.raises(ValueError):
        solve_linear_step(op, np.ones(3), 0.1, theta=0.25)


def march(cells, steps, theta, horizon=1.0):
    """Backward theta-scheme for du/dt + (1/2) u'' = 0 on (0, pi), u(T) = sin."""
    grid = SpatialGrid((np.pi,), (cells,))
    op = assemble(CoefficientField.constant(1.0, dim=1), grid)
    dt = horizon / steps
    stepper = ThetaStepper(op, dt, theta)
    x = grid.points[grid.interior, 0]
    v = np.sin(x)
    for _ in range(steps):
        v = stepper.solve(v + (1.0 - theta) * dt * op.apply(v))
    return np.max(np.abs(v - np.exp(-0.5 * horizon) * np.sin(x)))


def test_manufactured_solution_converges_in_space():
    assert 3.5 <= march(16, 200, 0.5) / march(32, 200, 0.5) <= 4.5


def test_manufactured_solution_converges_in_time():
    assert 1.8 <= march(256, 16, 1.0) / march(256, 32, 1.0) <= 2.2
