import numpy as np
import pytest

from parabolic_vi.convex_geometry import (
    Ball,
    Box,
    HalfspaceIntersection,
    ObstacleFamily,
    SeparationWitness,
    dist,
    hausdorff,
    hausdorff_with_bound,
    project,
    shrink,
    validate_continuity,
    validate_separation,
)
from parabolic_vi.errors import EmptyInterior, InvalidSet, MarginViolated, UniformBoundViolated
from parabolic_vi.grid_operator import SpatialGrid
from parabolic_vi.scenarios import build_scenario, builtin_config


def simplex():
    return HalfspaceIntersection.from_constraints([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])


def random_set(rng, kind, m=2):
    if kind == "box":
        lower = rng.uniform(-1.0, 1.0, m)
        return Box(lower, lower + rng.uniform(0.2, 2.0, m))
    return Ball(rng.uniform(-1.0, 1.0, m), rng.uniform(0.5, 2.0))


def brute_force_projection(y, step=0.0025):
    """Nearest point of the unit simplex on a dense grid."""
    axis = np.arange(0.0, 1.0 + step / 2, step)
    xs, ys = np.meshgrid(axis, axis, indexing="ij")
    points = np.column_stack([xs.ravel(), ys.ravel()])
    points = points[points.sum(axis=1) <= 1.0 + 1e-12]
    return points[np.argmin(np.linalg.norm(points - y, axis=1))]


# project

def test_project_inside_box_is_identity():
    np.testing.assert_array_equal(project([0.5, 0.5], Box([0.0, 0.0], [1.0, 1.0])), [0.5, 0.5])


def test_project_onto_ball_scales_radially():
    np.testing.assert_allclose(project([3.0, 4.0], Ball([0.0, 0.0], 1.0)), [0.6, 0.8], atol=1e-15)


def test_project_onto_simplex_matches_brute_force():
    y = np.array([2.0, -1.0])
    x = project(y, simplex())
    np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(x, brute_force_projection(y), atol=0.005)


def test_halfspace_projection_against_brute_force():
    rng = np.random.default_rng(3)
    D = simplex()
    for y in rng.uniform(-2.0, 3.0, (25, 2)):
        x = D.project(y)
        assert np.all(D.slack(x) >= -1e-9)
        oracle = brute_force_projection(y)
        assert np.linalg.norm(y - x) <= np.linalg.norm(y - oracle) + 1e-12
        np.testing.assert_allclose(x, oracle, atol=0.005)


def test_halfspace_projection_batches_over_nodes():
    D = simplex()
    ys = np.array([[2.0, -1.0], [0.2, 0.2], [-1.0, -1.0], [1.0, 1.0]])
    np.testing.assert_allclose(D.project(ys), [[1.0, 0.0], [0.2, 0.2], [0.0, 0.0], [0.5, 0.5]], atol=1e-12)


# dist

@pytest.mark.parametrize(
    "y, D, expected",
    [
        ([0.0, 0.0], Ball([0.0, 0.0], 1.0), 0.0),
        ([3.0, 4.0], Ball([0.0, 0.0], 1.0), 4.0),
        ([2.0, 2.0], Box([0.0, 0.0], [1.0, 1.0]), np.sqrt(2.0)),
    ],
)
def test_dist(y, D, expected):
    assert dist(y, D) == pytest.approx(expected, abs=1e-14)


def test_depth_is_signed():
    D = Box([0.0, 0.0], [1.0, 1.0])
    assert D.depth([0.5, 0.25]) == pytest.approx(0.25)
    assert D.depth([2.0, 2.0]) == pytest.approx(-np.sqrt(2.0))


# hausdorff

def test_hausdorff_concentric_balls():
    assert hausdorff(Ball([0.0, 0.0], 1.0), Ball([0.0, 0.0], 2.0)) == pytest.approx(1.0)


def test_hausdorff_identity():
    D = Box([0.0, 0.0], [1.0, 1.0])
    assert hausdorff(D, D) == 0.0
    value, bound = hausdorff_with_bound(simplex(), simplex())
    assert value <= 1e-12
    assert bound > 0


def test_hausdorff_nested_boxes():
    value = hausdorff(Box([0.0, 0.0], [1.0, 1.0]), Box([0.0, 0.0], [2.0, 2.0]))
    assert value == pytest.approx(np.sqrt(2.0))


def test_hausdorff_box_matches_dense_sup_inf():
    D, G = Box([0.0, 0.0], [1.0, 1.0]), Box([0.5, -0.5], [2.0, 0.75])
    axis = np.linspace(0.0, 1.0, 101)
    grid_d = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    grid_g = G.lower + np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2) * (G.upper - G.lower)
    oracle = max(G.dist(grid_d).max(), D.dist(grid_g).max())
    assert hausdorff(D, G) == pytest.approx(oracle, abs=1e-12)


def test_hausdorff_translated_polytope_within_error_bound():
    D = simplex()
    value, bound = hausdorff_with_bound(D, D.translated([0.1, 0.0]))
    assert abs(value - 0.1) <= bound + 1e-12


def test_hausdorff_polytope_against_its_box():
    square = HalfspaceIntersection.from_constraints(
        [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [1.0, 0.0, 1.0, 0.0]
    )
    assert hausdorff(square, Box([0.0, 0.0], [1.0, 1.0])) <= 1e-12


def test_hausdorff_triangle_inequality():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b, c = (random_set(rng, "ball") for _ in range(3))
        assert hausdorff(a, c) <= hausdorff(a, b) + hausdorff(b, c) + 1e-12
        a, b, c = (random_set(rng, "box") for _ in range(3))
        assert hausdorff(a, c) <= hausdorff(a, b) + hausdorff(b, c) + 1e-12


# shrink

def test_shrink_box():
    inner = shrink(Box([0.0, 0.0], [3.0, 3.0]), 1.0)
    np.testing.assert_array_equal(inner.lower, [1.0, 1.0])
    np.testing.assert_array_equal(inner.upper, [2.0, 2.0])


def test_shrink_ball():
    assert shrink(Ball([0.0, 0.0], 2.0), 0.5).radius == pytest.approx(1.5)


def test_shrink_past_interior():
    with pytest.raises(EmptyInterior):
        shrink(Ball([0.0, 0.0], 1.0), 1.5)


def test_shrink_needs_positive_margin():
    with pytest.raises(ValueError):
        shrink(Ball([0.0, 0.0], 1.0), 0.0)


def test_shrink_halfspace_moves_every_face():
    inner = shrink(simplex(), 0.1)
    np.testing.assert_allclose(inner.offsets, simplex().offsets - 0.1)
    with pytest.raises(EmptyInterior):
        shrink(simplex(), 0.5)


def test_invalid_sets_are_rejected():
    with pytest.raises(InvalidSet):
        Box([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(InvalidSet):
        Ball([0.0, 0.0], -1.0)
    with pytest.raises(InvalidSet):
        HalfspaceIntersection.from_constraints([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0])


# projection laws over random sets

INSTANCES = 10_000
KINDS = ["box", "ball", "halfspace"]


def random_batch(rng, kind, count=INSTANCES, m=2):
    """``count`` random sets of one kind as a single batched set."""
    if kind == "box":
        lower = rng.uniform(-1.0, 1.0, (count, m))
        return Box(lower, lower + rng.uniform(0.2, 2.0, (count, m)))
    if kind == "ball":
        return Ball(rng.uniform(-1.0, 1.0, (count, m)), rng.uniform(0.5, 2.0, count))
    return simplex().translated(rng.uniform(-1.0, 1.0, (count, 2)))


def rowdot(a, b):
    return np.sum(a * b, axis=-1)


@pytest.mark.parametrize("kind", KINDS)
def test_projection_laws(kind):
    rng = np.random.default_rng(5)
    D = random_batch(rng, kind)
    x, y, w = rng.uniform(-4.0, 4.0, (3, INSTANCES, 2))
    px, py = D.project(x), D.project(y)
    # obtuse angle at the projection, tested against a point of D
    z = D.project(w)
    assert np.max(rowdot(x - px, z - px)) <= 1e-8
    assert np.all(np.linalg.norm(px - py, axis=-1) <= np.linalg.norm(x - y, axis=-1) + 1e-9)
    np.testing.assert_allclose(D.project(px), px, atol=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_projection_stability_between_sets(kind):
    rng = np.random.default_rng(7)
    if kind == "halfspace":
        a, b = rng.uniform(-1.0, 1.0, (2, INSTANCES, 2))
        D, G = simplex().translated(a), simplex().translated(b)
        distance = np.linalg.norm(a - b, axis=-1)  # translates of one set
    else:
        D, G = random_batch(rng, kind), random_batch(rng, kind)
        distance = hausdorff(D, G)
    x, y = rng.uniform(-4.0, 4.0, (2, INSTANCES, 2))
    lhs = np.sum((D.project(x) - G.project(y)) ** 2, axis=-1)
    rhs = np.sum((x - y) ** 2, axis=-1) + 2.0 * (D.dist(x) + G.dist(y)) * distance
    assert np.all(lhs <= rhs + 1e-9)


def test_stability_uses_the_batched_hausdorff():
    rng = np.random.default_rng(8)
    D, G = random_batch(rng, "box", 50), random_batch(rng, "box", 50)
    batched = hausdorff(D, G)
    assert batched.shape == (50,)
    np.testing.assert_allclose(batched, [hausdorff(D[i], G[i]) for i in range(50)])


@pytest.mark.parametrize("kind", KINDS)
def test_interior_point_pushes_against_projection(kind):
    rng = np.random.default_rng(9)
    D = random_batch(rng, kind)
    if kind == "box":
        center = 0.5 * (D.lower + D.upper)
    elif kind == "ball":
        center = D.center
    else:
        center = D.interior_point
    a = 0.5 * (center + D.project(rng.uniform(-4.0, 4.0, (INSTANCES, 2))))
    x = rng.uniform(-4.0, 4.0, (INSTANCES, 2))
    outside = ~D.contains(x)
    assert outside.sum() > INSTANCES // 4
    y = D.project(x)
    lhs = rowdot(x - a, y - x)
    rhs = -D.depth(a) * np.linalg.norm(y - x, axis=-1)
    assert np.all(lhs[outside] <= rhs[outside] + 1e-9)


# continuity and separation over a grid

GRID = SpatialGrid((1.0,), (8,))


def unit_ball_family(bound=1.0):
    return ObstacleFamily(lambda t, x: Ball(np.zeros((len(x), 2)), 1.0), bound, "unit_ball")


def test_constant_family_has_zero_modulus():
    report = validate_continuity(unit_ball_family(), GRID, np.linspace(0.0, 1.0, 5))
    assert report.time_modulus == 0.0
    assert report.space_modulus == 0.0
    assert report.max_radius == pytest.approx(1.0)


def test_growing_ball_modulus_is_the_time_step():
    family = ObstacleFamily(lambda t, x: Ball(np.zeros((len(x), 2)), 1.0 + t), 2.0, "growing")
    report = validate_continuity(family, GRID, np.linspace(0.0, 1.0, 11))
    assert report.time_modulus == pytest.approx(0.1)
    assert report.space_modulus == 0.0


def test_escaping_set_violates_the_uniform_bound():
    family = ObstacleFamily(lambda t, x: Ball(np.zeros((len(x), 2)), 1.0 + t), 1.5, "growing")
    with pytest.raises(UniformBoundViolated) as excinfo:
        validate_continuity(family, GRID, np.linspace(0.0, 1.0, 11))
    assert excinfo.value.radius > 1.5


def test_moving_box_has_finite_modulus():
    s = build_scenario(builtin_config("moving_box_example2"))
    report = validate_continuity(s.obstacle, s.grid, s.times())
    assert 0.0 < report.modulus < 1.0
    assert report.max_radius <= s.obstacle.bound


def test_witness_in_inner_ball_passes():
    times = np.linspace(0.0, 1.0, 5)
    witness = SeparationWitness(0.5, np.zeros((len(times), GRID.size, 2)))
    report = validate_separation(unit_ball_family(), witness, GRID, times)
    assert report.passed
    assert report.worst_margin == pytest.approx(0.5)


def test_witness_outside_the_set_is_rejected():
    times = np.linspace(0.0, 1.0, 5)
    values = np.zeros((len(times), GRID.size, 2))
    values[..., 0] = 2.0
    with pytest.raises(MarginViolated):
        validate_separation(unit_ball_family(), SeparationWitness(0.1, values), GRID, times)


def test_box_centre_witness_separates_the_moving_box():
    s = build_scenario(builtin_config("moving_box_example2"))
    report = validate_separation(s.obstacle, s.witness, s.grid, s.times(), s.coefficient)
    assert report.passed
    assert report.worst_margin == pytest.approx(0.5, abs=1e-9)
    assert report.terminal_gap == 0.0
    assert report.residual < 0.05
