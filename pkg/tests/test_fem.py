import numpy as np
import pytest
import scipy.sparse as sp

from src.errors import NegativeWeight, NoConvergence
from src.fem import (
    SparseSystem,
    apply_dirichlet,
    assemble_boundary_robin,
    assemble_load,
    assemble_mass,
    assemble_neumann,
    assemble_stiffness,
    boundary_l2_sq,
    friedrichs_constant,
    h1_seminorm_sq,
    integrate_facets,
    integrate_triangles,
    interpolate,
    l2_norm_sq,
    solve_cg,
    triangle_rule,
)
from src.meshing import FacetLabel, Region, TriangleMesh


def test_triangle_rule_weights_sum_to_half():
    _, weights = triangle_rule(4)
    assert weights.sum() == pytest.approx(0.5)


def test_integrate_triangles_is_exact_for_polynomials(slab_mesh):
    corners = slab_mesh.nodes[slab_mesh.triangles]
    assert integrate_triangles(corners, lambda x, y: x**2 * y, order=4) == pytest.approx(1.0 / 6.0, rel=1e-12)


def test_integrate_facets(slab_mesh):
    ends = slab_mesh.nodes[slab_mesh.facets_with(FacetLabel.INSULATED)]
    assert integrate_facets(ends, lambda x, y: y**3, order=2) == pytest.approx(0.25, rel=1e-12)


def test_stiffness_annihilates_constants(slab_mesh):
    stiffness = assemble_stiffness(slab_mesh, 2.0)
    np.testing.assert_allclose(stiffness @ np.ones(slab_mesh.node_count), 0.0, atol=1e-12)
    assert abs(stiffness - stiffness.T).max() < 1e-14


def test_stiffness_energy_of_a_linear_field(slab_mesh):
    u = interpolate(slab_mesh, lambda x, y: 2.0 * x - y)
    assert h1_seminorm_sq(slab_mesh, u) == pytest.approx(5.0, rel=1e-12)
    assert float(u @ (assemble_stiffness(slab_mesh, 3.0) @ u)) == pytest.approx(15.0, rel=1e-12)


def test_mass_and_load_integrate_area(slab_mesh):
    ones = np.ones(slab_mesh.node_count)
    assert float(ones @ (assemble_mass(slab_mesh) @ ones)) == pytest.approx(1.0, rel=1e-12)
    assert assemble_load(slab_mesh, 1.0).sum() == pytest.approx(1.0, rel=1e-12)
    assert assemble_load(slab_mesh, lambda x, y: x * y).sum() == pytest.approx(0.25, rel=1e-12)
    assert l2_norm_sq(slab_mesh, ones) == pytest.approx(1.0, rel=1e-12)


def test_robin_quadratures_agree_on_constants(slab_mesh):
    ones = np.ones(slab_mesh.node_count)
    gauss, _ = assemble_boundary_robin(slab_mesh, FacetLabel.INSULATED, 2.0)
    lumped, _ = assemble_boundary_robin(slab_mesh, FacetLabel.INSULATED, 2.0, quadrature="lumped")
    assert float(ones @ (gauss @ ones)) == pytest.approx(2.0, rel=1e-12)
    assert float(ones @ (lumped @ ones)) == pytest.approx(2.0, rel=1e-12)
    assert boundary_l2_sq(slab_mesh, ones, FacetLabel.NEUMANN) == pytest.approx(2.0, rel=1e-12)


def test_robin_with_variable_weight(slab_mesh):
    weight = interpolate(slab_mesh, lambda x, y: y)
    u = interpolate(slab_mesh, lambda x, y: y)
    matrix, load = assemble_boundary_robin(slab_mesh, FacetLabel.INSULATED, weight, u_inf=u)
    # int_0^1 y * y^2 dy, exact for the linear weight times quadratic
    assert float(u @ (matrix @ u)) == pytest.approx(0.25, rel=1e-12)
    np.testing.assert_allclose(load, matrix @ u)


def test_negative_robin_weight_is_rejected(slab_mesh):
    weight = -np.ones(slab_mesh.node_count)
    with pytest.raises(NegativeWeight):
        assemble_boundary_robin(slab_mesh, FacetLabel.INSULATED, weight)


def test_neumann_load(slab_mesh):
    load = assemble_neumann(slab_mesh, FacetLabel.NEUMANN, lambda x, y: x)
    # g = x on the top and bottom edges
    assert load.sum() == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("method", ["cg", "direct"])
def test_linear_patch_is_reproduced(slab_mesh, method):
    exact = interpolate(slab_mesh, lambda x, y: 1.0 + 2.0 * x + 3.0 * y)
    boundary = np.unique(slab_mesh.facets)
    system = apply_dirichlet(
        SparseSystem(assemble_stiffness(slab_mesh), np.zeros(slab_mesh.node_count)),
        boundary,
        exact[boundary],
    )
    u = solve_cg(system, rel_tol=1e-12, method=method)
    np.testing.assert_allclose(u, exact, atol=1e-9)
    assert system.residual(u) < 1e-10


def test_zero_rhs_returns_zero(slab_mesh):
    system = SparseSystem(assemble_stiffness(slab_mesh) + assemble_mass(slab_mesh), np.zeros(slab_mesh.node_count))
    np.testing.assert_array_equal(solve_cg(system), 0.0)


def test_cg_reports_no_convergence(slab_mesh):
    system = SparseSystem(assemble_stiffness(slab_mesh) + assemble_mass(slab_mesh), np.ones(slab_mesh.node_count))
    with pytest.raises(NoConvergence) as excinfo:
        solve_cg(system, rel_tol=1e-14, max_iter=1)
    assert excinfo.value.iterations <= 1
    assert excinfo.value.exit_code == 3


def test_friedrichs_constant_bounds_random_fields(slab_mesh, rng):
    constant = friedrichs_constant(slab_mesh, weight=1.0)
    assert constant > 0.0
    stiffness = assemble_stiffness(slab_mesh)
    mass = assemble_mass(slab_mesh)
    robin, _ = assemble_boundary_robin(slab_mesh, FacetLabel.INSULATED, 1.0)
    for _ in range(5):
        v = rng.standard_normal(slab_mesh.node_count)
        assert float(v @ (mass @ v)) <= constant * float(v @ ((stiffness + robin) @ v)) * (1.0 + 1e-8)


def single_triangle(size: float = 1.0) -> TriangleMesh:
    """Reference triangle scaled by size, the facet on y = 0 insulated"""
    return TriangleMesh(
        nodes=[(0.0, 0.0), (size, 0.0), (0.0, size)],
        triangles=[(0, 1, 2)],
        facets=[(0, 1), (1, 2), (2, 0)],
        facet_labels=[FacetLabel.INSULATED, FacetLabel.DIRICHLET, FacetLabel.DIRICHLET],
        regions=[Region.BODY],
        body_node_count=3,
    )


def test_reference_triangle_stiffness():
    stiffness = assemble_stiffness(single_triangle()).toarray()
    expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]]
    np.testing.assert_allclose(stiffness, expected, atol=1e-15)


@pytest.mark.parametrize("h", [1.0, 0.25])
def test_facet_mass(h):
    matrix, _ = assemble_boundary_robin(single_triangle(h), FacetLabel.INSULATED, 1.0)
    np.testing.assert_allclose(matrix.toarray()[:2, :2], h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]]), rtol=1e-14)
    assert np.count_nonzero(matrix.toarray()[2]) == 0


class TestSolveCG:
    @pytest.mark.parametrize("method", ["cg", "direct"])
    def test_identity(self, method, rng):
        rhs = rng.standard_normal(10)
        system = SparseSystem(sp.identity(10, format="csr"), rhs)
        np.testing.assert_allclose(solve_cg(system, rel_tol=1e-12, method=method), rhs, rtol=1e-12)

    def test_two_by_two(self):
        system = SparseSystem(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([1.0, 1.0]))
        np.testing.assert_allclose(solve_cg(system, rel_tol=1e-12), [1.0 / 3.0, 1.0 / 3.0], rtol=1e-12)

    def test_random_spd_against_a_dense_solve(self, rng):
        factor = rng.standard_normal((50, 50))
        dense = factor @ factor.T + 50.0 * np.eye(50)
        rhs = rng.standard_normal(50)
        u = solve_cg(SparseSystem(sp.csr_matrix(dense), rhs), rel_tol=1e-13)
        np.testing.assert_allclose(u, np.linalg.solve(dense, rhs), rtol=1e-9, atol=1e-12)
