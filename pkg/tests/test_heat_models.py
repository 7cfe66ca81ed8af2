import numpy as np
import pytest

from src.diagnostics import fit_rate
from src.errors import ConfigError, MeshFailure
from src.fem import interpolate
from src.geometry import DistributionProfile, LayerSpec, TransversalMode, build_transversal
from src.heat_models import (
    ProblemConfig,
    build_recovery_field,
    convective_loss,
    layer_rows,
    minimizer_certificate,
    reduced_energy,
    reduced_energy_function,
    robin_weight,
    solve_reduced,
    solve_thick,
    thick_energy,
    thick_energy_function,
    transmission_jump,
)
from src.meshing import FacetLabel, mesh_body, mesh_thick
from src.optimizer import alternate_minimize, net_heat_input
from src.scalar_expr import parse


def slab_exact(x):
    """-u'' = 1, u(0) = 0, 2 u'(1) + u(1) = 0"""
    return -0.5 * x**2 + 5.0 / 6.0 * x


def test_problem_config_rejects_non_positive_constants():
    with pytest.raises(ConfigError):
        ProblemConfig.simple(beta=0.0)
    with pytest.raises(ConfigError):
        ProblemConfig.simple(m=-1.0)


class TestReducedModel:
    def test_slab_oracle(self, slab_mesh, slab_config, slab_distribution):
        report = solve_reduced(slab_mesh, slab_config, slab_distribution)
        insulated = slab_mesh.nodes_with(FacetLabel.INSULATED)
        np.testing.assert_allclose(report.u[insulated], 1.0 / 3.0, atol=5e-3)
        assert report.energy.total == pytest.approx(-0.125, abs=5e-3)
        dirichlet = slab_mesh.nodes_with(FacetLabel.DIRICHLET)
        np.testing.assert_array_equal(report.u[dirichlet], 0.0)
        assert report.energy.grad_layer == 0.0

    def test_slab_oracle_fine_mesh(self, slab_domain, slab_config):
        mesh = mesh_body(slab_domain, 0.02)
        transversal = build_transversal(slab_domain, TransversalMode.NORMAL_FIELD, mesh.insulated_boundary())
        report = solve_reduced(mesh, slab_config, DistributionProfile.uniform(transversal, 1.0))
        assert report.energy.total == pytest.approx(-0.125, abs=2e-3)
        np.testing.assert_allclose(report.u, slab_exact(mesh.nodes[:, 0]), atol=2e-3)

    @pytest.mark.slow
    def test_slab_energy_converges_at_second_order(self, slab_domain, slab_config):
        sizes, gaps = [], []
        for h in (0.2, 0.1, 0.05, 0.025):
            mesh = mesh_body(slab_domain, h)
            transversal = build_transversal(slab_domain, TransversalMode.NORMAL_FIELD, mesh.insulated_boundary())
            report = solve_reduced(mesh, slab_config, DistributionProfile.uniform(transversal, 1.0), rel_tol=1e-12)
            sizes.append(mesh.max_edge())
            # Galerkin energies approach the minimum from above
            gaps.append(report.energy.total + 0.125)
        assert all(gap > 0.0 for gap in gaps)
        rate, _ = fit_rate(sizes, gaps)
        assert 1.6 <= rate <= 2.4

    def test_vanishing_material_tends_to_the_bare_body(self, slab_mesh, slab_transversal):
        # d_tilde = 0: u'(1) + u(1) = 0 gives u = -x^2/2 + 3x/4, E = -5/48 up to discretization
        bare_distribution = DistributionProfile.from_d_tilde(slab_transversal, np.zeros(slab_transversal.boundary.node_count))
        bare = solve_reduced(slab_mesh, ProblemConfig.simple(f=1.0), bare_distribution, rel_tol=1e-12).energy.total
        assert bare == pytest.approx(-5.0 / 48.0, abs=5e-3)
        gaps = []
        for m in (1e-1, 1e-2, 1e-3, 1e-4):
            config = ProblemConfig.simple(f=1.0, m=m)
            uniform = solve_reduced(slab_mesh, config, DistributionProfile.uniform(slab_transversal, m), rel_tol=1e-12)
            gaps.append(uniform.energy.total - bare)
        # insulation only traps heat: every energy sits below the bare one
        assert all(gap < 0.0 for gap in gaps)
        assert all(abs(b) < abs(a) for a, b in zip(gaps, gaps[1:]))
        assert abs(gaps[-1]) < 1e-4
        optimal = alternate_minimize(slab_mesh, ProblemConfig.simple(f=1.0, m=1e-4), slab_transversal, tol=1e-12)
        assert optimal.energy == pytest.approx(bare, abs=1e-4)

    def test_energy_identity_at_the_minimizer(self, slab_mesh, slab_config, slab_distribution):
        # for the minimizer, E = -(load terms) / 2
        report = solve_reduced(slab_mesh, slab_config, slab_distribution, rel_tol=1e-12)
        energy = report.energy
        assert energy.total == pytest.approx(-0.5 * (energy.source + energy.neumann), rel=1e-8)

    def test_zero_data_gives_zero(self, slab_mesh, slab_distribution):
        config = ProblemConfig.simple()
        report = solve_reduced(slab_mesh, config, slab_distribution)
        assert report.energy.total == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_equal(report.u, 0.0)

    def test_thicker_layer_traps_more_heat(self, slab_mesh, slab_config, slab_transversal):
        thin = solve_reduced(slab_mesh, slab_config, DistributionProfile.uniform(slab_transversal, 0.5))
        thick = solve_reduced(slab_mesh, slab_config, DistributionProfile.uniform(slab_transversal, 2.0))
        insulated = slab_mesh.nodes_with(FacetLabel.INSULATED)
        assert thick.u[insulated].mean() > thin.u[insulated].mean()

    def test_robin_weight_is_nodal(self, slab_mesh, slab_distribution):
        weight = robin_weight(slab_mesh, 1.0, slab_distribution)
        insulated = slab_mesh.nodes_with(FacetLabel.INSULATED)
        np.testing.assert_allclose(weight[insulated], 0.5)
        assert np.count_nonzero(weight) == len(insulated)

    def test_energy_function_matches_breakdown(self, slab_mesh, slab_config, slab_distribution, rng):
        u = rng.standard_normal(slab_mesh.node_count)
        energy = reduced_energy_function(slab_mesh, slab_config, slab_distribution)
        assert energy(u) == pytest.approx(reduced_energy(slab_mesh, slab_config, slab_distribution, u).total)

    def test_heat_balance(self, square_mesh, square_transversal):
        # no Dirichlet part: every unit of heat leaves through Gamma_I
        config = ProblemConfig.simple(f=1.0, m=0.4)
        distribution = DistributionProfile.uniform(square_transversal, 0.4)
        report = solve_reduced(square_mesh, config, distribution, rel_tol=1e-12)
        q_conv = convective_loss(square_mesh, config, distribution, report.u)
        assert q_conv == pytest.approx(net_heat_input(config, square_mesh), rel=1e-8)

    def test_distribution_from_another_mesh_is_rejected(self, slab_domain, slab_config, slab_distribution):
        other = mesh_body(slab_domain, 0.2)
        with pytest.raises(MeshFailure):
            solve_reduced(other, slab_config, slab_distribution)

    def test_minimizer_certificate(self, slab_mesh, slab_config, slab_distribution):
        report = solve_reduced(slab_mesh, slab_config, slab_distribution, rel_tol=1e-12)
        energy = reduced_energy_function(slab_mesh, slab_config, slab_distribution)
        nodes = np.setdiff1d(np.arange(slab_mesh.node_count), slab_mesh.nodes_with(FacetLabel.DIRICHLET))[:50]
        certificate = minimizer_certificate(energy, report.u, nodes)
        assert certificate.passed
        assert certificate.probes == 100
        shifted = report.u.copy()
        shifted[nodes] += 0.05
        assert not minimizer_certificate(energy, shifted, nodes).passed


class TestThickModel:
    @pytest.fixture
    def thick_setup(self, slab_domain, slab_mesh, slab_distribution):
        spec = LayerSpec(0.02, slab_distribution)
        return spec, mesh_thick(slab_domain, spec, 0.1, n_layers=2, body=slab_mesh)

    def test_slab_thick_oracle(self, thick_setup, slab_config):
        spec, mesh = thick_setup
        report = solve_thick(mesh, slab_config, spec)
        insulated = spec.boundary.node_ids
        # the thick and reduced slab problems coincide for an affine layer profile
        np.testing.assert_allclose(report.u[insulated], 1.0 / 3.0, atol=5e-3)
        assert report.energy.total == pytest.approx(-0.125, abs=5e-3)
        assert report.energy.grad_layer > 0.0

    def test_artificial_sides_carry_no_flux(self, thick_setup, slab_config):
        spec, mesh = thick_setup
        energy = thick_energy_function(mesh, slab_config, spec)
        report = solve_thick(mesh, slab_config, spec, rel_tol=1e-12)
        assert energy(report.u) == pytest.approx(report.energy.total)
        # the 1D solution is reproduced across the whole layer height
        _, grid = layer_rows(mesh, spec)
        spread = np.ptp(report.u[grid], axis=1)
        assert np.all(spread < 1e-2)

    def test_layer_rows(self, thick_setup):
        spec, mesh = thick_setup
        n_layers, grid = layer_rows(mesh, spec)
        assert n_layers == 2
        assert grid.shape == (3, spec.boundary.node_count)
        np.testing.assert_allclose(mesh.nodes[grid[2], 0], 1.02)

    def test_recovery_field_matches_reduced_energy_on_the_slab(self, thick_setup, slab_config, slab_mesh, slab_distribution):
        spec, mesh = thick_setup
        reduced = solve_reduced(slab_mesh, slab_config, slab_distribution)
        recovery = build_recovery_field(mesh, slab_config, spec, reduced.u)
        np.testing.assert_array_equal(recovery[: slab_mesh.node_count], reduced.u)
        _, grid = layer_rows(mesh, spec)
        np.testing.assert_allclose(recovery[grid[-1]], reduced.u[spec.boundary.node_ids] / 2.0)
        slack = thick_energy(mesh, slab_config, spec, recovery).total - reduced.energy.total
        assert slack >= -1e-8
        assert slack < 1e-3

    def test_transmission_jump_is_small(self, thick_setup, slab_config):
        spec, mesh = thick_setup
        report = solve_thick(mesh, slab_config, spec, rel_tol=1e-12)
        jumps = transmission_jump(mesh, slab_config, spec, report.u)
        assert jumps.shape == (len(spec.boundary.facets),)
        assert np.sqrt(np.mean(jumps**2)) < 0.2

    def test_body_mesh_is_rejected(self, slab_mesh, slab_config, slab_distribution):
        with pytest.raises(MeshFailure):
            solve_thick(slab_mesh, slab_config, LayerSpec(0.02, slab_distribution))

    def test_linear_ambient_profile(self, thick_setup, slab_mesh, slab_distribution):
        spec, mesh = thick_setup
        config = ProblemConfig.simple(f=1.0, u_inf=parse("x"))
        thick = solve_thick(mesh, config, spec)
        reduced = solve_reduced(slab_mesh, config, slab_distribution)
        assert thick.energy.total == pytest.approx(reduced.energy.total, abs=1e-2)
        assert np.all(np.isfinite(interpolate(mesh, config.u_inf)))
