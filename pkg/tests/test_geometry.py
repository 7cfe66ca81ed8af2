import numpy as np
import pytest

from src.errors import InvalidDomain, NegativeWeight, NonTransversal, OutsideLayer, SelfIntersection
from src.geometry import (
    BoundaryLabel,
    DistributionProfile,
    InsulatedBoundary,
    LayerSpec,
    TransversalMode,
    build_transversal,
    check_bilipschitz,
    closest_point_projection,
    extrude_layer,
    signed_distance,
    signed_distance_gradient,
    transversal_distance,
)
from src.presets import build_domain, get_preset, list_presets

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]


class TestPolygonalDomain:
    def test_presets_build(self):
        for name, preset in list_presets().items():
            domain = preset.build()
            assert domain.has_label(BoundaryLabel.INSULATED), name

    def test_normals_point_outward(self, slab_domain):
        np.testing.assert_allclose(slab_domain.normals, [(0, -1), (1, 0), (0, 1), (-1, 0)], atol=1e-15)
        assert slab_domain.label_length(BoundaryLabel.INSULATED) == pytest.approx(1.0)

    def test_clockwise_outer_loop_is_rejected(self):
        with pytest.raises(InvalidDomain):
            build_domain(SQUARE[::-1], [(0, 1, "I"), (1, 2, "D"), (2, 3, "D"), (3, 0, "D")])

    def test_missing_insulated_segment_is_rejected(self):
        with pytest.raises(InvalidDomain):
            build_domain(SQUARE, [(0, 1, "D"), (1, 2, "D"), (2, 3, "N"), (3, 0, "N")])

    def test_open_boundary_is_rejected(self):
        with pytest.raises(InvalidDomain):
            build_domain(SQUARE, [(0, 1, "I"), (1, 2, "D"), (2, 3, "D")])

    def test_self_intersecting_loop_is_rejected(self):
        bowtie = [(0, 0), (1, 1), (1, 0), (0, 1)]
        with pytest.raises(InvalidDomain):
            build_domain(bowtie, [(0, 1, "I"), (1, 2, "D"), (2, 3, "D"), (3, 0, "D")])

    def test_unknown_label_is_rejected(self):
        with pytest.raises(InvalidDomain):
            build_domain(SQUARE, [(0, 1, "I"), (1, 2, "X"), (2, 3, "D"), (3, 0, "D")])

    def test_square_with_hole(self):
        vertices = [(0, 0), (3, 0), (3, 3), (0, 3), (1, 1), (1, 2), (2, 2), (2, 1)]
        segments = [(0, 1, "D"), (1, 2, "D"), (2, 3, "D"), (3, 0, "D"), (4, 5, "I"), (5, 6, "I"), (6, 7, "I"), (7, 4, "I")]
        domain = build_domain(vertices, segments)
        assert domain.polygon.area == pytest.approx(8.0)
        boundary = domain.insulated_boundary()
        assert boundary.total_length == pytest.approx(4.0)
        [(nodes, closed)] = boundary.chains()
        assert closed and len(nodes) == 4

    def test_boundary_polyline_keeps_vertices_first(self, slab_domain):
        points, edges, labels = slab_domain.boundary_polyline(0.25)
        np.testing.assert_array_equal(points[:4], slab_domain.vertices)
        assert len(edges) == 16
        assert labels.count(BoundaryLabel.INSULATED) == 4


class TestProjection:
    def test_closest_point_projection(self, slab_domain):
        projection = closest_point_projection(slab_domain, [1.5, 0.25])
        np.testing.assert_allclose(projection.point, [1.0, 0.25])
        assert projection.distance == pytest.approx(0.5)
        assert projection.segment == 1
        assert not projection.multiple

    def test_medial_axis_is_flagged(self, slab_domain):
        assert closest_point_projection(slab_domain, [0.5, 0.5]).multiple

    def test_signed_distance(self, slab_domain):
        assert signed_distance(slab_domain, [0.25, 0.5]) == pytest.approx(-0.25)
        assert signed_distance(slab_domain, [2.0, 0.5]) == pytest.approx(1.0)
        values = signed_distance(slab_domain, np.array([[0.5, 0.1], [0.5, -0.2]]))
        np.testing.assert_allclose(values, [-0.1, 0.2])

    def test_signed_distance_gradient_is_unit(self, slab_domain):
        gradient = signed_distance_gradient(slab_domain, np.array([[1.3, 0.4], [0.9, 0.5]]))
        np.testing.assert_allclose(gradient, [[1.0, 0.0], [1.0, 0.0]], atol=1e-14)

    def test_corner_projection_is_unique(self, slab_domain):
        projection = closest_point_projection(slab_domain, [1.2, 1.2])
        np.testing.assert_allclose(projection.point, [1.0, 1.0], atol=1e-15)
        assert not projection.multiple
        assert closest_point_projection(slab_domain, [1.3, 1.4]).distance == pytest.approx(0.5, rel=1e-14)

    def test_signed_distance_is_1_lipschitz(self, slab_domain, rng):
        x = rng.uniform(-0.5, 1.5, (10_000, 2))
        y = rng.uniform(-0.5, 1.5, (10_000, 2))
        change = np.abs(signed_distance(slab_domain, x) - signed_distance(slab_domain, y))
        assert np.all(change <= np.linalg.norm(x - y, axis=1) + 1e-12)

    def test_finite_difference_gradient_is_the_segment_normal(self, slab_domain, rng):
        step = 1e-6
        points = rng.uniform(-0.5, 1.5, (2_000, 2))
        offsets = step * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        feet, distance, segment, _ = slab_domain.project(points)
        same = np.ones(len(points), dtype=bool)
        for offset in offsets:
            same &= slab_domain.project(points + offset)[2] == segment
        on_edge = np.min(np.linalg.norm(feet[:, None, :] - slab_domain.vertices[None, :, :], axis=-1), axis=1) > 1e-3
        keep = same & on_edge & (distance > 1e-3)
        assert keep.sum() > 500
        points, segment = points[keep], segment[keep]
        gradient = np.column_stack([
            (signed_distance(slab_domain, points + offsets[0]) - signed_distance(slab_domain, points + offsets[1])) / (2 * step),
            (signed_distance(slab_domain, points + offsets[2]) - signed_distance(slab_domain, points + offsets[3])) / (2 * step),
        ])
        np.testing.assert_allclose(gradient, slab_domain.normals[segment], atol=1e-6)
        np.testing.assert_allclose(signed_distance_gradient(slab_domain, points), gradient, atol=1e-6)


class TestTransversal:
    def test_normal_field_on_a_flat_edge(self, slab_domain):
        transversal = build_transversal(slab_domain, TransversalMode.NORMAL_FIELD)
        assert transversal.kappa == pytest.approx(1.0)
        assert transversal.rotation_bound == pytest.approx(0.0, abs=1e-15)

    def test_square_corners_use_bisectors(self, square_domain):
        transversal = build_transversal(square_domain, TransversalMode.NORMAL_FIELD)
        assert transversal.kappa == pytest.approx(1.0 / np.sqrt(2.0))
        assert transversal.max_angle == pytest.approx(np.pi / 4.0)

    def test_star_field(self, square_domain):
        transversal = build_transversal(square_domain, TransversalMode.STAR_SHAPED, center=(0.5, 0.5))
        assert transversal.kappa > 0.0
        with pytest.raises(NonTransversal):
            build_transversal(square_domain, TransversalMode.STAR_SHAPED, center=(2.0, 0.5))

    def test_star_field_value_on_the_right_edge(self, square_domain):
        boundary = InsulatedBoundary(points=[(1.0, 0.0), (1.0, 0.9), (1.0, 1.0)], facets=[(0, 1), (1, 2)])
        transversal = build_transversal(square_domain, TransversalMode.STAR_SHAPED, boundary, center=(0.5, 0.5))
        np.testing.assert_allclose(transversal.node_vectors[1], np.array([0.5, 0.4]) / np.sqrt(0.41), rtol=1e-14)
        assert transversal.node_k_dot_n[1] == pytest.approx(0.5 / np.sqrt(0.41), rel=1e-12)
        assert transversal.node_k_dot_n[1] == pytest.approx(0.780869, abs=1e-6)

    def test_tangential_table_is_not_transversal(self, slab_domain):
        boundary = slab_domain.insulated_boundary()
        table = np.tile([0.0, 1.0], (boundary.node_count, 1))
        with pytest.raises(NonTransversal) as excinfo:
            build_transversal(slab_domain, TransversalMode.USER_TABLE, table=table)
        assert excinfo.value.details["kappa"] <= 0.0

    def test_tilted_table_is_normalised(self, slab_domain):
        boundary = slab_domain.insulated_boundary()
        table = np.tile([1.0, 1.0], (boundary.node_count, 1))
        transversal = build_transversal(slab_domain, TransversalMode.USER_TABLE, table=table)
        assert transversal.kappa == pytest.approx(1.0 / np.sqrt(2.0))


class TestDistribution:
    def test_uniform_mass(self, square_transversal):
        distribution = DistributionProfile.uniform(square_transversal, 0.4)
        assert distribution.mass() == pytest.approx(0.4, abs=1e-14)
        np.testing.assert_allclose(distribution.d_tilde, 0.1)

    def test_d_tilde_and_d_relation(self, square_transversal):
        distribution = DistributionProfile.uniform(square_transversal, 0.4)
        np.testing.assert_allclose(distribution.d_values * square_transversal.node_k_dot_n, distribution.d_tilde)
        assert distribution.d_max > distribution.d_min

    def test_negative_values_are_rejected(self, slab_transversal):
        values = np.ones(slab_transversal.boundary.node_count)
        values[0] = -0.1
        with pytest.raises(NegativeWeight):
            DistributionProfile.from_d_tilde(slab_transversal, values)


class TestLayerGrid:
    def test_flat_layer_area_and_nodes(self, slab_domain, slab_transversal):
        spec = LayerSpec(0.1, DistributionProfile.uniform(slab_transversal, 1.0))
        grid = extrude_layer(slab_domain, spec, n_layers=2)
        assert grid.area() == pytest.approx(0.1, rel=1e-12)
        np.testing.assert_allclose(grid.points[0], slab_transversal.boundary.points)
        np.testing.assert_allclose(grid.points[2][:, 0], 1.1)
        assert grid.outer_length() == pytest.approx(1.0)
        assert len(grid.triangles()) == 2 * len(grid.quads)

    def test_open_chain_has_side_facets(self, slab_domain, slab_transversal):
        spec = LayerSpec(0.1, DistributionProfile.uniform(slab_transversal, 1.0))
        grid = extrude_layer(slab_domain, spec, n_layers=3)
        assert grid.side_facets().shape == (6, 2)

    def test_closed_chain_has_no_side_facets(self, square_domain, square_transversal):
        spec = LayerSpec(0.05, DistributionProfile.uniform(square_transversal, 0.4))
        grid = extrude_layer(square_domain, spec, n_layers=2)
        assert grid.side_facets().shape == (0, 2)
        assert np.all(grid.quad_areas() > 0.0)

    def test_transversal_distance_inside_and_outside(self, slab_domain, slab_transversal):
        spec = LayerSpec(0.1, DistributionProfile.uniform(slab_transversal, 1.0))
        assert transversal_distance(spec, [1.05, 0.33]) == pytest.approx(0.05, abs=1e-12)
        assert transversal_distance(spec, [1.0, 0.5]) == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(OutsideLayer):
            transversal_distance(spec, [1.2, 0.5])
        with pytest.raises(OutsideLayer):
            transversal_distance(spec, [0.5, 0.5])

    def test_reflex_corner_overlaps_for_thick_layers(self):
        domain = get_preset("l_shape").build()
        transversal = build_transversal(domain, TransversalMode.NORMAL_FIELD, domain.insulated_boundary(0.1))
        distribution = DistributionProfile.uniform(transversal, 1.0)
        extrude_layer(domain, LayerSpec(0.05, distribution))
        with pytest.raises(SelfIntersection) as excinfo:
            extrude_layer(domain, LayerSpec(2.0, distribution))
        assert excinfo.value.exit_code == 3
        assert excinfo.value.details["epsilon"] == 2.0

    def test_bilipschitz_bound(self):
        domain = get_preset("l_shape").build()
        transversal = build_transversal(domain, TransversalMode.NORMAL_FIELD, domain.insulated_boundary(0.1))
        distribution = DistributionProfile.uniform(transversal, 1.0)
        bound = check_bilipschitz(domain, transversal, distribution, epsilon_max=2.0)
        assert 0.05 <= bound < 2.0
        extrude_layer(domain, LayerSpec(0.99 * bound, distribution))

    def test_bilipschitz_bound_shrinks_with_the_thickness_ramp(self):
        domain = get_preset("l_shape").build()
        transversal = build_transversal(domain, TransversalMode.NORMAL_FIELD, domain.insulated_boundary(0.1))
        # d = 1 at the reflex corner, growing linearly away from it
        distance = np.linalg.norm(transversal.boundary.points - np.array([1.0, 1.0]), axis=1)
        bounds = []
        for slope in (0.0, 1.0, 4.0, 16.0):
            distribution = DistributionProfile.from_d(transversal, 1.0 + slope * distance)
            bounds.append(check_bilipschitz(domain, transversal, distribution, epsilon_max=2.0))
        assert all(b <= a * (1.0 + 2e-3) for a, b in zip(bounds, bounds[1:]))
        assert bounds[-1] < bounds[0]
        assert bounds[-1] > 0.0

    def test_bilipschitz_accepts_the_whole_range_on_a_flat_edge(self, slab_domain, slab_transversal):
        distribution = DistributionProfile.uniform(slab_transversal, 1.0)
        assert check_bilipschitz(slab_domain, slab_transversal, distribution, epsilon_max=0.5) == 0.5
