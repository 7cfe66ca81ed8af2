"""
Geometry of the insulated body
Polygonal domains with labeled boundary parts, closest point projection and
distance functions, transversal vector fields on the insulated boundary,
distribution profiles and the extruded insulating layer
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import shapely

from .errors import InvalidDomain, NegativeWeight, NonTransversal, OutsideLayer, SelfIntersection

logger = logging.getLogger(__name__)

MEDIAL_AXIS_TOL = 1e-12
UNIT_TOL = 1e-12


class BoundaryLabel(str, Enum):
    """Boundary part of the conducting body"""

    INSULATED = "I"
    DIRICHLET = "D"
    NEUMANN = "N"


class TransversalMode(str, Enum):
    """How the transversal field k is constructed"""

    NORMAL_FIELD = "normal"
    STAR_SHAPED = "star"
    USER_TABLE = "table"


def rotate_clockwise(vectors: np.ndarray) -> np.ndarray:
    """Outward normal of a boundary traversed with the interior on its left"""
    return np.stack([vectors[..., 1], -vectors[..., 0]], axis=-1)


def cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def signed_area(points: np.ndarray) -> float:
    """Shoelace area of a closed polygon (positive when counter-clockwise)"""
    return 0.5 * float(np.sum(cross2(points, np.roll(points, -1, axis=0))))


def subdivide(start: np.ndarray, end: np.ndarray, h: Optional[float]) -> np.ndarray:
    """Points of a segment split into equal pieces no longer than h, endpoints included"""
    length = float(np.linalg.norm(end - start))
    pieces = 1 if h is None else max(1, math.ceil(length / h - 1e-9))
    s = np.linspace(0.0, 1.0, pieces + 1)[:, None]
    return (1.0 - s) * start + s * end


# ============================================================================
# Polygonal domain
# ============================================================================

@dataclass(frozen=True)
class Segment:
    """Boundary segment between two vertices, traversed with the interior on its left"""

    start: int
    end: int
    label: BoundaryLabel


@dataclass(frozen=True, eq=False)
class Projection:
    """Closest boundary point of a query point"""

    point: np.ndarray
    distance: float
    segment: int
    multiple: bool


@dataclass(frozen=True, eq=False)
class PolygonalDomain:
    """Polygonal body with its boundary split into insulated, Dirichlet and Neumann parts.

    Outer loop counter-clockwise, holes clockwise, so every segment has the body
    on its left and its outward normal is the clockwise rotation of its tangent.
    """

    vertices: np.ndarray
    segments: tuple[Segment, ...]

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "segments", tuple(self.segments))
        self._validate()

    def _validate(self) -> None:
        vertices = self.vertices
        if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 3:
            raise InvalidDomain("domain.vertices must be a list of at least three 2D points")
        if not np.all(np.isfinite(vertices)):
            raise InvalidDomain("domain.vertices contains non-finite coordinates")
        outgoing: dict[int, int] = {}
        incoming: dict[int, int] = {}
        for index, segment in enumerate(self.segments):
            for vertex in (segment.start, segment.end):
                if not 0 <= vertex < len(vertices):
                    raise InvalidDomain(f"domain.segments[{index}] references unknown vertex {vertex}")
            if segment.start == segment.end:
                raise InvalidDomain(f"domain.segments[{index}] is degenerate")
            if segment.start in outgoing or segment.end in incoming:
                raise InvalidDomain(f"domain.segments[{index}] branches the boundary at a vertex")
            outgoing[segment.start] = index
            incoming[segment.end] = index
        if set(outgoing) != set(incoming):
            raise InvalidDomain("domain.segments do not form closed loops")
        if not any(s.label == BoundaryLabel.INSULATED for s in self.segments):
            raise InvalidDomain("domain.segments has no Insulated (I) segment")

        loop_areas = [signed_area(vertices[loop]) for loop in self.loops]
        outer = int(np.argmax(np.abs(loop_areas)))
        if loop_areas[outer] <= 0.0:
            raise InvalidDomain("outer boundary loop must be counter-clockwise")
        for index, area in enumerate(loop_areas):
            if index != outer and area >= 0.0:
                raise InvalidDomain("hole loops must be clockwise")
        for loop in self.loops:
            if not shapely.LinearRing(vertices[loop]).is_simple:
                raise InvalidDomain("boundary loop intersects itself")
        if not self.polygon.is_valid:
            raise InvalidDomain("boundary loops do not bound a valid polygon")

        midpoints = 0.5 * (self.segment_points[:, 0] + self.segment_points[:, 1])
        probes = midpoints - 1e-6 * self.lengths[:, None] * self.normals
        inside = shapely.contains_xy(self.polygon, probes[:, 0], probes[:, 1])
        if not np.all(inside):
            raise InvalidDomain(f"segments {np.flatnonzero(~inside).tolist()} have inward normals")

    @cached_property
    def loops(self) -> list[list[int]]:
        """Vertex index lists, one per closed boundary loop"""
        next_vertex = {s.start: s.end for s in self.segments}
        remaining = set(next_vertex)
        loops = []
        while remaining:
            start = min(remaining)
            loop = [start]
            remaining.discard(start)
            vertex = next_vertex[start]
            while vertex != start:
                loop.append(vertex)
                remaining.discard(vertex)
                vertex = next_vertex[vertex]
            loops.append(loop)
        return loops

    @cached_property
    def polygon(self) -> shapely.Polygon:
        areas = [signed_area(self.vertices[loop]) for loop in self.loops]
        outer = int(np.argmax(np.abs(areas)))
        holes = [self.vertices[loop] for i, loop in enumerate(self.loops) if i != outer]
        return shapely.Polygon(self.vertices[self.loops[outer]], holes)

    @cached_property
    def segment_points(self) -> np.ndarray:
        starts = [s.start for s in self.segments]
        ends = [s.end for s in self.segments]
        return np.stack([self.vertices[starts], self.vertices[ends]], axis=1)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.segment_points[:, 1] - self.segment_points[:, 0], axis=1)

    @cached_property
    def tangents(self) -> np.ndarray:
        return (self.segment_points[:, 1] - self.segment_points[:, 0]) / self.lengths[:, None]

    @cached_property
    def normals(self) -> np.ndarray:
        return rotate_clockwise(self.tangents)

    @cached_property
    def labels(self) -> tuple[BoundaryLabel, ...]:
        return tuple(s.label for s in self.segments)

    def has_label(self, label: BoundaryLabel) -> bool:
        return label in self.labels

    def label_length(self, label: BoundaryLabel) -> float:
        mask = np.array([lab == label for lab in self.labels])
        return float(self.lengths[mask].sum())

    def boundary_polyline(self, h: Optional[float]) -> tuple[np.ndarray, np.ndarray, list[BoundaryLabel]]:
        """Discretize every segment into pieces no longer than h.

        Returns (points, edges, labels) with domain vertices first, so that
        discretizations with the same h agree node for node.
        """
        points = [p for p in self.vertices]
        edges = []
        labels = []
        for index, segment in enumerate(self.segments):
            pts = subdivide(self.vertices[segment.start], self.vertices[segment.end], h)
            chain = [segment.start]
            for interior in pts[1:-1]:
                chain.append(len(points))
                points.append(interior)
            chain.append(segment.end)
            for a, b in zip(chain[:-1], chain[1:]):
                edges.append((a, b))
                labels.append(segment.label)
        return np.asarray(points), np.asarray(edges, dtype=np.int64), labels

    def insulated_boundary(self, h: Optional[float] = None) -> "InsulatedBoundary":
        """Discretization of Gamma_I with facets no longer than h (domain segments when h is None)"""
        points, edges, labels = self.boundary_polyline(h)
        mask = np.array([label == BoundaryLabel.INSULATED for label in labels])
        used, local = np.unique(edges[mask], return_inverse=True)
        return InsulatedBoundary(points=points[used], facets=local.reshape(-1, 2))

    # ------------------------------------------------------------------
    # distance queries
    # ------------------------------------------------------------------

    def _segment_feet(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = self.segment_points[:, 0][None, :, :]
        b = self.segment_points[:, 1][None, :, :]
        ab = b - a
        ap = points[:, None, :] - a
        s = np.clip(np.sum(ap * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
        feet = a + s[..., None] * ab
        distances = np.linalg.norm(points[:, None, :] - feet, axis=-1)
        return feet, distances

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised closest point projection: (feet, distances, segment index, multiplicity flag)"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        feet, distances = self._segment_feet(points)
        best = np.argmin(distances, axis=1)
        rows = np.arange(len(points))
        dmin = distances[rows, best]
        foot = feet[rows, best]
        close = distances <= dmin[:, None] + MEDIAL_AXIS_TOL
        apart = np.linalg.norm(feet - foot[:, None, :], axis=-1) > MEDIAL_AXIS_TOL
        multiple = np.any(close & apart, axis=1)
        return foot, dmin, best, multiple

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return shapely.contains_xy(self.polygon, points[:, 0], points[:, 1])


def closest_point_projection(domain: PolygonalDomain, x) -> Projection:
    """Closest point of the boundary to x, flagging points near the medial axis"""
    foot, distance, segment, multiple = domain.project(np.asarray(x, dtype=float)[None, :])
    return Projection(point=foot[0], distance=float(distance[0]), segment=int(segment[0]), multiple=bool(multiple[0]))


def signed_distance(domain: PolygonalDomain, x) -> np.ndarray | float:
    """Distance to the boundary, negative inside the body, positive outside"""
    points = np.asarray(x, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    _, distance, _, _ = domain.project(points)
    sign = np.where(domain.contains(points), -1.0, 1.0)
    values = sign * distance
    return float(values[0]) if single else values


def signed_distance_gradient(domain: PolygonalDomain, x) -> np.ndarray:
    """Gradient of the signed distance away from the boundary and the medial axis"""
    points = np.atleast_2d(np.asarray(x, dtype=float))
    foot, distance, _, _ = domain.project(points)
    sign = np.where(domain.contains(points), -1.0, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        gradient = sign[:, None] * (points - foot) / distance[:, None]
    return gradient[0] if np.asarray(x).ndim == 1 else gradient


# ============================================================================
# Discretized insulated boundary
# ============================================================================

@dataclass(frozen=True, eq=False)
class InsulatedBoundary:
    """Polyline discretization of Gamma_I.

    Facets are local node index pairs traversed with the body on the left.
    node_ids maps local nodes to mesh nodes when the boundary comes from a mesh.
    """

    points: np.ndarray
    facets: np.ndarray
    node_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "facets", np.asarray(self.facets, dtype=np.int64).reshape(-1, 2))
        if len(self.facets) == 0:
            raise InvalidDomain("insulated boundary has no facets")

    @property
    def node_count(self) -> int:
        return len(self.points)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.points[self.facets[:, 1]] - self.points[self.facets[:, 0]], axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        delta = self.points[self.facets[:, 1]] - self.points[self.facets[:, 0]]
        return rotate_clockwise(delta / self.lengths[:, None])

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Trapezoid weights: half the length of every adjacent facet"""
        weights = np.zeros(self.node_count)
        np.add.at(weights, self.facets[:, 0], 0.5 * self.lengths)
        np.add.at(weights, self.facets[:, 1], 0.5 * self.lengths)
        return weights

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @cached_property
    def outgoing(self) -> np.ndarray:
        result = np.full(self.node_count, -1, dtype=np.int64)
        result[self.facets[:, 0]] = np.arange(len(self.facets))
        return result

    @cached_property
    def incoming(self) -> np.ndarray:
        result = np.full(self.node_count, -1, dtype=np.int64)
        result[self.facets[:, 1]] = np.arange(len(self.facets))
        return result

    def chains(self) -> list[tuple[np.ndarray, bool]]:
        """Ordered node chains of Gamma_I as (node indices, closed)"""
        visited = np.zeros(len(self.facets), dtype=bool)
        chains = []

        def walk(start: int) -> list[int]:
            nodes = [start]
            facet = self.outgoing[start]
            while facet >= 0 and not visited[facet]:
                visited[facet] = True
                nodes.append(int(self.facets[facet, 1]))
                facet = self.outgoing[nodes[-1]]
            return nodes

        for start in np.flatnonzero((self.incoming < 0) & (self.outgoing >= 0)):
            chains.append((np.asarray(walk(int(start))), False))
        while not np.all(visited):
            start = int(self.facets[np.flatnonzero(~visited)[0], 0])
            nodes = walk(start)
            chains.append((np.asarray(nodes[:-1]), True))
        return chains

    def integrate_nodal(self, values: np.ndarray) -> float:
        """Exact integral of the piecewise linear interpolant of nodal values"""
        return float(np.dot(self.node_weights, values))


def facet_gauss(order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]"""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


# ============================================================================
# Transversal vector fields
# ============================================================================

@dataclass(frozen=True, eq=False)
class TransversalProfile:
    """Unit transversal field k on the nodes of Gamma_I with certified constant kappa"""

    boundary: InsulatedBoundary
    node_vectors: np.ndarray
    kappa: float
    mode: TransversalMode
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        vectors = np.asarray(self.node_vectors, dtype=float)
        object.__setattr__(self, "node_vectors", vectors)
        if vectors.shape != (self.boundary.node_count, 2):
            raise InvalidDomain("transversal field must have one vector per Gamma_I node")
        if np.any(np.abs(np.linalg.norm(vectors, axis=1) - 1.0) > UNIT_TOL):
            raise NonTransversal("transversal field must be a unit field")

    @cached_property
    def facet_k_dot_n(self) -> np.ndarray:
        """k.n at both endpoints of every facet, shape (facets, 2)"""
        k = self.node_vectors[self.boundary.facets]
        return np.einsum("fej,fj->fe", k, self.boundary.normals)

    @cached_property
    def node_k_dot_n(self) -> np.ndarray:
        """k.n per node, averaged over the adjacent facets where n jumps"""
        total = np.zeros(self.boundary.node_count)
        count = np.zeros(self.boundary.node_count)
        for end in (0, 1):
            np.add.at(total, self.boundary.facets[:, end], self.facet_k_dot_n[:, end])
            np.add.at(count, self.boundary.facets[:, end], 1.0)
        return total / count

    @property
    def max_angle(self) -> float:
        """Largest angle between k and n allowed by kappa"""
        return math.acos(min(1.0, self.kappa))

    @cached_property
    def rotation_bound(self) -> float:
        """Per-facet rotation of the interpolated k, max |det(k_i, k_j)| / length"""
        k = self.node_vectors[self.boundary.facets]
        return float(np.max(np.abs(cross2(k[:, 0], k[:, 1])) / self.boundary.lengths))


def _bisector_field(boundary: InsulatedBoundary) -> np.ndarray:
    total = np.zeros((boundary.node_count, 2))
    np.add.at(total, boundary.facets[:, 0], boundary.normals)
    np.add.at(total, boundary.facets[:, 1], boundary.normals)
    norms = np.linalg.norm(total, axis=1)
    if np.any(norms < 1e-12):
        raise NonTransversal("normal field has no bisector at a cusp of Gamma_I")
    return total / norms[:, None]


def build_transversal(
    domain: PolygonalDomain,
    mode: TransversalMode,
    boundary: Optional[InsulatedBoundary] = None,
    center: Optional[Sequence[float]] = None,
    table: Optional[np.ndarray] = None,
) -> TransversalProfile:
    """
    Build and certify a transversal field on Gamma_I

    Args:
        domain: the body
        mode: normal-field bisectors, star-shaped rays from center, or a user table
        boundary: discretization of Gamma_I (domain segments by default)
        center: ray center for the star-shaped mode, strictly inside the body
        table: one vector per boundary node for the table mode (normalised here)

    Returns:
        TransversalProfile with kappa = min k.n over all facet endpoints

    Raises:
        NonTransversal: if min k.n <= 0
    """
    boundary = boundary if boundary is not None else domain.insulated_boundary()
    mode = TransversalMode(mode)
    center_array = None

    if mode == TransversalMode.NORMAL_FIELD:
        vectors = _bisector_field(boundary)
    elif mode == TransversalMode.STAR_SHAPED:
        if center is None:
            raise NonTransversal("star-shaped field needs a center")
        center_array = np.asarray(center, dtype=float)
        if not domain.contains(center_array)[0]:
            raise NonTransversal(f"center {center_array.tolist()} is not strictly inside the body")
        rays = boundary.points - center_array
        vectors = rays / np.linalg.norm(rays, axis=1)[:, None]
    else:
        if table is None:
            raise NonTransversal("table mode needs one vector per Gamma_I node")
        table = np.asarray(table, dtype=float).reshape(-1, 2)
        norms = np.linalg.norm(table, axis=1)
        if table.shape[0] != boundary.node_count or np.any(norms == 0.0):
            raise NonTransversal("table must hold one non-zero vector per Gamma_I node")
        vectors = table / norms[:, None]

    k = vectors[boundary.facets]
    k_dot_n = np.einsum("fej,fj->fe", k, boundary.normals)
    kappa = float(k_dot_n.min())
    if kappa <= 0.0:
        facet = int(np.argmin(k_dot_n.min(axis=1)))
        raise NonTransversal(
            f"k.n = {kappa:.6g} <= 0 on Gamma_I facet {facet}",
            kappa=kappa,
            facet=facet,
        )
    logger.debug(f"Transversal field ({mode.value}) certified with kappa={kappa:.6f}")
    return TransversalProfile(boundary, vectors, kappa, mode, center_array)


# ============================================================================
# Distribution profiles and the insulating layer
# ============================================================================

@dataclass(frozen=True, eq=False)
class DistributionProfile:
    """Layer thickness d along k per Gamma_I node; d_tilde = (k.n) d along n"""

    transversal: TransversalProfile
    d_values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.d_values, dtype=float)
        object.__setattr__(self, "d_values", values)
        if values.shape != (self.boundary.node_count,):
            raise InvalidDomain("distribution needs one value per Gamma_I node")
        if not np.all(np.isfinite(values)):
            raise NegativeWeight("distribution has non-finite values")
        if np.any(values < 0.0):
            raise NegativeWeight(
                f"distribution is negative at {int(np.sum(values < 0.0))} Gamma_I nodes",
                minimum=float(values.min()),
            )

    @classmethod
    def from_d(cls, transversal: TransversalProfile, d_values) -> "DistributionProfile":
        return cls(transversal, d_values)

    @classmethod
    def from_d_tilde(cls, transversal: TransversalProfile, d_tilde) -> "DistributionProfile":
        d_tilde = np.asarray(d_tilde, dtype=float)
        if np.any(d_tilde < 0.0):
            raise NegativeWeight("distribution is negative", minimum=float(d_tilde.min()))
        return cls(transversal, d_tilde / transversal.node_k_dot_n)

    @classmethod
    def uniform(cls, transversal: TransversalProfile, mass: float) -> "DistributionProfile":
        """d_tilde = m / |Gamma_I|, the unbiased member of the mass class"""
        boundary = transversal.boundary
        return cls.from_d_tilde(transversal, np.full(boundary.node_count, mass / boundary.total_length))

    @property
    def boundary(self) -> InsulatedBoundary:
        return self.transversal.boundary

    @cached_property
    def d_tilde(self) -> np.ndarray:
        return self.transversal.node_k_dot_n * self.d_values

    def mass(self) -> float:
        return self.boundary.integrate_nodal(self.d_tilde)

    @property
    def d_min(self) -> float:
        return float(self.d_values.min())

    @property
    def d_max(self) -> float:
        return float(self.d_values.max())


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """Insulating layer of local thickness epsilon * d along k"""

    epsilon: float
    distribution: DistributionProfile

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise InvalidDomain(f"layer epsilon must be positive, got {self.epsilon}")

    @property
    def transversal(self) -> TransversalProfile:
        return self.distribution.transversal

    @property
    def boundary(self) -> InsulatedBoundary:
        return self.distribution.boundary

    @cached_property
    def fiber_vectors(self) -> np.ndarray:
        """epsilon d_i k_i, the full fiber at every Gamma_I node"""
        return self.epsilon * self.distribution.d_values[:, None] * self.transversal.node_vectors

    def with_epsilon(self, epsilon: float) -> "LayerSpec":
        return LayerSpec(epsilon, self.distribution)


@dataclass(frozen=True, eq=False)
class LayerGrid:
    """Structured extrusion of Gamma_I: rows r = 0..n_layers, row 0 on Gamma_I.

    Grid node (r, j) has flat index r * node_count + j. Quads are stored
    counter-clockwise as (b, a, d, c) for a facet a -> b.
    """

    spec: LayerSpec
    n_layers: int
    points: np.ndarray
    t: np.ndarray
    quads: np.ndarray
    quad_facet: np.ndarray

    @property
    def node_count(self) -> int:
        return self.spec.boundary.node_count

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.reshape(-1, 2)

    def index(self, row: int, node) -> np.ndarray:
        return row * self.node_count + np.asarray(node)

    def quad_areas(self) -> np.ndarray:
        corners = self.flat_points[self.quads]
        return 0.5 * np.sum(cross2(corners, np.roll(corners, -1, axis=1)), axis=1)

    def area(self) -> float:
        return float(self.quad_areas().sum())

    def outer_facets(self) -> np.ndarray:
        """Gamma_I^eps facets, oriented with the layer on the left"""
        return self.index(self.n_layers, self.spec.boundary.facets)

    def outer_length(self) -> float:
        p = self.flat_points[self.outer_facets()]
        return float(np.linalg.norm(p[:, 1] - p[:, 0], axis=1).sum())

    def side_facets(self) -> np.ndarray:
        """Artificial side cuts at the ends of open Gamma_I chains, layer on the left"""
        boundary = self.spec.boundary
        sides = []
        for start in np.flatnonzero((boundary.incoming < 0) & (boundary.outgoing >= 0)):
            for row in range(self.n_layers):
                sides.append((self.index(row, start), self.index(row + 1, start)))
        for end in np.flatnonzero((boundary.outgoing < 0) & (boundary.incoming >= 0)):
            for row in range(self.n_layers):
                sides.append((self.index(row + 1, end), self.index(row, end)))
        return np.asarray(sides, dtype=np.int64).reshape(-1, 2)

    def triangles(self) -> np.ndarray:
        """Split every quad along its shorter diagonal into two CCW triangles"""
        b, a, d, c = self.quads.T
        p = self.flat_points
        ac = np.linalg.norm(p[a] - p[c], axis=1)
        bd = np.linalg.norm(p[b] - p[d], axis=1)
        use_ac = ac <= bd
        first = np.where(use_ac[:, None], np.stack([b, a, c], axis=1), np.stack([b, a, d], axis=1))
        second = np.where(use_ac[:, None], np.stack([a, d, c], axis=1), np.stack([b, d, c], axis=1))
        return np.concatenate([first, second])

    def strip_polygons(self) -> np.ndarray:
        """One shapely polygon per facet covering its whole fiber strip"""
        boundary = self.spec.boundary
        i, j = boundary.facets.T
        inner = self.points[0]
        outer = self.points[self.n_layers]
        rings = np.stack([inner[j], inner[i], outer[i], outer[j]], axis=1)
        return shapely.polygons(rings)


def _corner_determinants(corners: np.ndarray) -> np.ndarray:
    prev = np.roll(corners, 1, axis=1)
    nxt = np.roll(corners, -1, axis=1)
    return cross2(nxt - corners, prev - corners)


def extrude_layer(domain: Optional[PolygonalDomain], spec: LayerSpec, n_layers: int = 1) -> LayerGrid:
    """
    Extrude Gamma_I along k into a structured layer grid

    Args:
        domain: body used to certify that the layer stays outside it (skipped when None)
        spec: epsilon and the distribution / transversal data on Gamma_I
        n_layers: number of rows across the thickness

    Returns:
        LayerGrid whose row 0 coincides node-for-node with Gamma_I

    Raises:
        SelfIntersection: if a quad is not strictly convex, strips overlap,
            or the layer enters the body
    """
    if n_layers < 1:
        raise InvalidDomain("n_layers must be at least 1")
    boundary = spec.boundary
    fractions = np.arange(n_layers + 1) / n_layers
    points = boundary.points[None, :, :] + fractions[:, None, None] * spec.fiber_vectors[None, :, :]
    t = fractions[:, None] * (spec.epsilon * spec.distribution.d_values)[None, :]

    nb = boundary.node_count
    rows = np.arange(n_layers)[:, None]
    i, j = boundary.facets[:, 0][None, :], boundary.facets[:, 1][None, :]
    quads = np.stack(
        np.broadcast_arrays(rows * nb + j, rows * nb + i, (rows + 1) * nb + i, (rows + 1) * nb + j),
        axis=-1,
    ).reshape(-1, 4)
    quad_facet = np.broadcast_to(np.arange(len(boundary.facets))[None, :], (n_layers, len(boundary.facets))).ravel()
    grid = LayerGrid(spec, n_layers, points, t, quads, quad_facet.copy())

    flat = grid.flat_points
    dets = _corner_determinants(flat[quads])
    scale = np.max(boundary.lengths) * max(spec.epsilon * spec.distribution.d_max, 1e-300)
    if np.any(dets <= 1e-14 * scale):
        bad = int(np.argmin(dets.min(axis=1)))
        raise SelfIntersection(
            f"layer quad at facet {int(quad_facet[bad])} is degenerate at epsilon={spec.epsilon:.6g}",
            epsilon=spec.epsilon,
            facet=int(quad_facet[bad]),
        )

    strips = grid.strip_polygons()
    total = float(np.sum(shapely.area(strips)))
    union = shapely.union_all(strips)
    if total - union.area > 1e-9 * total:
        raise SelfIntersection(
            f"layer strips overlap at epsilon={spec.epsilon:.6g}",
            epsilon=spec.epsilon,
            overlap=total - union.area,
        )
    if domain is not None:
        inside = shapely.intersection(union, domain.polygon).area
        if inside > 1e-9 * total:
            raise SelfIntersection(
                f"layer enters the body at epsilon={spec.epsilon:.6g}",
                epsilon=spec.epsilon,
                overlap=inside,
            )
    return grid


def _invert_strip(p_i, p_j, v_i, v_j, x) -> tuple[float, float]:
    sigma, tau = 0.5, 0.5
    for _ in range(50):
        fiber = (1.0 - sigma) * v_i + sigma * v_j
        residual = p_i + sigma * (p_j - p_i) + tau * fiber - x
        jacobian = np.column_stack([p_j - p_i + tau * (v_j - v_i), fiber])
        step = np.linalg.solve(jacobian, residual)
        sigma, tau = sigma - step[0], tau - step[1]
        if np.max(np.abs(step)) < 1e-15:
            break
    return sigma, tau


def transversal_distance(spec: LayerSpec, x) -> float:
    """
    Fiber coordinate t of a layer point x = s + t k(s)

    Raises:
        OutsideLayer: if x lies in no layer strip
    """
    x = np.asarray(x, dtype=float)
    boundary = spec.boundary
    points = boundary.points
    fibers = spec.fiber_vectors
    d = spec.distribution.d_values
    i, j = boundary.facets.T
    rings = np.stack([points[j], points[i], points[i] + fibers[i], points[j] + fibers[j]], axis=1)
    hits = np.flatnonzero(shapely.intersects_xy(shapely.polygons(rings), x[0], x[1]))
    tol = 1e-9
    for facet in hits:
        a, b = boundary.facets[facet]
        sigma, tau = _invert_strip(points[a], points[b], fibers[a], fibers[b], x)
        if -tol <= sigma <= 1.0 + tol and -tol <= tau <= 1.0 + tol:
            sigma = min(max(sigma, 0.0), 1.0)
            tau = min(max(tau, 0.0), 1.0)
            return float(tau * spec.epsilon * ((1.0 - sigma) * d[a] + sigma * d[b]))
    raise OutsideLayer(f"point {x.tolist()} is not inside the insulating layer")


def check_bilipschitz(
    domain: PolygonalDomain,
    transversal: TransversalProfile,
    distribution: DistributionProfile,
    epsilon_max: float,
    rel_tol: float = 1e-3,
) -> float:
    """
    Largest epsilon <= epsilon_max for which the extrusion is injective (bisection)

    Returns 0 when even a vanishing epsilon fails.
    """
    if distribution.transversal is not transversal:
        raise InvalidDomain("distribution was built on a different transversal field")

    def injective(epsilon: float) -> bool:
        try:
            extrude_layer(domain, LayerSpec(epsilon, distribution))
            return True
        except SelfIntersection:
            return False

    if injective(epsilon_max):
        return float(epsilon_max)
    lo, hi = 0.0, float(epsilon_max)
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if injective(mid):
            lo = mid
        else:
            hi = mid
        if lo == 0.0 and hi < 1e-12 * epsilon_max:
            logger.warning("Extrusion is not injective for any positive epsilon")
            return 0.0
    logger.info(f"✓ Injectivity certified up to epsilon0 ~ {lo:.6g}")
    return lo


__all__ = [
    "BoundaryLabel",
    "TransversalMode",
    "Segment",
    "Projection",
    "PolygonalDomain",
    "InsulatedBoundary",
    "TransversalProfile",
    "DistributionProfile",
    "LayerSpec",
    "LayerGrid",
    "closest_point_projection",
    "signed_distance",
    "signed_distance_gradient",
    "build_transversal",
    "extrude_layer",
    "transversal_distance",
    "check_bilipschitz",
    "facet_gauss",
    "subdivide",
]
