"""
Triangle meshes of the body and of the insulated body
Constrained quality Delaunay meshing of the polygon and structured
extrusion of the insulating layer glued onto it
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Optional

import numpy as np
import shapely
import triangle

from .errors import MeshFailure
from .geometry import (
    BoundaryLabel,
    InsulatedBoundary,
    LayerSpec,
    PolygonalDomain,
    cross2,
    extrude_layer,
    signed_area,
)

logger = logging.getLogger(__name__)

MIN_ANGLE_DEG = 20.0
MAX_EDGE_FACTOR = 1.5


class FacetLabel(IntEnum):
    """Boundary facet labels, stored as cell data in mesh exports"""

    INSULATED = 1
    DIRICHLET = 2
    NEUMANN = 3
    IEPS = 4
    ARTIFICIAL = 5

    @classmethod
    def from_boundary(cls, label: BoundaryLabel) -> "FacetLabel":
        return {
            BoundaryLabel.INSULATED: cls.INSULATED,
            BoundaryLabel.DIRICHLET: cls.DIRICHLET,
            BoundaryLabel.NEUMANN: cls.NEUMANN,
        }[label]


class Region(IntEnum):
    BODY = 0
    LAYER = 1


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """
    Conforming P1 mesh of the body or of the body plus layer

    Triangles are counter-clockwise; boundary facets are oriented with the
    meshed region on their left. Body nodes come first, layer nodes after
    body_node_count.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    facets: np.ndarray
    facet_labels: np.ndarray
    regions: np.ndarray
    body_node_count: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "facets", np.asarray(self.facets, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "facet_labels", np.asarray(self.facet_labels, dtype=np.int64))
        object.__setattr__(self, "regions", np.asarray(self.regions, dtype=np.int64))
        self._validate()

    def _validate(self) -> None:
        if np.any(self.areas <= 0.0):
            raise MeshFailure(f"{int(np.sum(self.areas <= 0.0))} triangles have non-positive area")
        edges, counts = np.unique(self._sorted_edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshFailure("mesh is not conforming: an edge is shared by more than two triangles")
        boundary = edges[counts == 1]
        facets = np.unique(np.sort(self.facets, axis=1), axis=0)
        if len(facets) != len(self.facets) or not np.array_equal(boundary, facets):
            raise MeshFailure("boundary facets do not cover the mesh boundary exactly")

    # ------------------------------------------------------------------
    # measures
    # ------------------------------------------------------------------

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def _sorted_edges(self) -> np.ndarray:
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(edges, axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        return np.unique(self._sorted_edges, axis=0)

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        p = self.nodes[self.facets]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def angles(self, region: Optional[Region] = None) -> np.ndarray:
        """Interior angles in degrees, shape (triangles, 3)"""
        tris = self.triangles if region is None else self.triangles[self.regions == region]
        p = self.nodes[tris]
        result = np.empty((len(tris), 3))
        for corner in range(3):
            a = p[:, (corner + 1) % 3] - p[:, corner]
            b = p[:, (corner + 2) % 3] - p[:, corner]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            result[:, corner] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
        return result

    def min_angle(self, region: Optional[Region] = Region.BODY) -> float:
        return float(self.angles(region).min())

    def max_edge(self, region: Optional[Region] = Region.BODY) -> float:
        tris = self.triangles if region is None else self.triangles[self.regions == region]
        p = self.nodes[tris]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return float(lengths.max())

    def region_area(self, region: Region) -> float:
        return float(self.areas[self.regions == region].sum())

    @property
    def has_layer(self) -> bool:
        return bool(np.any(self.regions == Region.LAYER))

    @property
    def euler_characteristic(self) -> int:
        return self.node_count - len(self.edges) + len(self.triangles)

    # ------------------------------------------------------------------
    # labeled boundary access
    # ------------------------------------------------------------------

    def facets_with(self, label: FacetLabel) -> np.ndarray:
        return self.facets[self.facet_labels == label]

    def nodes_with(self, label: FacetLabel) -> np.ndarray:
        return np.unique(self.facets_with(label))

    def has_label(self, label: FacetLabel) -> bool:
        return bool(np.any(self.facet_labels == label))

    def label_length(self, label: FacetLabel) -> float:
        return float(self.facet_lengths[self.facet_labels == label].sum())

    def facet_counts(self) -> dict[str, int]:
        return {label.name: int(np.sum(self.facet_labels == label)) for label in FacetLabel}

    def insulated_boundary(self) -> InsulatedBoundary:
        """Gamma_I of the body mesh as a polyline, local nodes mapped to mesh nodes"""
        facets = self.facets_with(FacetLabel.INSULATED)
        if len(facets) == 0:
            raise MeshFailure("mesh has no insulated facets")
        node_ids, local = np.unique(facets, return_inverse=True)
        return InsulatedBoundary(self.nodes[node_ids], local.reshape(-1, 2), node_ids=node_ids)

    def stats(self) -> dict[str, float | int]:
        stats: dict[str, float | int] = {
            "nodes": self.node_count,
            "triangles": len(self.triangles),
            "body_triangles": int(np.sum(self.regions == Region.BODY)),
            "layer_triangles": int(np.sum(self.regions == Region.LAYER)),
            "min_angle_deg": self.min_angle(Region.BODY),
            "max_edge": self.max_edge(Region.BODY),
            "body_area": self.region_area(Region.BODY),
            "layer_area": self.region_area(Region.LAYER),
            "euler_characteristic": self.euler_characteristic,
        }
        for name, count in self.facet_counts().items():
            stats[f"facets_{name.lower()}"] = count
        return stats


def _orient_facets(triangles: np.ndarray, facets: np.ndarray) -> np.ndarray:
    """Flip facets so that each matches a directed triangle edge (region on the left)"""
    directed = {}
    for tri in triangles:
        for k in range(3):
            directed[(int(tri[k]), int(tri[(k + 1) % 3]))] = True
    oriented = facets.copy()
    for index, (a, b) in enumerate(facets):
        if (int(a), int(b)) not in directed:
            oriented[index] = (b, a)
    return oriented


def mesh_body(domain: PolygonalDomain, h_target: float) -> TriangleMesh:
    """
    Constrained quality Delaunay mesh of the body

    Args:
        domain: the body
        h_target: target edge length

    Returns:
        TriangleMesh with labeled boundary facets and body region tags

    Raises:
        MeshFailure: if the angle or edge length bound is not met
    """
    if not h_target > 0.0:
        raise MeshFailure(f"h_target must be positive, got {h_target}")

    points, edges, labels = domain.boundary_polyline(h_target)
    markers = np.array([FacetLabel.from_boundary(label).value for label in labels], dtype=np.int32)
    data = {
        "vertices": points,
        "segments": edges.astype(np.int32),
        "segment_markers": markers[:, None],
    }
    areas = [signed_area(domain.vertices[loop]) for loop in domain.loops]
    outer = int(np.argmax(np.abs(areas)))
    holes = [
        shapely.Polygon(domain.vertices[loop]).representative_point().coords[0]
        for index, loop in enumerate(domain.loops)
        if index != outer
    ]
    if holes:
        data["holes"] = np.asarray(holes)

    # Triangle reads no exponent in the switch string
    max_area = np.format_float_positional(0.2 * h_target * h_target, trim="-")
    try:
        result = triangle.triangulate(data, f"pq{MIN_ANGLE_DEG:g}a{max_area}")
    except Exception as e:
        raise MeshFailure(f"triangulation failed: {e}")

    nodes = result["vertices"]
    triangles = result["triangles"].astype(np.int64)
    p = nodes[triangles]
    flipped = cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) < 0.0
    triangles[flipped] = triangles[flipped][:, [0, 2, 1]]

    facets = _orient_facets(triangles, result["segments"].astype(np.int64))
    facet_labels = result["segment_markers"].ravel().astype(np.int64)
    mesh = TriangleMesh(
        nodes=nodes,
        triangles=triangles,
        facets=facets,
        facet_labels=facet_labels,
        regions=np.full(len(triangles), Region.BODY, dtype=np.int64),
        body_node_count=len(nodes),
    )

    min_angle = mesh.min_angle()
    max_edge = mesh.max_edge()
    if min_angle < MIN_ANGLE_DEG - 1e-6:
        raise MeshFailure(f"minimum angle {min_angle:.3f} deg below {MIN_ANGLE_DEG} deg", min_angle=min_angle)
    if max_edge > MAX_EDGE_FACTOR * h_target:
        raise MeshFailure(f"maximum edge {max_edge:.4g} exceeds {MAX_EDGE_FACTOR} h", max_edge=max_edge)

    logger.info(
        f"✓ Body mesh: {mesh.node_count} nodes, {len(triangles)} triangles, "
        f"min angle {min_angle:.2f} deg, max edge {max_edge:.4g}"
    )
    return mesh


def mesh_thick(
    domain: PolygonalDomain,
    spec: LayerSpec,
    h_target: float,
    n_layers: int = 2,
    body: Optional[TriangleMesh] = None,
) -> TriangleMesh:
    """
    Mesh of the insulated body: the body mesh glued to the extruded layer

    The layer spec must be built on the Gamma_I polyline of the body mesh so
    that interface nodes are shared. Quads are split along their shorter
    diagonal; the outer row is labeled IEPS and side cuts ARTIFICIAL.

    Raises:
        SelfIntersection: propagated from extrude_layer
        MeshFailure: if the layer spec does not sit on the body mesh
    """
    body = body if body is not None else mesh_body(domain, h_target)
    boundary = spec.boundary
    if boundary.node_ids is None or boundary.node_ids.max() >= body.node_count:
        raise MeshFailure("layer spec is not built on the body mesh Gamma_I")
    if not np.allclose(body.nodes[boundary.node_ids], boundary.points, rtol=0.0, atol=1e-12):
        raise MeshFailure("layer spec Gamma_I nodes do not match the body mesh")

    grid = extrude_layer(domain, spec, n_layers)
    nb = boundary.node_count
    mapping = np.concatenate([boundary.node_ids, body.node_count + np.arange(n_layers * nb)])

    layer_triangles = mapping[grid.triangles()]
    keep = body.facet_labels != FacetLabel.INSULATED
    outer = mapping[grid.outer_facets()]
    sides = mapping[grid.side_facets()]

    mesh = TriangleMesh(
        nodes=np.concatenate([body.nodes, grid.points[1:].reshape(-1, 2)]),
        triangles=np.concatenate([body.triangles, layer_triangles]),
        facets=np.concatenate([body.facets[keep], outer, sides]),
        facet_labels=np.concatenate([
            body.facet_labels[keep],
            np.full(len(outer), FacetLabel.IEPS, dtype=np.int64),
            np.full(len(sides), FacetLabel.ARTIFICIAL, dtype=np.int64),
        ]),
        regions=np.concatenate([body.regions, np.full(len(layer_triangles), Region.LAYER, dtype=np.int64)]),
        body_node_count=body.node_count,
    )
    logger.info(
        f"✓ Thick mesh at epsilon={spec.epsilon:.6g}: {len(layer_triangles)} layer triangles, "
        f"layer area {mesh.region_area(Region.LAYER):.6g}"
    )
    return mesh


__all__ = [
    "FacetLabel",
    "Region",
    "TriangleMesh",
    "mesh_body",
    "mesh_thick",
]
