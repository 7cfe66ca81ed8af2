"""
Result files
CSV tables with fixed column order and legacy-VTK ASCII meshes and fields
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence

import meshio
import numpy as np

from .geometry import DistributionProfile
from .meshing import TriangleMesh

logger = logging.getLogger(__name__)

ENERGY_COLUMNS = (
    "model", "epsilon", "grad_body", "grad_layer", "robin_boundary", "source", "neumann", "total", "q_tot", "q_conv",
)
SWEEP_COLUMNS = (
    "epsilon", "energy_thick", "energy_reduced", "gap", "recovery_energy", "recovery_slack",
    "body_l2", "body_grad", "outer_trace_l2", "layer_grad_scaled", "transmission_jump",
)
ITERATION_COLUMNS = ("iteration", "c", "energy_after_distribution", "energy", "mass_residual")
POLYLINE_COLUMNS = ("chain", "arc_length", "x", "y", "d", "d_tilde")
VERIFY_COLUMNS = ("check", "passed", "value", "threshold", "detail")
LAYER_CHECK_COLUMNS = ("check", "epsilon", "lhs", "rhs", "gap", "rotation_bound", "stretch_remainder")
MESH_COLUMNS = (
    "mesh", "nodes", "triangles", "body_triangles", "layer_triangles", "min_angle_deg", "max_edge",
    "body_area", "layer_area", "euler_characteristic", "facets_insulated", "facets_dirichlet",
    "facets_neumann", "facets_ieps", "facets_artificial",
)


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


class CsvTable:
    """CSV file written row by row and flushed, so partial sweeps survive a failure"""

    def __init__(self, path: Path, columns: Sequence[str]):
        self.path = Path(path)
        self.columns = tuple(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(self.columns)
        self._handle.flush()

    def write(self, row: dict) -> None:
        self._writer.writerow([format_value(row.get(column)) for column in self.columns])
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "CsvTable":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    with CsvTable(path, columns) as table:
        for row in rows:
            table.write(row)
    logger.info(f"✓ Wrote {path}")
    return Path(path)


def write_vtk(path: Path, mesh: TriangleMesh, point_data: Optional[dict[str, np.ndarray]] = None) -> Path:
    """Mesh with region and facet labels as cell data, plus nodal fields"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points = np.column_stack([mesh.nodes, np.zeros(mesh.node_count)])
    cells = [("triangle", mesh.triangles), ("line", mesh.facets)]
    cell_data = {
        "region": [mesh.regions.astype(np.int32), np.full(len(mesh.facets), -1, dtype=np.int32)],
        "label": [np.zeros(len(mesh.triangles), dtype=np.int32), mesh.facet_labels.astype(np.int32)],
    }
    data = {name: np.asarray(values, dtype=float) for name, values in (point_data or {}).items()}
    meshio.write(path, meshio.Mesh(points, cells, point_data=data, cell_data=cell_data), file_format="vtk", binary=False)
    logger.info(f"✓ Wrote {path}")
    return path


def polyline_rows(distribution: DistributionProfile) -> list[dict]:
    """d and d_tilde along every Gamma_I chain, ordered by arc length"""
    boundary = distribution.boundary
    rows = []
    for chain_index, (nodes, closed) in enumerate(boundary.chains()):
        if closed:
            nodes = np.append(nodes, nodes[0])
        points = boundary.points[nodes]
        arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
        for node, s, point in zip(nodes, arc, points):
            rows.append({
                "chain": chain_index,
                "arc_length": float(s),
                "x": float(point[0]),
                "y": float(point[1]),
                "d": float(distribution.d_values[node]),
                "d_tilde": float(distribution.d_tilde[node]),
            })
    return rows
