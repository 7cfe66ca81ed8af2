"""
P1 finite element assembly and sparse linear algebra
Stiffness, mass, load and variable-coefficient boundary terms on TriangleMesh,
Dirichlet elimination and the Jacobi-preconditioned CG solver
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, factorized, spsolve

from .errors import NegativeWeight, NoConvergence, SingularSystem
from .geometry import cross2, facet_gauss
from .meshing import FacetLabel, Region, TriangleMesh

logger = logging.getLogger(__name__)

Field = Union[Callable[[np.ndarray, np.ndarray], np.ndarray], float]
RobinQuadrature = Literal["gauss", "lumped"]


def evaluate_field(func: Field, x, y) -> np.ndarray:
    """Evaluate an expression, callable or constant on coordinate arrays"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if callable(func):
        return np.broadcast_to(np.asarray(func(x, y), dtype=float), np.broadcast(x, y).shape)
    return np.full(np.broadcast(x, y).shape, float(func))


def interpolate(mesh: TriangleMesh, func: Field) -> np.ndarray:
    """Nodal interpolant of a field"""
    return evaluate_field(func, mesh.nodes[:, 0], mesh.nodes[:, 1]).copy()


# ============================================================================
# Quadrature
# ============================================================================

def triangle_rule(order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle: barycentric points (q, 3), weights summing to 1/2"""
    nodes, weights = facet_gauss(order)
    xi, eta = np.meshgrid(nodes, nodes, indexing="ij")
    wx, wy = np.meshgrid(weights, weights, indexing="ij")
    x = xi.ravel()
    y = (eta * (1.0 - xi)).ravel()
    w = (wx * wy * (1.0 - xi)).ravel()
    return np.stack([1.0 - x - y, x, y], axis=1), w


def integrate_triangles(corners: np.ndarray, func: Callable, order: int = 4) -> float:
    """Integral of func(x, y) over the union of triangles given by corners (T, 3, 2)"""
    bary, weights = triangle_rule(order)
    points = np.einsum("qk,tkd->tqd", bary, corners)
    jac = np.abs(cross2(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]))
    values = evaluate_field(func, points[..., 0], points[..., 1])
    return float(np.sum(jac[:, None] * weights[None, :] * values))


def integrate_facets(ends: np.ndarray, func: Callable, order: int = 2) -> float:
    """Integral of func(x, y) over segments given by their endpoints (F, 2, 2)"""
    s, w = facet_gauss(order)
    points = ends[:, None, 0, :] * (1.0 - s)[None, :, None] + ends[:, None, 1, :] * s[None, :, None]
    lengths = np.linalg.norm(ends[:, 1] - ends[:, 0], axis=1)
    values = evaluate_field(func, points[..., 0], points[..., 1])
    return float(np.sum(lengths[:, None] * w[None, :] * values))


# ============================================================================
# Assembly
# ============================================================================

def triangle_gradients(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Constant gradients of the three hat functions of CCW triangles (T, 3, 2), and their areas"""
    area = 0.5 * cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    # grad phi_k = rot90(p_{k+2} - p_{k+1}) / (2 area)
    edges = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)
    grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1) / (2.0 * area[:, None, None])
    return grads, area


def p1_gradients(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    return triangle_gradients(mesh.nodes[mesh.triangles])


def _triangle_coefficients(mesh: TriangleMesh, coefficient) -> np.ndarray:
    if isinstance(coefficient, Mapping):
        values = np.zeros(len(mesh.triangles))
        for region, value in coefficient.items():
            values[mesh.regions == Region(region)] = float(value)
        return values
    return np.full(len(mesh.triangles), float(coefficient))


def assemble_stiffness(mesh: TriangleMesh, coefficient: Union[float, Mapping[Region, float]] = 1.0) -> sp.csr_matrix:
    """P1 stiffness with a constant coefficient per region (lambda on Body, epsilon on Layer)"""
    grads, area = p1_gradients(mesh)
    coef = _triangle_coefficients(mesh, coefficient)
    local = np.einsum("tid,tjd->tij", grads, grads) * (coef * area)[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1)
    cols = np.tile(mesh.triangles, (1, 3))
    n = mesh.node_count
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def assemble_mass(mesh: TriangleMesh, region: Optional[Region] = None) -> sp.csr_matrix:
    """Consistent P1 mass matrix over one region or the whole mesh"""
    mask = np.ones(len(mesh.triangles), dtype=bool) if region is None else mesh.regions == region
    tris = mesh.triangles[mask]
    area = mesh.areas[mask]
    reference = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = area[:, None, None] * reference[None, :, :]
    rows = np.repeat(tris, 3, axis=1)
    cols = np.tile(tris, (1, 3))
    n = mesh.node_count
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def assemble_load(mesh: TriangleMesh, func: Field, region: Optional[Region] = Region.BODY) -> np.ndarray:
    """(f, phi_i) by the edge-midpoint rule, exact for quadratic integrands"""
    mask = np.ones(len(mesh.triangles), dtype=bool) if region is None else mesh.regions == region
    tris = mesh.triangles[mask]
    area = mesh.areas[mask]
    p = mesh.nodes[tris]
    # midpoint opposite to vertex k
    mids = 0.5 * (np.roll(p, -1, axis=1) + np.roll(p, -2, axis=1))
    fm = evaluate_field(func, mids[..., 0], mids[..., 1])
    # phi_k is 1/2 at the two midpoints adjacent to k
    local = (area / 6.0)[:, None] * (fm.sum(axis=1)[:, None] - fm)
    load = np.zeros(mesh.node_count)
    np.add.at(load, tris, local)
    return load


def _nodal_weights(mesh: TriangleMesh, weight) -> np.ndarray:
    weight = np.asarray(weight, dtype=float)
    if weight.ndim == 0:
        return np.full(mesh.node_count, float(weight))
    if weight.shape != (mesh.node_count,):
        raise ValueError("boundary weight must be a scalar or one value per mesh node")
    return weight


def assemble_boundary_robin(
    mesh: TriangleMesh,
    label: FacetLabel,
    weight=1.0,
    u_inf: Optional[np.ndarray] = None,
    quadrature: RobinQuadrature = "gauss",
) -> tuple[sp.csr_matrix, np.ndarray]:
    """
    Weighted boundary mass M_w and load M_w u_inf on the facets with a label

    Args:
        mesh: the mesh
        label: facet label to integrate over
        weight: scalar or nodal values, linear along each facet
        u_inf: nodal ambient temperature (zero load when None)
        quadrature: exact 2-point Gauss, or nodal trapezoid lumping

    Raises:
        NegativeWeight: if the weight is negative at a labeled facet node
    """
    facets = mesh.facets_with(label)
    n = mesh.node_count
    w = _nodal_weights(mesh, weight)
    if len(facets) and np.any(w[facets] < 0.0):
        raise NegativeWeight(
            f"Robin weight is negative on {FacetLabel(label).name} facets",
            minimum=float(w[facets].min()),
        )
    p = mesh.nodes[facets]
    lengths = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    if quadrature == "lumped":
        diag = np.zeros(n)
        np.add.at(diag, facets, 0.5 * lengths[:, None] * w[facets])
        matrix = sp.diags(diag).tocsr()
    else:
        s, gw = facet_gauss(2)
        phi = np.stack([1.0 - s, s], axis=1)  # (q, 2)
        wq = w[facets] @ phi.T  # (F, q)
        local = np.einsum("fq,q,qa,qb->fab", wq * lengths[:, None], gw, phi, phi)
        rows = np.repeat(facets, 2, axis=1)
        cols = np.tile(facets, (1, 2))
        matrix = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()

    load = matrix @ u_inf if u_inf is not None else np.zeros(n)
    return matrix, load


def assemble_neumann(mesh: TriangleMesh, label: FacetLabel, func: Field) -> np.ndarray:
    """<g, phi_i> over the labeled facets by 2-point Gauss"""
    facets = mesh.facets_with(label)
    load = np.zeros(mesh.node_count)
    if len(facets) == 0:
        return load
    s, gw = facet_gauss(2)
    p = mesh.nodes[facets]
    lengths = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    points = p[:, None, 0, :] * (1.0 - s)[None, :, None] + p[:, None, 1, :] * s[None, :, None]
    g = evaluate_field(func, points[..., 0], points[..., 1])
    phi = np.stack([1.0 - s, s], axis=1)
    local = np.einsum("fq,q,qa->fa", g * lengths[:, None], gw, phi)
    np.add.at(load, facets, local)
    return load


# ============================================================================
# Linear systems
# ============================================================================

@dataclass
class SparseSystem:
    """Symmetric sparse system with optional Dirichlet constraints"""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def residual(self, u: np.ndarray) -> float:
        norm = np.linalg.norm(self.rhs)
        r = np.linalg.norm(self.matrix @ u - self.rhs)
        return float(r / norm) if norm > 0.0 else float(r)


def apply_dirichlet(system: SparseSystem, nodes, values) -> SparseSystem:
    """
    Symmetric elimination of prescribed nodal values

    rhs <- rhs - A g, constrained rows and columns replaced by the identity,
    constrained rhs entries set to the prescribed values.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), nodes.shape).copy()
    n = system.size
    lift = np.zeros(n)
    lift[nodes] = values
    free = np.ones(n)
    free[nodes] = 0.0
    keep = sp.diags(free)
    matrix = (keep @ system.matrix @ keep + sp.diags(1.0 - free)).tocsr()
    rhs = system.rhs - system.matrix @ lift
    rhs[nodes] = values
    return SparseSystem(matrix, rhs, nodes, values)


def solve_cg(
    system: SparseSystem,
    rel_tol: float = 1e-10,
    max_iter: Optional[int] = None,
    method: Literal["cg", "direct"] = "cg",
) -> np.ndarray:
    """
    Solve an SPD system by Jacobi-preconditioned CG (or a sparse direct solve)

    Raises:
        NoConvergence: if the relative residual stays above rel_tol
        SingularSystem: if the direct factorization breaks down
    """
    n = system.size
    if not np.any(system.rhs):
        return np.zeros(n)
    if method == "direct":
        u = spsolve(system.matrix.tocsc(), system.rhs)
        if not np.all(np.isfinite(u)):
            raise SingularSystem("direct solve produced non-finite values")
        return u

    diagonal = system.matrix.diagonal()
    if np.any(diagonal <= 0.0):
        raise SingularSystem("matrix has non-positive diagonal entries")
    inverse = 1.0 / diagonal
    preconditioner = LinearOperator((n, n), matvec=lambda r: inverse * r, dtype=float)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    max_iter = max_iter if max_iter is not None else 20 * n
    u, info = cg(system.matrix, system.rhs, rtol=rel_tol, atol=0.0, maxiter=max_iter, M=preconditioner, callback=count)
    residual = system.residual(u)
    logger.debug(f"CG finished: n={n}, iterations={iterations}, residual={residual:.3e}")
    if info != 0 or residual > 10.0 * rel_tol:
        raise NoConvergence(
            f"CG did not reach rel_tol={rel_tol:g} in {iterations} iterations (residual {residual:.3e})",
            residual=residual,
            iterations=iterations,
        )
    return u


# ============================================================================
# Norms and constants
# ============================================================================

def l2_norm_sq(mesh: TriangleMesh, u: np.ndarray, region: Optional[Region] = None) -> float:
    return float(u @ (assemble_mass(mesh, region) @ u))


def h1_seminorm_sq(mesh: TriangleMesh, u: np.ndarray, region: Optional[Region] = None) -> float:
    coefficient = 1.0 if region is None else {region: 1.0}
    return float(u @ (assemble_stiffness(mesh, coefficient) @ u))


def boundary_l2_sq(mesh: TriangleMesh, u: np.ndarray, label: FacetLabel) -> float:
    matrix, _ = assemble_boundary_robin(mesh, label)
    return float(u @ (matrix @ u))


def friedrichs_constant(
    mesh: TriangleMesh,
    weight: float = 1.0,
    label: FacetLabel = FacetLabel.INSULATED,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> float:
    """
    Smallest C with ||v||^2 <= C (||grad v||^2 + w ||v||^2_Gamma) on the discrete space

    Largest eigenvalue of M v = C (K + w B) v by power iteration on (K + w B)^{-1} M.
    """
    stiffness = assemble_stiffness(mesh, {Region.BODY: 1.0})
    mass = assemble_mass(mesh, Region.BODY)
    boundary, _ = assemble_boundary_robin(mesh, label, weight)
    operator = (stiffness + boundary).tocsc()
    body = np.zeros(mesh.node_count, dtype=bool)
    body[np.unique(mesh.triangles[mesh.regions == Region.BODY])] = True
    operator = operator[body][:, body]
    mass = mass.tocsr()[body][:, body]
    try:
        solve = factorized(operator)
    except RuntimeError as e:
        raise SingularSystem(f"boundary weight gives no coercivity: {e}")

    v = np.ones(operator.shape[0])
    estimate = 0.0
    for iteration in range(max_iter):
        w = solve(mass @ v)
        rayleigh = float(v @ (mass @ v)) / float(v @ (operator @ v))
        v = w / np.linalg.norm(w)
        if abs(rayleigh - estimate) <= tol * abs(rayleigh):
            estimate = rayleigh
            break
        estimate = rayleigh
    if not np.isfinite(estimate) or estimate <= 0.0:
        raise SingularSystem("power iteration did not produce a positive constant")
    logger.debug(f"Friedrichs constant {estimate:.6g} after {iteration + 1} power iterations")
    return estimate


__all__ = [
    "SparseSystem",
    "evaluate_field",
    "interpolate",
    "triangle_rule",
    "integrate_triangles",
    "integrate_facets",
    "triangle_gradients",
    "p1_gradients",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_load",
    "assemble_boundary_robin",
    "assemble_neumann",
    "apply_dirichlet",
    "solve_cg",
    "l2_norm_sq",
    "h1_seminorm_sq",
    "boundary_l2_sq",
    "friedrichs_constant",
]
