"""
Heat loss models
Reduced model with the variable Robin coefficient beta / (1 + beta d_tilde)
on Gamma_I, and the thick model with the insulating layer meshed explicitly
"""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, MeshFailure, SingularSystem
from .fem import (
    RobinQuadrature,
    SparseSystem,
    apply_dirichlet,
    assemble_boundary_robin,
    assemble_load,
    assemble_neumann,
    assemble_stiffness,
    interpolate,
    p1_gradients,
    solve_cg,
)
from .geometry import DistributionProfile, LayerSpec
from .meshing import FacetLabel, Region, TriangleMesh
from .scalar_expr import Expr, constant

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemConfig:
    """Physical data: conductivity, heat transfer coefficient, fields and material budget"""

    lam: float
    beta: float
    f: Expr
    g: Expr
    u_d: Expr
    u_inf: Expr
    m: float

    def __post_init__(self):
        for name in ("lam", "beta", "m"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ConfigError(f"physics.{name}: must be positive, got {value}")

    @classmethod
    def simple(cls, lam=1.0, beta=1.0, m=1.0, f=0.0, g=0.0, u_d=0.0, u_inf=0.0) -> "ProblemConfig":
        """Config with constant fields (or already parsed expressions)"""

        def field(value):
            return value if isinstance(value, Expr) else constant(value)

        return cls(lam, beta, field(f), field(g), field(u_d), field(u_inf), m)


@dataclass(frozen=True)
class EnergyBreakdown:
    """Terms of the heat loss functional; the layer term is zero for the reduced model"""

    grad_body: float
    grad_layer: float
    robin_boundary: float
    source: float
    neumann: float

    @property
    def total(self) -> float:
        return self.grad_body + self.grad_layer + self.robin_boundary - self.source - self.neumann

    def as_row(self) -> dict[str, float]:
        row = asdict(self)
        row["total"] = self.total
        return row


@dataclass
class SolveReport:
    """Nodal solution with its energy breakdown"""

    u: np.ndarray
    energy: EnergyBreakdown
    system: SparseSystem


# ============================================================================
# Reduced model
# ============================================================================

def check_distribution_on_mesh(mesh: TriangleMesh, distribution: DistributionProfile) -> np.ndarray:
    """Mesh node ids of the distribution's Gamma_I nodes"""
    node_ids = distribution.boundary.node_ids
    if node_ids is None or len(node_ids) and node_ids.max() >= mesh.node_count:
        raise MeshFailure("distribution is not defined on the mesh Gamma_I nodes")
    if not np.allclose(mesh.nodes[node_ids], distribution.boundary.points, rtol=0.0, atol=1e-12):
        raise MeshFailure("distribution Gamma_I nodes do not match the mesh")
    return node_ids


def robin_weight(mesh: TriangleMesh, beta: float, distribution: DistributionProfile) -> np.ndarray:
    """Nodal reduced Robin coefficient beta / (1 + beta d_tilde) on Gamma_I, zero elsewhere"""
    node_ids = check_distribution_on_mesh(mesh, distribution)
    weight = np.zeros(mesh.node_count)
    weight[node_ids] = beta / (1.0 + beta * distribution.d_tilde)
    return weight


@dataclass
class _ReducedForms:
    stiffness: sp.csr_matrix
    robin: sp.csr_matrix
    load: np.ndarray
    neumann: np.ndarray
    u_inf: np.ndarray


def _reduced_forms(
    mesh: TriangleMesh,
    config: ProblemConfig,
    distribution: DistributionProfile,
    quadrature: RobinQuadrature,
) -> _ReducedForms:
    weight = robin_weight(mesh, config.beta, distribution)
    robin, _ = assemble_boundary_robin(mesh, FacetLabel.INSULATED, weight, quadrature=quadrature)
    return _ReducedForms(
        stiffness=assemble_stiffness(mesh, config.lam),
        robin=robin,
        load=assemble_load(mesh, config.f),
        neumann=assemble_neumann(mesh, FacetLabel.NEUMANN, config.g),
        u_inf=interpolate(mesh, config.u_inf),
    )


def _breakdown(forms, u: np.ndarray, layer: Optional[sp.csr_matrix] = None) -> EnergyBreakdown:
    gap = u - forms.u_inf
    return EnergyBreakdown(
        grad_body=0.5 * float(u @ (forms.stiffness @ u)),
        grad_layer=0.0 if layer is None else 0.5 * float(u @ (layer @ u)),
        robin_boundary=0.5 * float(gap @ (forms.robin @ gap)),
        source=float(forms.load @ u),
        neumann=float(forms.neumann @ u),
    )


def _solve(mesh: TriangleMesh, config: ProblemConfig, matrix, rhs, rel_tol, method) -> tuple[np.ndarray, SparseSystem]:
    dirichlet = mesh.nodes_with(FacetLabel.DIRICHLET)
    system = SparseSystem(matrix.tocsr(), rhs)
    if len(dirichlet):
        values = config.u_d(mesh.nodes[dirichlet, 0], mesh.nodes[dirichlet, 1])
        system = apply_dirichlet(system, dirichlet, values)
    u = solve_cg(system, rel_tol=rel_tol, method=method)
    return u, system


def reduced_energy(
    mesh: TriangleMesh,
    config: ProblemConfig,
    distribution: DistributionProfile,
    u: np.ndarray,
    quadrature: RobinQuadrature = "gauss",
) -> EnergyBreakdown:
    """Discrete reduced heat loss of an arbitrary nodal field"""
    return _breakdown(_reduced_forms(mesh, config, distribution, quadrature), u)


def reduced_energy_function(
    mesh: TriangleMesh,
    config: ProblemConfig,
    distribution: DistributionProfile,
    quadrature: RobinQuadrature = "gauss",
) -> Callable[[np.ndarray], float]:
    """Total reduced energy as a function of the nodal field, forms assembled once"""
    forms = _reduced_forms(mesh, config, distribution, quadrature)
    return lambda u: _breakdown(forms, u).total


def solve_reduced(
    mesh: TriangleMesh,
    config: ProblemConfig,
    distribution: DistributionProfile,
    quadrature: RobinQuadrature = "gauss",
    rel_tol: float = 1e-10,
    method: str = "cg",
) -> SolveReport:
    """
    Minimize the reduced heat loss on a body mesh

    Raises:
        SingularSystem: if there is no Dirichlet part and the Robin weight vanishes
    """
    forms = _reduced_forms(mesh, config, distribution, quadrature)
    if not mesh.has_label(FacetLabel.DIRICHLET) and not np.any(forms.robin.diagonal() > 0.0):
        raise SingularSystem("no Dirichlet part and a vanishing Robin weight")
    matrix = forms.stiffness + forms.robin
    rhs = forms.load + forms.neumann + forms.robin @ forms.u_inf
    u, system = _solve(mesh, config, matrix, rhs, rel_tol, method)
    energy = _breakdown(forms, u)
    logger.debug(f"Reduced solve: E={energy.total:.12g}")
    return SolveReport(u, energy, system)


def convective_loss(
    mesh: TriangleMesh,
    config: ProblemConfig,
    distribution: DistributionProfile,
    u: np.ndarray,
    quadrature: RobinQuadrature = "gauss",
) -> float:
    """Net convective heat loss (beta / (1 + beta d_tilde) (u - u_inf), 1) over Gamma_I"""
    forms = _reduced_forms(mesh, config, distribution, quadrature)
    return float(np.sum(forms.robin @ (u - forms.u_inf)))


# ============================================================================
# Thick model
# ============================================================================

def _thick_forms(mesh: TriangleMesh, config: ProblemConfig, spec: LayerSpec) -> tuple[_ReducedForms, sp.csr_matrix]:
    if not mesh.has_layer:
        raise MeshFailure("thick model needs a mesh with layer triangles")
    robin, _ = assemble_boundary_robin(mesh, FacetLabel.IEPS, config.beta)
    forms = _ReducedForms(
        stiffness=assemble_stiffness(mesh, {Region.BODY: config.lam}),
        robin=robin,
        load=assemble_load(mesh, config.f, Region.BODY),
        neumann=assemble_neumann(mesh, FacetLabel.NEUMANN, config.g),
        u_inf=interpolate(mesh, config.u_inf),
    )
    layer = assemble_stiffness(mesh, {Region.LAYER: spec.epsilon})
    return forms, layer


def thick_energy(mesh: TriangleMesh, config: ProblemConfig, spec: LayerSpec, u: np.ndarray) -> EnergyBreakdown:
    """Discrete thick-layer heat loss of an arbitrary nodal field"""
    forms, layer = _thick_forms(mesh, config, spec)
    return _breakdown(forms, u, layer)


def thick_energy_function(mesh: TriangleMesh, config: ProblemConfig, spec: LayerSpec) -> Callable[[np.ndarray], float]:
    forms, layer = _thick_forms(mesh, config, spec)
    return lambda u: _breakdown(forms, u, layer).total


def solve_thick(
    mesh: TriangleMesh,
    config: ProblemConfig,
    spec: LayerSpec,
    rel_tol: float = 1e-10,
    method: str = "cg",
) -> SolveReport:
    """
    Minimize the thick-layer heat loss on a mesh of body plus layer

    Artificial side cuts carry no boundary term.

    Raises:
        SingularSystem: if there is no Dirichlet part and no IEPS facet
    """
    forms, layer = _thick_forms(mesh, config, spec)
    if not mesh.has_label(FacetLabel.DIRICHLET) and not mesh.has_label(FacetLabel.IEPS):
        raise SingularSystem("no Dirichlet part and no outer layer boundary")
    matrix = forms.stiffness + layer + forms.robin
    rhs = forms.load + forms.neumann + forms.robin @ forms.u_inf
    u, system = _solve(mesh, config, matrix, rhs, rel_tol, method)
    energy = _breakdown(forms, u, layer)
    logger.debug(f"Thick solve at epsilon={spec.epsilon:.6g}: E={energy.total:.12g}")
    return SolveReport(u, energy, system)


def layer_rows(mesh: TriangleMesh, spec: LayerSpec) -> tuple[int, np.ndarray]:
    """Number of layer rows and the mesh node of grid node (row, j), shape (rows + 1, nb)"""
    boundary = spec.boundary
    nb = boundary.node_count
    extra = mesh.node_count - mesh.body_node_count
    if boundary.node_ids is None or extra <= 0 or extra % nb:
        raise MeshFailure("mesh layer does not match the layer spec")
    n_layers = extra // nb
    grid = np.concatenate([
        boundary.node_ids[None, :],
        mesh.body_node_count + np.arange(n_layers * nb).reshape(n_layers, nb),
    ])
    return n_layers, grid


def build_recovery_field(mesh: TriangleMesh, config: ProblemConfig, spec: LayerSpec, v: np.ndarray) -> np.ndarray:
    """
    Layer cut-off of a body field: v_eps = v_bar phi + u_inf (1 - phi)

    v_bar is v extended constant along fibers; phi drops linearly in the fiber
    coordinate from 1 on Gamma_I to 1 / (1 + beta d_tilde) on Gamma_I^eps.
    """
    n_layers, grid = layer_rows(mesh, spec)
    v = np.asarray(v, dtype=float)
    result = np.empty(mesh.node_count)
    result[: mesh.body_node_count] = v[: mesh.body_node_count]
    d_tilde = spec.distribution.d_tilde
    drop = config.beta * d_tilde / (1.0 + config.beta * d_tilde)
    v_bar = v[spec.boundary.node_ids]
    for row in range(1, n_layers + 1):
        nodes = grid[row]
        phi = 1.0 - (row / n_layers) * drop
        u_inf = config.u_inf(mesh.nodes[nodes, 0], mesh.nodes[nodes, 1])
        result[nodes] = v_bar * phi + u_inf * (1.0 - phi)
    return result


def transmission_jump(mesh: TriangleMesh, config: ProblemConfig, spec: LayerSpec, u: np.ndarray) -> np.ndarray:
    """Per-facet normal flux jump lambda du/dn (body side) - eps du/dn (layer side) across Gamma_I"""
    grads, _ = p1_gradients(mesh)
    gradient = np.einsum("tk,tkd->td", u[mesh.triangles], grads)
    owner = {}
    for index, tri in enumerate(mesh.triangles):
        for k in range(3):
            owner[(int(tri[k]), int(tri[(k + 1) % 3]))] = index
    boundary = spec.boundary
    facets = boundary.node_ids[boundary.facets]
    jumps = np.empty(len(facets))
    for index, (a, b) in enumerate(facets):
        body = owner[(int(a), int(b))]
        layer = owner[(int(b), int(a))]
        normal = boundary.normals[index]
        jumps[index] = config.lam * gradient[body] @ normal - spec.epsilon * gradient[layer] @ normal
    return jumps


# ============================================================================
# Minimizer certificate
# ============================================================================

@dataclass
class CertificateReport:
    passed: bool
    worst_decrease: float
    probes: int


def minimizer_certificate(
    energy: Callable[[np.ndarray], float],
    u: np.ndarray,
    nodes,
    step: float = 1e-4,
    tol: float = 1e-8,
) -> CertificateReport:
    """Perturb u by +-step along each nodal direction; no probe may lower the energy by more than tol"""
    base = energy(u)
    worst = 0.0
    probes = 0
    for node in np.asarray(nodes, dtype=np.int64):
        for sign in (1.0, -1.0):
            trial = u.copy()
            trial[node] += sign * step
            worst = min(worst, energy(trial) - base)
            probes += 1
    return CertificateReport(passed=worst >= -tol, worst_decrease=worst, probes=probes)


__all__ = [
    "ProblemConfig",
    "EnergyBreakdown",
    "SolveReport",
    "CertificateReport",
    "robin_weight",
    "reduced_energy",
    "reduced_energy_function",
    "solve_reduced",
    "convective_loss",
    "thick_energy",
    "thick_energy_function",
    "solve_thick",
    "layer_rows",
    "build_recovery_field",
    "transmission_jump",
    "minimizer_certificate",
]
