"""
Layer diagnostics
Numerical checks of the change of variables through the insulating layer,
the vanishing-layer limit of layer integrals, the fiber Poincare inequality
and the uniform boundedness of thick solutions across an epsilon sweep
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .fem import (
    assemble_boundary_robin,
    assemble_mass,
    assemble_stiffness,
    evaluate_field,
    integrate_facets,
    integrate_triangles,
    triangle_gradients,
)
from .geometry import LayerSpec, cross2, extrude_layer, facet_gauss
from .meshing import FacetLabel, Region, TriangleMesh

logger = logging.getLogger(__name__)

EXACT_GAP = 1e-13


@dataclass
class TransformCheckReport:
    """Both sides of a layer identity per epsilon, with remainder estimates and the fitted rate"""

    name: str
    epsilons: list[float] = field(default_factory=list)
    lhs: list[float] = field(default_factory=list)
    rhs: list[float] = field(default_factory=list)
    remainders: dict[str, list[float]] = field(default_factory=dict)
    rate: Optional[float] = None
    rate_residual: Optional[float] = None

    @property
    def gaps(self) -> list[float]:
        return [abs(a - b) for a, b in zip(self.lhs, self.rhs)]

    @property
    def max_gap(self) -> float:
        return max(self.gaps, default=0.0)

    def rows(self) -> list[dict]:
        rows = []
        for index, epsilon in enumerate(self.epsilons):
            row = {
                "check": self.name,
                "epsilon": epsilon,
                "lhs": self.lhs[index],
                "rhs": self.rhs[index],
                "gap": self.gaps[index],
            }
            for key, values in self.remainders.items():
                row[key] = values[index]
            rows.append(row)
        return rows


def fit_rate(epsilons: Sequence[float], gaps: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    """Least-squares slope of log gap against log epsilon and the RMS fit residual"""
    eps = np.asarray(epsilons, dtype=float)
    gap = np.asarray(gaps, dtype=float)
    mask = gap > EXACT_GAP
    if mask.sum() < 2:
        return None, None
    x, y = np.log(eps[mask]), np.log(gap[mask])
    coeffs = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((np.polyval(coeffs, x) - y) ** 2)))
    return float(coeffs[0]), residual


# ============================================================================
# Fiber parametrization of the layer strips
# ============================================================================

@dataclass
class _StripSample:
    sigma: np.ndarray  # (q,)
    weights: np.ndarray  # (q,)
    feet: np.ndarray  # (F, q, 2) points s(sigma) on Gamma_I
    fibers: np.ndarray  # (F, q, 2) full fiber eps d_h k_h at s(sigma)
    d_tilde: np.ndarray  # (F, q) interpolated d_i (k_i . n), the normal thickness of the strip
    lengths: np.ndarray  # (F,)
    jac_rate: np.ndarray  # (F, q) d/dtau of det J


def _sample_strips(spec: LayerSpec, order: int) -> _StripSample:
    boundary = spec.boundary
    sigma, weights = facet_gauss(order)
    i, j = boundary.facets.T
    p, v = boundary.points, spec.fiber_vectors
    s = sigma[None, :, None]
    feet = (1.0 - s) * p[i][:, None, :] + s * p[j][:, None, :]
    fibers = (1.0 - s) * v[i][:, None, :] + s * v[j][:, None, :]
    dk = spec.distribution.d_values[:, None] * spec.transversal.node_vectors
    dk_h = (1.0 - s) * dk[i][:, None, :] + s * dk[j][:, None, :]
    d_tilde = np.einsum("fqd,fd->fq", dk_h, boundary.normals)
    jac_rate = cross2((v[j] - v[i])[:, None, :], fibers)
    return _StripSample(sigma, weights, feet, fibers, d_tilde, boundary.lengths, jac_rate)


def _strip_integral(spec: LayerSpec, func: Callable, order: int) -> float:
    """Integral over the layer in fiber coordinates with the exact bilinear Jacobian"""
    sample = _sample_strips(spec, order)
    tau, tau_w = facet_gauss(order)
    boundary = spec.boundary
    i, j = boundary.facets.T
    delta = boundary.points[j] - boundary.points[i]
    base = cross2(delta[:, None, :], sample.fibers)  # (F, q)
    total = 0.0
    for t, wt in zip(tau, tau_w):
        points = sample.feet + t * sample.fibers
        jac = np.abs(base + t * sample.jac_rate)
        values = func(points, sample.feet)
        total += wt * float(np.sum(sample.weights[None, :] * jac * values))
    return total


# ============================================================================
# Transformation formulas
# ============================================================================

def check_transformation_formula(
    spec: LayerSpec,
    v: Callable,
    epsilons: Optional[Sequence[float]] = None,
    variant: str = "volume",
    order: int = 4,
) -> TransformCheckReport:
    """
    Compare a layer integral with its fiber form without the curvature remainder

    volume:   int_Sigma v dx  vs  int_Gamma int_0^{eps d} v(s + t k) (k.n) dt ds
    boundary: int_{Gamma^eps} v ds  vs  int_Gamma v(s + eps d k) ds

    The left side is integrated on the triangulated layer, the right side by
    tensor Gauss quadrature along fibers. Reports the rotation bound of k and
    the facet stretch remainder r_eps = max |l_eps / l - 1| / sqrt(eps).
    """
    epsilons = list(epsilons) if epsilons is not None else [spec.epsilon]
    report = TransformCheckReport(name=f"transformation_{variant}")
    report.remainders = {"rotation_bound": [], "stretch_remainder": []}
    for epsilon in epsilons:
        layer = spec.with_epsilon(epsilon)
        grid = extrude_layer(None, layer, 1)
        sample = _sample_strips(layer, order)
        if variant == "volume":
            lhs = integrate_triangles(grid.flat_points[grid.triangles()], v, order)
            tau, tau_w = facet_gauss(order)
            rhs = 0.0
            for t, wt in zip(tau, tau_w):
                points = sample.feet + t * sample.fibers
                values = evaluate_field(v, points[..., 0], points[..., 1])
                integrand = values * epsilon * sample.d_tilde
                rhs += wt * float(np.sum(sample.lengths[:, None] * sample.weights[None, :] * integrand))
        elif variant == "boundary":
            lhs = integrate_facets(grid.flat_points[grid.outer_facets()], v, order)
            points = sample.feet + sample.fibers
            values = evaluate_field(v, points[..., 0], points[..., 1])
            rhs = float(np.sum(sample.lengths[:, None] * sample.weights[None, :] * values))
        else:
            raise ValueError(f"unknown variant {variant!r}")

        outer = grid.flat_points[grid.outer_facets()]
        outer_lengths = np.linalg.norm(outer[:, 1] - outer[:, 0], axis=1)
        stretch = float(np.max(np.abs(outer_lengths / layer.boundary.lengths - 1.0))) / np.sqrt(epsilon)
        report.epsilons.append(float(epsilon))
        report.lhs.append(lhs)
        report.rhs.append(rhs)
        report.remainders["rotation_bound"].append(layer.transversal.rotation_bound)
        report.remainders["stretch_remainder"].append(stretch)

    report.rate, report.rate_residual = fit_rate(report.epsilons, report.gaps)
    logger.debug(f"{report.name}: gaps={report.gaps}, rate={report.rate}")
    return report


def check_lebesgue_limit(
    spec: LayerSpec,
    epsilons: Sequence[float],
    a: Callable,
    v: Callable,
    p: float = 2.0,
    order: int = 4,
) -> TransformCheckReport:
    """
    (1/eps) int_Sigma a |v|^p against its limit int_Gamma d_tilde a |v|^p

    a is a function on Gamma_I extended constant along fibers.
    """
    if p < 1.0:
        raise ValueError("p must be at least 1")
    sample = _sample_strips(spec, order)
    a_feet = evaluate_field(a, sample.feet[..., 0], sample.feet[..., 1])
    v_feet = evaluate_field(v, sample.feet[..., 0], sample.feet[..., 1])
    target = float(np.sum(
        sample.lengths[:, None] * sample.weights[None, :] * sample.d_tilde * a_feet * np.abs(v_feet) ** p
    ))

    def integrand(points, feet):
        a_values = evaluate_field(a, feet[..., 0], feet[..., 1])
        v_values = evaluate_field(v, points[..., 0], points[..., 1])
        return a_values * np.abs(v_values) ** p

    report = TransformCheckReport(name="lebesgue_limit")
    for epsilon in epsilons:
        layer = spec.with_epsilon(epsilon)
        extrude_layer(None, layer, 1)
        report.epsilons.append(float(epsilon))
        report.lhs.append(_strip_integral(layer, integrand, order) / epsilon)
        report.rhs.append(target)
    report.rate, report.rate_residual = fit_rate(report.epsilons, report.gaps)
    return report


# ============================================================================
# Poincare inequality along fibers
# ============================================================================

@dataclass
class PoincareReport:
    lhs: float
    rhs: float
    trace_lhs: float
    trace_rhs: float
    denominator: float

    @property
    def passed(self) -> bool:
        return (
            self.lhs <= self.rhs * (1.0 + 1e-10) + 1e-14
            and self.trace_lhs <= self.trace_rhs * (1.0 + 1e-10) + 1e-14
        )


def check_poincare(spec: LayerSpec, values: np.ndarray, n_layers: int = 1, order: int = 4) -> PoincareReport:
    """
    Fiber Poincare inequality for a P1 field on the layer grid

    LHS = ||d^{-1/2} (v(s + eps d k) - v(s))||^2 on Gamma_I
    RHS = eps / (kappa - eps ||d||_inf R) ||grad v||^2 on the layer
    Trace variant: ||v(s + eps d k)||^2 <= 2 ||v||^2 + 2 ||d||_inf RHS on Gamma_I.

    values has shape (n_layers + 1, Gamma_I nodes), row 0 on Gamma_I.
    """
    values = np.asarray(values, dtype=float).reshape(n_layers + 1, -1)
    grid = extrude_layer(None, spec, n_layers)
    boundary = spec.boundary
    sigma, weights = facet_gauss(order)
    i, j = boundary.facets.T
    d = spec.distribution.d_values

    def along(row: np.ndarray) -> np.ndarray:
        return (1.0 - sigma)[None, :] * row[i][:, None] + sigma[None, :] * row[j][:, None]

    inner, outer = along(values[0]), along(values[-1])
    d_h = along(d)
    lengths = boundary.lengths[:, None] * weights[None, :]
    lhs = float(np.sum(lengths * (outer - inner) ** 2 / d_h))

    triangles = grid.triangles()
    grads, area = triangle_gradients(grid.flat_points[triangles])
    gradient = np.einsum("tk,tkd->td", values.ravel()[triangles], grads)
    dirichlet = float(np.sum(area * np.sum(gradient**2, axis=1)))

    d_max = spec.distribution.d_max
    denominator = spec.transversal.kappa - spec.epsilon * d_max * spec.transversal.rotation_bound
    rhs = spec.epsilon / denominator * dirichlet if denominator > 0.0 else np.inf
    trace_lhs = float(np.sum(lengths * outer**2))
    trace_rhs = 2.0 * float(np.sum(lengths * inner**2)) + 2.0 * d_max * rhs
    return PoincareReport(lhs, rhs, trace_lhs, trace_rhs, denominator)


def poincare_random_suite(
    spec: LayerSpec,
    samples: int,
    rng: np.random.Generator,
    n_layers: int = 2,
) -> list[PoincareReport]:
    """Poincare check on random nodal fields drawn from a seeded generator"""
    shape = (n_layers + 1, spec.boundary.node_count)
    return [check_poincare(spec, rng.standard_normal(shape), n_layers) for _ in range(samples)]


# ============================================================================
# Equi-coercivity
# ============================================================================

EQUICOERCIVITY_QUANTITIES = ("body_l2", "body_grad", "outer_trace_l2", "layer_grad_scaled")


@dataclass
class EquicoercivityReport:
    epsilons: list[float]
    quantities: dict[str, list[float]]
    factor: float = 2.0

    @property
    def medians(self) -> dict[str, float]:
        return {name: float(np.median(values)) for name, values in self.quantities.items()}

    @property
    def passed(self) -> bool:
        medians = self.medians
        return all(
            max(values) <= self.factor * medians[name] + 1e-14
            for name, values in self.quantities.items()
        )


def equicoercivity_quantities(mesh: TriangleMesh, epsilon: float, u: np.ndarray) -> dict[str, float]:
    outer, _ = assemble_boundary_robin(mesh, FacetLabel.IEPS)
    return {
        "body_l2": float(u @ (assemble_mass(mesh, Region.BODY) @ u)),
        "body_grad": float(u @ (assemble_stiffness(mesh, {Region.BODY: 1.0}) @ u)),
        "outer_trace_l2": float(u @ (outer @ u)),
        "layer_grad_scaled": float(u @ (assemble_stiffness(mesh, {Region.LAYER: epsilon}) @ u)),
    }


def equicoercivity_report(solves: Sequence[tuple[float, TriangleMesh, np.ndarray]], factor: float = 2.0) -> EquicoercivityReport:
    """Tabulate the four norms of thick solutions per epsilon and bound each by factor x its median"""
    quantities: dict[str, list[float]] = {name: [] for name in EQUICOERCIVITY_QUANTITIES}
    epsilons = []
    for epsilon, mesh, u in solves:
        epsilons.append(float(epsilon))
        for name, value in equicoercivity_quantities(mesh, epsilon, u).items():
            quantities[name].append(value)
    return EquicoercivityReport(epsilons, quantities, factor)


__all__ = [
    "TransformCheckReport",
    "PoincareReport",
    "EquicoercivityReport",
    "fit_rate",
    "check_transformation_formula",
    "check_lebesgue_limit",
    "check_poincare",
    "poincare_random_suite",
    "equicoercivity_quantities",
    "equicoercivity_report",
]
