"""
Experiment Service
Builds the geometry, meshes and problem data from a run config and drives
the reduced and thick solves, epsilon sweeps, optimization and verification
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .config import RuntimeConfig
from .diagnostics import (
    check_lebesgue_limit,
    check_poincare,
    check_transformation_formula,
    equicoercivity_quantities,
    equicoercivity_report,
    poincare_random_suite,
)
from .errors import ConfigError, DegenerateTrace, ExpressionSyntaxError, InsulationError, VerificationFailed
from .fem import friedrichs_constant
from .geometry import (
    BoundaryLabel,
    DistributionProfile,
    LayerSpec,
    PolygonalDomain,
    TransversalMode,
    TransversalProfile,
    build_transversal,
    check_bilipschitz,
)
from .heat_models import (
    ProblemConfig,
    SolveReport,
    build_recovery_field,
    convective_loss,
    reduced_energy_function,
    solve_reduced,
    solve_thick,
    thick_energy,
    transmission_jump,
    minimizer_certificate,
)
from .meshing import FacetLabel, TriangleMesh, mesh_body, mesh_thick
from .models import CheckResult, RunConfig
from .optimizer import alternate_minimize, net_heat_input, solve_c_fixed_point, OptimizerState
from .output import (
    ENERGY_COLUMNS,
    ITERATION_COLUMNS,
    LAYER_CHECK_COLUMNS,
    MESH_COLUMNS,
    POLYLINE_COLUMNS,
    SWEEP_COLUMNS,
    VERIFY_COLUMNS,
    CsvTable,
    polyline_rows,
    write_csv,
    write_vtk,
)
from .presets import build_domain, get_preset
from .scalar_expr import Expr, parse

logger = logging.getLogger(__name__)

DEFAULT_CHECK_EPSILON = 0.01
GAP_SLACK = 1e-12
FINAL_GAP_FRACTION = 0.05
SLACK_FLOOR = -1e-8


@dataclass
class ThickResult:
    epsilon: float
    spec: LayerSpec
    mesh: TriangleMesh
    report: SolveReport


def _parse_field(name: str, text: str) -> Expr:
    try:
        return parse(text)
    except ExpressionSyntaxError as e:
        raise ExpressionSyntaxError(f"{name}: {e.message}", offset=e.offset, expected=e.expected)


def sweep_failures(rows: list[dict]) -> list[str]:
    """
    Names of the epsilon-sweep checks that fail, rows taken from the largest epsilon down

    gamma_gap_decrease: |E_eps - E| never grows as epsilon shrinks
    gamma_final_gap: the finest gap is within 5% of |E|
    recovery_slack_decrease: the recovery slack never grows and stays above -1e-8
    """
    if not rows:
        return []
    ordered = sorted(rows, key=lambda row: -row["epsilon"])
    gaps = [row["gap"] for row in ordered]
    slacks = [row["recovery_slack"] for row in ordered]
    failed = []
    if any(b > a + GAP_SLACK for a, b in zip(gaps, gaps[1:])):
        failed.append("gamma_gap_decrease")
    if gaps[-1] > FINAL_GAP_FRACTION * abs(ordered[-1]["energy_reduced"]):
        failed.append("gamma_final_gap")
    if any(b > a + GAP_SLACK for a, b in zip(slacks, slacks[1:])) or min(slacks) < SLACK_FLOOR:
        failed.append("recovery_slack_decrease")
    return failed


class ExperimentService:
    """Service for the experiments of one run config"""

    def __init__(self, run: RunConfig, runtime: RuntimeConfig, out_dir: Optional[Path] = None):
        """Initialize the service; nothing is meshed or solved until a command needs it"""
        self.run = run
        self.runtime = runtime
        self.out_dir = Path(out_dir or run.outputs.directory or runtime.out_dir)
        self.numerics = run.numerics

    # ------------------------------------------------------------------
    # problem setup
    # ------------------------------------------------------------------

    @cached_property
    def domain(self) -> PolygonalDomain:
        section = self.run.domain
        if section.preset is not None:
            return get_preset(section.preset).build()
        return build_domain(section.vertices, section.segments)

    @cached_property
    def problem(self) -> ProblemConfig:
        physics = self.run.physics
        problem = ProblemConfig(
            lam=physics.lam,
            beta=physics.beta,
            f=_parse_field("physics.f", physics.f),
            g=_parse_field("physics.g", physics.g),
            u_d=_parse_field("physics.u_D", physics.u_D),
            u_inf=_parse_field("physics.u_inf", physics.u_inf),
            m=physics.m,
        )
        if not problem.g.is_constant and not self.domain.has_label(BoundaryLabel.NEUMANN):
            raise ConfigError("physics.g: the domain has no Neumann (N) segment")
        if not problem.u_d.is_constant and not self.domain.has_label(BoundaryLabel.DIRICHLET):
            raise ConfigError("physics.u_D: the domain has no Dirichlet (D) segment")
        return problem

    @cached_property
    def mesh(self) -> TriangleMesh:
        return mesh_body(self.domain, self.numerics.h_target)

    @cached_property
    def transversal(self) -> TransversalProfile:
        section = self.run.transversal
        boundary = self.mesh.insulated_boundary()
        table = None
        if section.mode == "table":
            x, y = boundary.points[:, 0], boundary.points[:, 1]
            kx = _parse_field("transversal.kx", section.kx)(x, y)
            ky = _parse_field("transversal.ky", section.ky)(x, y)
            table = np.column_stack([kx, ky])
        return build_transversal(self.domain, TransversalMode(section.mode), boundary, section.center, table)

    def distribution(self) -> DistributionProfile:
        """Configured distribution; the optimize mode starts from the uniform one"""
        section = self.run.distribution
        if section.mode == "table":
            points = self.transversal.boundary.points
            d_tilde = _parse_field("distribution.expression", section.expression)(points[:, 0], points[:, 1])
            return DistributionProfile.from_d_tilde(self.transversal, d_tilde)
        return DistributionProfile.uniform(self.transversal, self.problem.m)

    def _epsilons(self) -> list[float]:
        if self.numerics.epsilons:
            return list(self.numerics.epsilons)
        if self.numerics.epsilon is not None:
            return [self.numerics.epsilon]
        raise ConfigError("numerics.epsilons: no layer scale configured")

    def _map(self, func: Callable, items: list) -> Iterator:
        """Ordered lazy map, threaded when more than one thread is configured"""
        if self.runtime.threads <= 1:
            yield from map(func, items)
            return
        with ThreadPoolExecutor(max_workers=self.runtime.threads) as executor:
            yield from executor.map(func, items)

    @property
    def _csv(self) -> bool:
        return "csv" in self.run.outputs.formats

    @property
    def _vtk(self) -> bool:
        return "vtk" in self.run.outputs.formats

    def _solve_reduced(self, distribution: Optional[DistributionProfile] = None) -> SolveReport:
        return solve_reduced(
            self.mesh,
            self.problem,
            distribution or self.distribution(),
            self.numerics.robin_quadrature,
            self.numerics.rel_tol,
            self.numerics.solver,
        )

    def _solve_thick(self, epsilon: float, distribution: DistributionProfile) -> ThickResult:
        spec = LayerSpec(epsilon, distribution)
        mesh = mesh_thick(self.domain, spec, self.numerics.h_target, self.numerics.n_layers, body=self.mesh)
        report = solve_thick(mesh, self.problem, spec, self.numerics.rel_tol, self.numerics.solver)
        return ThickResult(epsilon, spec, mesh, report)

    # ------------------------------------------------------------------
    # commands
    # ------------------------------------------------------------------

    def solve_reduced(self) -> SolveReport:
        """Reduced solve: energy breakdown CSV and temperature VTK"""
        logger.info(f"Solving reduced model for {self.run.name}")
        distribution = self.distribution()
        report = self._solve_reduced(distribution)
        row = {"model": "reduced", **report.energy.as_row()}
        row["q_tot"] = net_heat_input(self.problem, self.mesh)
        row["q_conv"] = convective_loss(self.mesh, self.problem, distribution, report.u, self.numerics.robin_quadrature)
        if self._csv:
            write_csv(self.out_dir / "energy_reduced.csv", ENERGY_COLUMNS, [row])
        if self._vtk:
            write_vtk(self.out_dir / "u_reduced.vtk", self.mesh, {"u": report.u})
        logger.info(f"✓ Reduced energy E = {report.energy.total:.12g}")
        return report

    def solve_thick(self) -> list[ThickResult]:
        """Thick solves for every configured epsilon"""
        distribution = self.distribution()
        epsilons = self._epsilons()
        results = []
        table = CsvTable(self.out_dir / "energy_thick.csv", ENERGY_COLUMNS) if self._csv else None
        try:
            for index, result in enumerate(self._map(lambda e: self._solve_thick(e, distribution), epsilons)):
                results.append(result)
                if table:
                    table.write({"model": "thick", "epsilon": result.epsilon, **result.report.energy.as_row()})
                if self._vtk:
                    write_vtk(self.out_dir / f"u_thick_{index}.vtk", result.mesh, {"u": result.report.u})
                logger.info(f"✓ Thick energy at epsilon={result.epsilon:g}: {result.report.energy.total:.12g}")
        finally:
            if table:
                table.close()
        return results

    def _sweep_row(self, epsilon: float, distribution: DistributionProfile, reduced: SolveReport) -> dict:
        result = self._solve_thick(epsilon, distribution)
        recovery = build_recovery_field(result.mesh, self.problem, result.spec, reduced.u)
        recovery_energy = thick_energy(result.mesh, self.problem, result.spec, recovery).total
        jumps = transmission_jump(result.mesh, self.problem, result.spec, result.report.u)
        lengths = result.spec.boundary.lengths
        row = {
            "epsilon": epsilon,
            "energy_thick": result.report.energy.total,
            "energy_reduced": reduced.energy.total,
            "gap": abs(result.report.energy.total - reduced.energy.total),
            "recovery_energy": recovery_energy,
            "recovery_slack": recovery_energy - reduced.energy.total,
            "transmission_jump": float(np.sqrt(np.sum(lengths * jumps**2) / np.sum(lengths))),
        }
        row.update(equicoercivity_quantities(result.mesh, epsilon, result.report.u))
        return row

    def gamma_sweep(self) -> list[dict]:
        """Thick solves along the epsilon list against the reduced solve, checked by sweep_failures"""
        if not self.numerics.epsilons:
            raise ConfigError("numerics.epsilons: gamma-sweep needs a list of layer scales")
        if self.run.distribution.mode == "optimize":
            raise ConfigError("distribution.mode: gamma-sweep needs a uniform or table distribution")
        distribution = self.distribution()
        if distribution.d_min <= 0.0:
            raise ConfigError("distribution.expression: gamma-sweep needs a thickness bounded away from zero")
        reduced = self._solve_reduced(distribution)
        logger.info(f"Gamma sweep over {len(self.numerics.epsilons)} layer scales, E_reduced={reduced.energy.total:.12g}")

        rows = []
        table = CsvTable(self.out_dir / "gamma_sweep.csv", SWEEP_COLUMNS) if self._csv else None
        try:
            for row in self._map(lambda e: self._sweep_row(e, distribution, reduced), self.numerics.epsilons):
                rows.append(row)
                if table:
                    table.write(row)
                logger.info(f"✓ epsilon={row['epsilon']:g}: gap={row['gap']:.6e}, slack={row['recovery_slack']:.6e}")
        finally:
            if table:
                table.close()

        failed = sweep_failures(rows)
        if failed:
            raise VerificationFailed(f"gamma sweep failed: {', '.join(failed)}", failed=failed)
        return rows

    def net_heat_input(self) -> float:
        return net_heat_input(self.problem, self.mesh)

    def optimize(self) -> OptimizerState:
        """Alternating minimization: iteration CSV, optimal distribution polyline, final temperature"""
        if self.run.distribution.mode != "optimize":
            raise ConfigError("distribution.mode: optimize needs mode=optimize")
        q_tot = self.net_heat_input()
        logger.info(f"Net heat input Q_tot = {q_tot:.12g}")
        state = alternate_minimize(
            self.mesh,
            self.problem,
            self.transversal,
            tol=self.numerics.opt_tol,
            max_iter=self.numerics.opt_max_iter,
            quadrature="lumped",
            rel_tol=self.numerics.rel_tol,
            method=self.numerics.solver,
        )
        if self._csv:
            write_csv(self.out_dir / "optimize_iterations.csv", ITERATION_COLUMNS, [asdict(r) for r in state.records])
        if state.failure is not None:
            raise DegenerateTrace(state.failure, iterations=state.iteration, q_tot=q_tot)
        if self._csv:
            write_csv(self.out_dir / "distribution.csv", POLYLINE_COLUMNS, polyline_rows(state.distribution))
        if self._vtk:
            write_vtk(self.out_dir / "u_optimal.vtk", self.mesh, {"u": state.u})
        return state

    def mesh_info(self) -> list[dict]:
        """Statistics of the body mesh and, when a layer scale is set, of the thick mesh"""
        rows = [{"mesh": "body", **self.mesh.stats()}]
        if self._vtk:
            write_vtk(self.out_dir / "mesh_body.vtk", self.mesh)
        if self.numerics.epsilons or self.numerics.epsilon is not None:
            epsilon = self._epsilons()[0]
            spec = LayerSpec(epsilon, self.distribution())
            thick = mesh_thick(self.domain, spec, self.numerics.h_target, self.numerics.n_layers, body=self.mesh)
            rows.append({"mesh": f"thick_{epsilon:g}", **thick.stats()})
            if self._vtk:
                write_vtk(self.out_dir / "mesh_thick.vtk", thick)
        if self._csv:
            write_csv(self.out_dir / "mesh_info.csv", MESH_COLUMNS, rows)
        return rows

    # ------------------------------------------------------------------
    # verification suite
    # ------------------------------------------------------------------

    def _check_epsilons(self) -> list[float]:
        if self.numerics.epsilons:
            return list(self.numerics.epsilons)
        return [self.numerics.epsilon or DEFAULT_CHECK_EPSILON]

    def _flat_edge_spec(self, epsilon: float) -> LayerSpec:
        domain = get_preset("slab").build()
        transversal = build_transversal(domain, TransversalMode.NORMAL_FIELD)
        return LayerSpec(epsilon, DistributionProfile.from_d(transversal, np.ones(transversal.boundary.node_count)))

    def verify(self) -> list[CheckResult]:
        """Run every diagnostic check; raises VerificationFailed listing the failed ones"""
        epsilons = self._check_epsilons()
        layer_rows: list[dict] = []
        rng = np.random.default_rng(self.runtime.seed)

        def smooth(x, y):
            return 1.0 + 0.5 * x - 0.25 * y + 0.1 * x * y

        def distribution() -> CheckResult:
            profile = self.distribution()
            return CheckResult(check="distribution", passed=True, value=profile.mass(), detail=f"d_min={profile.d_min:.6g}")

        def flat_volume() -> CheckResult:
            report = check_transformation_formula(self._flat_edge_spec(epsilons[-1]), lambda x, y: np.ones_like(x))
            layer_rows.extend(report.rows())
            return CheckResult(check="transformation_flat_volume", passed=report.max_gap <= 1e-12, value=report.max_gap, threshold=1e-12)

        def flat_boundary() -> CheckResult:
            report = check_transformation_formula(
                self._flat_edge_spec(epsilons[-1]), lambda x, y: np.ones_like(x), variant="boundary"
            )
            layer_rows.extend(report.rows())
            return CheckResult(check="transformation_flat_boundary", passed=report.max_gap <= 1e-12, value=report.max_gap, threshold=1e-12)

        def volume_rate() -> CheckResult:
            spec = LayerSpec(epsilons[0], self.distribution())
            report = check_transformation_formula(spec, lambda x, y: np.ones_like(x), epsilons)
            layer_rows.extend(report.rows())
            if report.rate is None:
                return CheckResult(check="transformation_volume_rate", passed=True, value=report.max_gap, detail="exact")
            return CheckResult(check="transformation_volume_rate", passed=report.rate >= 1.8, value=report.rate, threshold=1.8)

        def lebesgue() -> CheckResult:
            spec = LayerSpec(epsilons[0], self.distribution())
            report = check_lebesgue_limit(spec, epsilons, lambda x, y: np.ones_like(x), smooth, p=2.0)
            layer_rows.extend(report.rows())
            if report.rate is None:
                return CheckResult(check="lebesgue_limit", passed=True, value=report.max_gap, detail="exact")
            return CheckResult(check="lebesgue_limit", passed=report.rate >= 0.9, value=report.rate, threshold=0.9)

        def poincare() -> CheckResult:
            spec = LayerSpec(epsilons[-1], self.distribution())
            reports = poincare_random_suite(spec, self.numerics.verify_samples, rng, self.numerics.n_layers)
            violations = sum(not report.passed for report in reports)
            return CheckResult(check="poincare", passed=violations == 0, value=float(violations), threshold=0.0,
                               detail=f"{len(reports)} random fields")

        def fixed_point() -> CheckResult:
            boundary = self.transversal.boundary
            length, a = boundary.total_length, 1.0 / 3.0
            problem = self.problem
            c = solve_c_fixed_point(np.full(boundary.node_count, a), problem.m, problem.beta, boundary.node_weights)
            error = abs(c - length * a / (problem.m * problem.beta + length))
            return CheckResult(check="fixed_point_closed_form", passed=error <= 1e-10, value=error, threshold=1e-10)

        def friedrichs() -> CheckResult:
            constant = friedrichs_constant(self.mesh, self.problem.beta)
            return CheckResult(check="friedrichs_constant", passed=bool(np.isfinite(constant)), value=constant)

        def certificate() -> CheckResult:
            distribution = self.distribution()
            report = self._solve_reduced(distribution)
            energy = reduced_energy_function(self.mesh, self.problem, distribution, self.numerics.robin_quadrature)
            free = np.setdiff1d(np.arange(self.mesh.node_count), self.mesh.nodes_with(FacetLabel.DIRICHLET))
            count = min(self.numerics.certificate_nodes, len(free))
            nodes = np.sort(rng.choice(free, size=count, replace=False))
            result = minimizer_certificate(energy, report.u, nodes)
            return CheckResult(check="minimizer_certificate", passed=result.passed, value=result.worst_decrease, threshold=-1e-8)

        def injectivity() -> CheckResult:
            epsilon0 = self.injectivity_bound()
            return CheckResult(check="injectivity", passed=epsilon0 >= max(epsilons), value=epsilon0, threshold=max(epsilons))

        def sweep_checks() -> list[CheckResult]:
            distribution = self.distribution()
            reduced = self._solve_reduced(distribution)
            results = list(self._map(lambda e: self._solve_thick(e, distribution), epsilons))
            report = equicoercivity_report([(r.epsilon, r.mesh, r.report.u) for r in results])
            slacks = []
            for r in results:
                recovery = build_recovery_field(r.mesh, self.problem, r.spec, reduced.u)
                slacks.append(thick_energy(r.mesh, self.problem, r.spec, recovery).total - reduced.energy.total)
            return [
                CheckResult(check="equicoercivity", passed=report.passed, value=max(max(v) for v in report.quantities.values()),
                            detail=f"factor {report.factor} of the median"),
                CheckResult(check="recovery_bound", passed=min(slacks) >= -1e-8, value=min(slacks), threshold=-1e-8),
            ]

        checks: list[tuple[str, Callable]] = [
            ("distribution", distribution),
            ("transformation_flat_volume", flat_volume),
            ("transformation_flat_boundary", flat_boundary),
            ("transformation_volume_rate", volume_rate),
            ("lebesgue_limit", lebesgue),
            ("poincare", poincare),
            ("fixed_point_closed_form", fixed_point),
            ("friedrichs_constant", friedrichs),
            ("minimizer_certificate", certificate),
            ("injectivity", injectivity),
            ("equicoercivity", sweep_checks),
        ]
        results: list[CheckResult] = []
        for name, check in checks:
            try:
                outcome = check()
                results.extend(outcome if isinstance(outcome, list) else [outcome])
            except InsulationError as e:
                logger.error(f"Check {name} raised {e.error}: {e.message}")
                results.append(CheckResult(check=name, passed=False, detail=f"{e.error}: {e.message}"))

        for result in results:
            logger.info(f"{'✓' if result.passed else '✗'} {result.check}: value={result.value}")
        if self._csv:
            write_csv(self.out_dir / "verify.csv", VERIFY_COLUMNS, [r.model_dump() for r in results])
            write_csv(self.out_dir / "layer_checks.csv", LAYER_CHECK_COLUMNS, layer_rows)
        failed = [r.check for r in results if not r.passed]
        if failed:
            raise VerificationFailed(f"{len(failed)} checks failed: {', '.join(failed)}", failed=failed)
        return results

    def injectivity_bound(self, epsilon_max: Optional[float] = None) -> float:
        """Largest certified layer scale for the configured distribution"""
        epsilon_max = epsilon_max or self.numerics.epsilon_max or max(self._check_epsilons())
        distribution = self.distribution()
        return check_bilipschitz(self.domain, self.transversal, distribution, epsilon_max)


# Global service instance
_experiment_service: Optional[ExperimentService] = None


def get_experiment_service(run: Optional[RunConfig] = None, runtime: Optional[RuntimeConfig] = None,
                           out_dir: Optional[Path] = None) -> ExperimentService:
    """Get the current experiment service, replacing it when a new run config is given"""
    global _experiment_service
    if run is not None:
        _experiment_service = ExperimentService(run, runtime, out_dir)
    if _experiment_service is None:
        raise ConfigError("no run config loaded")
    return _experiment_service
