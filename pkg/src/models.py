"""
Pydantic models for run configurations and reports
"""

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .presets import is_supported_preset, list_presets


# ============================================================================
# Run configuration sections
# ============================================================================

class DomainSection(BaseModel):
    """Body geometry: a named preset or explicit vertices and labeled segments"""

    preset: Optional[str] = Field(None, description="Named domain (slab, insulated_square, two_edge_square, l_shape)")
    vertices: Optional[list[tuple[float, float]]] = Field(None, description="Polygon vertices")
    segments: Optional[list[tuple[int, int, str]]] = Field(
        None, description="Boundary segments [start, end, label], body on the left, label I, D or N"
    )

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]],
                "segments": [[0, 1, "N"], [1, 2, "I"], [2, 3, "N"], [3, 0, "D"]],
            }
        }
    )

    @model_validator(mode="after")
    def check_source(self) -> "DomainSection":
        explicit = self.vertices is not None or self.segments is not None
        if self.preset is not None and explicit:
            raise ValueError("give either preset or vertices/segments, not both")
        if self.preset is None and (self.vertices is None or self.segments is None):
            raise ValueError("give a preset or both vertices and segments")
        if self.preset is not None and not is_supported_preset(self.preset):
            raise ValueError(f"unknown preset {self.preset!r}, choose from {sorted(list_presets())}")
        if self.segments is not None:
            labels = {label for _, _, label in self.segments}
            unknown = labels - {"I", "D", "N"}
            if unknown:
                raise ValueError(f"segments: unknown labels {sorted(unknown)}")
            if "I" not in labels:
                raise ValueError("segments: no Insulated (I) segment")
        return self


class TransversalSection(BaseModel):
    """Construction of the transversal field k on Gamma_I"""

    mode: Literal["normal", "star", "table"] = Field("normal", description="Bisected normals, rays from a center, or expressions")
    center: Optional[tuple[float, float]] = Field(None, description="Ray center for mode=star, strictly inside the body")
    kx: Optional[str] = Field(None, description="x component of k for mode=table, expression in x, y")
    ky: Optional[str] = Field(None, description="y component of k for mode=table, expression in x, y")

    @model_validator(mode="after")
    def check_mode(self) -> "TransversalSection":
        if self.mode == "star" and self.center is None:
            raise ValueError("center is required for mode=star")
        if self.mode == "table" and (self.kx is None or self.ky is None):
            raise ValueError("kx and ky are required for mode=table")
        return self


class PhysicsSection(BaseModel):
    """Physical constants and fields (expressions in x and y)"""

    lam: float = Field(1.0, gt=0.0, alias="lambda", description="Thermal conductivity of the body")
    beta: float = Field(1.0, gt=0.0, description="Heat transfer coefficient")
    m: float = Field(1.0, gt=0.0, description="Total insulating material")
    f: str = Field("0", description="Heat source density on the body")
    g: str = Field("0", description="Heat flux on Gamma_N")
    u_D: str = Field("0", description="Temperature on Gamma_D")
    u_inf: str = Field("0", description="Ambient temperature outside the body")

    model_config = ConfigDict(
        populate_by_name=True,
        json_schema_extra={
            "example": {"lambda": 1.0, "beta": 1.0, "m": 1.0, "f": "1", "g": "0", "u_D": "0", "u_inf": "0"}
        },
    )


class DistributionSection(BaseModel):
    """How the thickness along Gamma_I is chosen"""

    mode: Literal["uniform", "table", "optimize"] = Field("uniform", description="d_tilde = m/|Gamma_I|, an expression, or optimized")
    expression: Optional[str] = Field(None, description="d_tilde(x, y) for mode=table")

    @model_validator(mode="after")
    def check_mode(self) -> "DistributionSection":
        if self.mode == "table" and not self.expression:
            raise ValueError("expression is required for mode=table")
        return self


class NumericsSection(BaseModel):
    """Discretization, sweep and solver parameters"""

    h_target: float = Field(0.05, gt=0.0, description="Target mesh size")
    n_layers: int = Field(2, ge=1, description="Element rows across the insulating layer")
    epsilons: list[float] = Field(default_factory=list, description="Layer scales for sweeps, strictly decreasing")
    epsilon: Optional[float] = Field(None, gt=0.0, description="Single layer scale for solve-thick")
    rel_tol: float = Field(1e-10, gt=0.0, description="Relative residual of the linear solver")
    solver: Literal["cg", "direct"] = Field("cg", description="Linear solver")
    robin_quadrature: Literal["gauss", "lumped"] = Field("gauss", description="Gamma_I Robin quadrature for solves")
    opt_tol: float = Field(1e-9, gt=0.0, description="Relative energy change stopping the optimizer")
    opt_max_iter: int = Field(100, ge=1, description="Optimizer iteration cap")
    epsilon_max: Optional[float] = Field(None, gt=0.0, description="Upper bound for the injectivity bisection")
    verify_samples: int = Field(100, ge=1, description="Random fields per Poincare check")
    certificate_nodes: int = Field(50, ge=1, description="Nodes probed by the minimizer certificate")

    @field_validator("epsilons")
    @classmethod
    def check_epsilons(cls, values: list[float]) -> list[float]:
        if any(value <= 0.0 for value in values):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        return values


class OutputsSection(BaseModel):
    directory: Optional[str] = Field(None, description="Output directory (overrides INSULATION_OUT)")
    formats: list[Literal["csv", "vtk"]] = Field(default_factory=lambda: ["csv", "vtk"], description="Files to write")


class RunConfig(BaseModel):
    """Complete run configuration"""

    name: str = Field("run", description="Run name used in log lines")
    domain: DomainSection
    transversal: TransversalSection = Field(default_factory=TransversalSection)
    physics: PhysicsSection = Field(default_factory=PhysicsSection)
    distribution: DistributionSection = Field(default_factory=DistributionSection)
    numerics: NumericsSection = Field(default_factory=NumericsSection)
    outputs: OutputsSection = Field(default_factory=OutputsSection)

    model_config = ConfigDict(extra="forbid")


# ============================================================================
# Reports
# ============================================================================

class CheckResult(BaseModel):
    """One named verification check"""

    check: str = Field(..., description="Check name")
    passed: bool = Field(..., description="Whether the check passed")
    value: Optional[float] = Field(None, description="Measured quantity")
    threshold: Optional[float] = Field(None, description="Acceptance threshold")
    detail: str = Field("", description="Human readable detail")


class ErrorReport(BaseModel):
    """Error printed on stderr when a command fails"""

    error: str = Field(..., description="Error code")
    message: str = Field(..., description="Error message")
    exit_code: int = Field(..., description="Process exit code")
    details: Optional[dict[str, Any]] = Field(None, description="Additional error details")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "error": "SELF_INTERSECTION",
                "message": "layer strips overlap at epsilon=0.8",
                "exit_code": 3,
                "details": {"epsilon": 0.8},
            }
        }
    )
