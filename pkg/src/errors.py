"""
Exception taxonomy for the insulation toolkit
Every error carries a machine code and the CLI exit code it maps to
"""

from typing import Any


class InsulationError(Exception):
    """Base class for all toolkit errors"""

    error: str = "INSULATION_ERROR"
    exit_code: int = 3

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details


# ============================================================================
# Configuration errors (exit 2)
# ============================================================================

class ConfigError(InsulationError):
    """Invalid or inconsistent run configuration"""

    error = "CONFIG_ERROR"
    exit_code = 2


class InvalidDomain(InsulationError):
    """Polygon does not satisfy the domain invariants"""

    error = "INVALID_DOMAIN"
    exit_code = 2


class ExpressionSyntaxError(InsulationError):
    """Scalar expression could not be parsed"""

    error = "EXPRESSION_SYNTAX"
    exit_code = 2

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        super().__init__(message, offset=offset, expected=list(expected))
        self.offset = offset
        self.expected = expected


# ============================================================================
# Geometry / meshing / solver errors (exit 3)
# ============================================================================

class ExpressionDomainError(InsulationError):
    """Expression evaluated outside its mathematical domain"""

    error = "EXPRESSION_DOMAIN"


class NonTransversal(InsulationError):
    """Transversal field fails k.n > 0 somewhere on the insulated boundary"""

    error = "NON_TRANSVERSAL"


class SelfIntersection(InsulationError):
    """Extruded insulating layer is not injective at the requested epsilon"""

    error = "SELF_INTERSECTION"

    def __init__(self, message: str, epsilon: float, **details: Any):
        super().__init__(message, epsilon=epsilon, **details)
        self.epsilon = epsilon


class OutsideLayer(InsulationError):
    """Query point does not lie in any layer strip"""

    error = "OUTSIDE_LAYER"


class MeshFailure(InsulationError):
    """Mesh generator could not meet the quality contract"""

    error = "MESH_FAILURE"


class NegativeWeight(InsulationError):
    """Negative Robin weight or negative distribution value"""

    error = "NEGATIVE_WEIGHT"


class SingularSystem(InsulationError):
    """Discrete system is not coercive (no Dirichlet part, zero Robin weight)"""

    error = "SINGULAR_SYSTEM"


class NoConvergence(InsulationError):
    """Iterative solver stopped before reaching the tolerance"""

    error = "NO_CONVERGENCE"

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message, residual=residual, iterations=iterations)
        self.residual = residual
        self.iterations = iterations


# ============================================================================
# Optimization / verification errors
# ============================================================================

class DegenerateTrace(InsulationError):
    """Temperature gap vanishes on the insulated boundary, no positive scale c"""

    error = "DEGENERATE_TRACE"
    exit_code = 4


class VerificationFailed(InsulationError):
    """One or more diagnostic checks failed"""

    error = "VERIFICATION_FAILED"
    exit_code = 5

    def __init__(self, message: str, failed: list[str]):
        super().__init__(message, failed=failed)
        self.failed = failed
