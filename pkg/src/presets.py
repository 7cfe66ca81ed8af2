"""
Named domain configurations
Ready-made bodies used by the example configs and the test-suite
"""

from dataclasses import dataclass
from typing import Dict

from .errors import ConfigError, InvalidDomain
from .geometry import BoundaryLabel, PolygonalDomain, Segment


@dataclass
class DomainPreset:
    """Configuration for a named domain"""

    name: str
    description: str
    vertices: list[tuple[float, float]]
    segments: list[tuple[int, int, str]]  # (start, end, label) with the body on the left

    def build(self) -> PolygonalDomain:
        return build_domain(self.vertices, self.segments)


# Domain configurations
PRESETS: Dict[str, DomainPreset] = {
    # Unit square, Dirichlet left, insulated right, adiabatic top and bottom
    "slab": DomainPreset(
        name="slab",
        description="Unit square slab: D at x=0, I at x=1, N elsewhere",
        vertices=[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
        segments=[(0, 1, "N"), (1, 2, "I"), (2, 3, "N"), (3, 0, "D")],
    ),
    "insulated_square": DomainPreset(
        name="insulated_square",
        description="Unit square insulated on its whole boundary",
        vertices=[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
        segments=[(0, 1, "I"), (1, 2, "I"), (2, 3, "I"), (3, 0, "I")],
    ),
    # Right edge split at y=0.5 into two insulated segments
    "two_edge_square": DomainPreset(
        name="two_edge_square",
        description="Unit square, D at x=0, I at x=1 as two segments, N elsewhere",
        vertices=[(0.0, 0.0), (1.0, 0.0), (1.0, 0.5), (1.0, 1.0), (0.0, 1.0)],
        segments=[(0, 1, "N"), (1, 2, "I"), (2, 3, "I"), (3, 4, "N"), (4, 0, "D")],
    ),
    # Reflex corner at (1, 1) between the two insulated edges
    "l_shape": DomainPreset(
        name="l_shape",
        description="L-shaped body [0,2]^2 minus [1,2]^2, I around the reflex corner, D elsewhere",
        vertices=[(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0), (1.0, 2.0), (0.0, 2.0)],
        segments=[(0, 1, "D"), (1, 2, "D"), (2, 3, "I"), (3, 4, "I"), (4, 5, "D"), (5, 0, "D")],
    ),
}


def build_domain(vertices, segments) -> PolygonalDomain:
    """Build a domain from raw vertex and (start, end, label) lists"""
    try:
        parsed = tuple(Segment(int(a), int(b), BoundaryLabel(str(label))) for a, b, label in segments)
    except ValueError as e:
        raise InvalidDomain(f"domain.segments: {e}")
    return PolygonalDomain(vertices=vertices, segments=parsed)


def get_preset(name: str) -> DomainPreset:
    """Get domain configuration by name"""
    if name not in PRESETS:
        raise ConfigError(f"domain.preset: unsupported preset {name!r}", supported=sorted(PRESETS))
    return PRESETS[name]


def is_supported_preset(name: str) -> bool:
    return name in PRESETS


def list_presets() -> Dict[str, DomainPreset]:
    return PRESETS
