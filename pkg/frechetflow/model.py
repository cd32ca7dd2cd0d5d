from enum import Enum, IntEnum

__all__ = [
    "ManifoldKind",
    "ModelKind",
    "MomentMethod",
    "Provenance",
    "StreamPurpose",
    "TestStatus",
]


class ManifoldKind(Enum):
    euclidean = "euclidean"
    sphere = "sphere"
    hyperbolic = "hyperbolic"


class ModelKind(Enum):
    discrete = "discrete"
    uniform_circle = "uniform_circle"
    ball_uniform = "ball_uniform"
    gaussian = "gaussian"
    anisotropic_gaussian = "anisotropic_gaussian"


class MomentMethod(Enum):
    auto = "auto"
    monte_carlo = "monte_carlo"


class Provenance(Enum):
    analytic = "analytic"
    monte_carlo = "monte-carlo"


class StreamPurpose(IntEnum):
    """Purpose tags of random streams; values are part of the seeding contract."""

    data = 0
    moments = 1
    conditional = 2
    reference = 3
    permutation = 4
    brownian = 5


class TestStatus(Enum):
    __test__ = False

    passed = "pass"
    failed = "fail"
    inconclusive = "inconclusive"
