import dataclasses
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from cachetools import LRUCache, cached
from numpy.typing import NDArray
from scipy import integrate

from .geometry import (
    FrameMatrix,
    GeometryError,
    Manifold,
    ManifoldPoint,
    OrthonormalFrame,
)
from .model import ManifoldKind, ModelKind, Provenance, StreamPurpose

__all__ = [
    "MAX_SEED",
    "SPHERE_SUPPORT_MARGIN",
    "SamplingError",
    "ModelConfigurationError",
    "UnsupportedModelError",
    "SingularityError",
    "RngStream",
    "Distribution",
    "PointMasses",
    "UniformCircle",
    "GeodesicBall",
    "GaussianPushforward",
    "AnisotropicGaussian",
    "PopulationModel",
    "PopulationMoments",
    "sample",
    "population_moments",
]

MAX_SEED = 2**64
SPHERE_SUPPORT_MARGIN = 1e-6
SINGULARITY_TOL = 1e-8

_WEIGHT_TOL = 1e-12
_REJECTION_BATCH = 4096
_MOMENT_CACHE_SIZE = 64

__log__ = logging.getLogger(__name__)


class SamplingError(Exception):
    pass


class ModelConfigurationError(SamplingError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"invalid population model: {reason}")


class UnsupportedModelError(SamplingError):
    def __init__(self, kind: ModelKind) -> None:
        super().__init__(
            f"population moments of {kind.value} models have no closed form; "
            "use the Monte Carlo estimator"
        )

        self.kind = kind


class SingularityError(SamplingError):
    def __init__(self, smallest_eigenvalue: float) -> None:
        super().__init__(
            f"E[H] is numerically singular (smallest eigenvalue {smallest_eigenvalue!r} "
            f"< {SINGULARITY_TOL:g})"
        )

        self.smallest_eigenvalue = smallest_eigenvalue


@dataclass(frozen=True)
class RngStream:
    """Counter-style stream keyed by (seed, replication, purpose)."""

    seed: int
    replication: int = 0
    purpose: StreamPurpose = StreamPurpose.data

    def __post_init__(self) -> None:
        if not 0 <= self.seed < MAX_SEED:
            raise SamplingError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.replication < 0:
            raise SamplingError(f"replication index must be nonnegative, got {self.replication}")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(self.replication, int(self.purpose)))
        )

    def with_purpose(self, purpose: StreamPurpose) -> "RngStream":
        return dataclasses.replace(self, purpose=purpose)


def _unit_directions(rng: np.random.Generator, count: int, d: int) -> NDArray[np.float64]:
    z = rng.standard_normal((count, d))

    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _radial_mean(
    weight: Callable[[float], float], f: Callable[[float], float], upper: float
) -> float:
    total, _ = integrate.quad(weight, 0.0, upper)
    value, _ = integrate.quad(lambda r: f(r) * weight(r), 0.0, upper)

    return value / total


class Distribution(ABC):
    kind: ModelKind
    symmetric: bool = True

    @abstractmethod
    def support_radius(self, manifold: Manifold, center: ManifoldPoint) -> float: ...

    @abstractmethod
    def draw(
        self,
        rng: np.random.Generator,
        count: int,
        manifold: Manifold,
        frame: OrthonormalFrame,
    ) -> NDArray[np.float64]: ...

    def radial_mean(self, manifold: Manifold, f: Callable[[float], float]) -> float:
        """E[f(ρ(c, X))] for laws that are rotationally symmetric about c."""
        raise UnsupportedModelError(self.kind)


@dataclass(frozen=True)
class PointMasses(Distribution):
    """Atoms in ambient coordinates with their probabilities."""

    atoms: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...]

    kind = ModelKind.discrete
    symmetric = False

    def __post_init__(self) -> None:
        if not self.atoms:
            raise ModelConfigurationError("a discrete model needs at least one atom")
        if len(self.atoms) != len(self.weights):
            raise ModelConfigurationError(
                f"{len(self.atoms)} atoms but {len(self.weights)} weights"
            )
        if any(w < 0.0 for w in self.weights):
            raise ModelConfigurationError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > _WEIGHT_TOL:
            raise ModelConfigurationError(f"weights sum to {sum(self.weights)!r}, not 1")

    def points(self) -> NDArray[np.float64]:
        return np.array(self.atoms, dtype=np.float64)

    def probabilities(self) -> NDArray[np.float64]:
        return np.array(self.weights, dtype=np.float64)

    def support_radius(self, manifold: Manifold, center: ManifoldPoint) -> float:
        return float(np.max(manifold.distance(center, self.points())))

    def draw(self, rng, count, manifold, frame):
        index = rng.choice(len(self.atoms), size=count, p=self.probabilities())

        return self.points()[index]


@dataclass(frozen=True)
class UniformCircle(Distribution):
    """Uniform on the geodesic sphere of radius ``radius`` around the center."""

    radius: float

    kind = ModelKind.uniform_circle

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise ModelConfigurationError(f"radius must be positive, got {self.radius}")

    def support_radius(self, manifold, center) -> float:
        return self.radius

    def draw(self, rng, count, manifold, frame):
        coords = self.radius * _unit_directions(rng, count, manifold.dimension)

        return manifold.exp_map(frame.base, frame.vector(coords))

    def radial_mean(self, manifold, f) -> float:
        return float(f(self.radius))


@dataclass(frozen=True)
class GeodesicBall(Distribution):
    """Uniform with respect to Riemannian volume on the geodesic ball."""

    radius: float

    kind = ModelKind.ball_uniform

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise ModelConfigurationError(f"radius must be positive, got {self.radius}")

    def support_radius(self, manifold, center) -> float:
        return self.radius

    def draw(self, rng, count, manifold, frame):
        d = manifold.dimension
        # proposal is uniform in the tangent ball, accepted by the volume distortion
        envelope = max(1.0, float(manifold.volume_ratio(self.radius)))
        accepted: list[NDArray[np.float64]] = []
        remaining = count

        while remaining > 0:
            r = self.radius * rng.uniform(size=_REJECTION_BATCH) ** (1.0 / d)
            directions = _unit_directions(rng, _REJECTION_BATCH, d)
            keep = rng.uniform(size=_REJECTION_BATCH) * envelope < manifold.volume_ratio(r)
            batch = r[keep, None] * directions[keep]
            accepted.append(batch[:remaining])
            remaining -= len(accepted[-1])

        coords = np.concatenate(accepted) if accepted else np.empty((0, d))

        return manifold.exp_map(frame.base, frame.vector(coords))

    def radial_mean(self, manifold, f) -> float:
        return _radial_mean(lambda r: float(manifold.volume_density(r)), f, self.radius)


def _truncated_gaussian(
    rng: np.random.Generator,
    count: int,
    scales: NDArray[np.float64],
    truncation: Optional[float],
) -> NDArray[np.float64]:
    d = len(scales)
    accepted: list[NDArray[np.float64]] = []
    remaining = count

    while remaining > 0:
        batch = rng.standard_normal((_REJECTION_BATCH, d)) * scales
        if truncation is not None:
            batch = batch[np.linalg.norm(batch, axis=1) <= truncation]
        accepted.append(batch[:remaining])
        remaining -= len(accepted[-1])

    return np.concatenate(accepted) if accepted else np.empty((0, d))


@dataclass(frozen=True)
class GaussianPushforward(Distribution):
    """exp_c of an isotropic tangent Gaussian, truncated at ``truncation``."""

    scale: float
    truncation: Optional[float] = None

    kind = ModelKind.gaussian

    def __post_init__(self) -> None:
        if not self.scale > 0.0:
            raise ModelConfigurationError(f"scale must be positive, got {self.scale}")
        if self.truncation is not None and not self.truncation > 0.0:
            raise ModelConfigurationError(
                f"truncation must be positive, got {self.truncation}"
            )

    def support_radius(self, manifold, center) -> float:
        return np.inf if self.truncation is None else self.truncation

    def draw(self, rng, count, manifold, frame):
        scales = np.full(manifold.dimension, self.scale)
        coords = _truncated_gaussian(rng, count, scales, self.truncation)

        return manifold.exp_map(frame.base, frame.vector(coords))

    def radial_mean(self, manifold, f) -> float:
        d = manifold.dimension
        upper = np.inf if self.truncation is None else self.truncation

        return _radial_mean(
            lambda r: r ** (d - 1) * np.exp(-0.5 * (r / self.scale) ** 2), f, upper
        )


@dataclass(frozen=True)
class AnisotropicGaussian(Distribution):
    """exp_c of a tangent Gaussian with per-axis scales in the center frame."""

    scales: tuple[float, ...]
    truncation: Optional[float] = None

    kind = ModelKind.anisotropic_gaussian
    symmetric = False

    def __post_init__(self) -> None:
        if not self.scales or any(not s > 0.0 for s in self.scales):
            raise ModelConfigurationError("scales must be positive")
        if self.truncation is not None and not self.truncation > 0.0:
            raise ModelConfigurationError(
                f"truncation must be positive, got {self.truncation}"
            )

    def support_radius(self, manifold, center) -> float:
        return np.inf if self.truncation is None else self.truncation

    def draw(self, rng, count, manifold, frame):
        if len(self.scales) != manifold.dimension:
            raise ModelConfigurationError(
                f"{len(self.scales)} scales for a manifold of dimension {manifold.dimension}"
            )
        coords = _truncated_gaussian(rng, count, np.array(self.scales), self.truncation)

        return manifold.exp_map(frame.base, frame.vector(coords))


@dataclass(frozen=True)
class PopulationModel:
    manifold: Manifold
    distribution: Distribution
    center: tuple[float, ...]

    def __post_init__(self) -> None:
        try:
            center = self.manifold.validate_point(self.center)
        except GeometryError as e:
            raise ModelConfigurationError(f"center: {e}")
        if center.ndim != 1:
            raise ModelConfigurationError("center must be a single point")
        if isinstance(self.distribution, PointMasses):
            try:
                self.manifold.validate_point(self.distribution.points())
            except GeometryError as e:
                raise ModelConfigurationError(f"atoms: {e}")
        if isinstance(self.distribution, AnisotropicGaussian) and len(
            self.distribution.scales
        ) != self.manifold.dimension:
            raise ModelConfigurationError(
                f"{len(self.distribution.scales)} scales for a manifold of "
                f"dimension {self.manifold.dimension}"
            )

        radius = self.distribution.support_radius(self.manifold, center)
        if self.manifold.kind is ManifoldKind.sphere:
            limit = np.pi / 2 - SPHERE_SUPPORT_MARGIN
            if not radius <= limit:
                raise ModelConfigurationError(
                    f"support reaches geodesic radius {radius} from the center; on the "
                    f"sphere it must stay within pi/2 - {SPHERE_SUPPORT_MARGIN:g} = {limit}"
                )

    @classmethod
    def build(
        cls,
        manifold: Manifold,
        distribution: Distribution,
        center: Optional[ManifoldPoint] = None,
    ) -> "PopulationModel":
        point = manifold.origin() if center is None else np.asarray(center, dtype=np.float64)

        return cls(manifold, distribution, tuple(float(c) for c in point))

    @property
    def kind(self) -> ModelKind:
        return self.distribution.kind

    def center_point(self) -> ManifoldPoint:
        return np.array(self.center, dtype=np.float64)

    def frame(self) -> OrthonormalFrame:
        return self.manifold.frame(self.center_point())


@dataclass(frozen=True, eq=False)
class PopulationMoments:
    mu: ManifoldPoint
    EH: FrameMatrix
    Gamma: FrameMatrix
    B: FrameMatrix
    provenance: Provenance = Provenance.analytic


def sample(model: PopulationModel, stream: RngStream, count: int) -> NDArray[np.float64]:
    if count < 0:
        raise SamplingError(f"sample count must be nonnegative, got {count}")

    rng = stream.generator()

    return model.distribution.draw(rng, count, model.manifold, model.frame())


def _frozen(frame: OrthonormalFrame, entries: NDArray[np.float64]) -> FrameMatrix:
    entries = np.array(entries, dtype=np.float64)
    entries.setflags(write=False)

    return FrameMatrix(frame, entries)


def _check_invertible(EH: NDArray[np.float64]) -> NDArray[np.float64]:
    smallest = float(np.min(np.linalg.eigvalsh(0.5 * (EH + EH.T))))
    if smallest < SINGULARITY_TOL:
        raise SingularityError(smallest)

    return np.linalg.inv(EH)


def _discrete_moments(model: PopulationModel) -> PopulationMoments:
    from .frechet import FrechetError, frechet_mean

    manifold = model.manifold
    masses: PointMasses = model.distribution  # pyright: ignore[reportAssignmentType]
    atoms = masses.points()
    weights = masses.probabilities()

    result = frechet_mean(manifold, atoms, weights, init=atoms[0])
    if not result.converged:
        raise FrechetError(
            f"Fréchet mean of the atoms did not converge (gradient norm {result.gradient_norm!r})"
        )

    mu = result.mean
    frame = manifold.frame(mu)
    H = manifold.hessian(mu, atoms, frame)
    xi = frame.coordinates(manifold.log_map(mu, atoms))

    EH = np.einsum("i,ijk->jk", weights, H)
    EH_inv = _check_invertible(EH)
    Gamma = (xi * weights[:, None]).T @ xi
    G = EH_inv @ H
    B = np.einsum("i,ikj,ikl->jl", weights, G, G)

    return PopulationMoments(
        mu, _frozen(frame, EH), _frozen(frame, Gamma), _frozen(frame, B)
    )


def _isotropic_moments(model: PopulationModel) -> PopulationMoments:
    manifold = model.manifold
    distribution = model.distribution
    d = manifold.dimension
    frame = model.frame()

    def comparison(r: float) -> float:
        return float(manifold.comparison(r))

    c_mean = distribution.radial_mean(manifold, comparison)
    c2_mean = distribution.radial_mean(manifold, lambda r: comparison(r) ** 2)
    r2_mean = distribution.radial_mean(manifold, lambda r: r * r)

    # H = P_u + c·P_{u⊥} averaged over a uniform direction u
    eh = (1.0 + (d - 1) * c_mean) / d
    eye = np.eye(d)
    _check_invertible(eh * eye)

    return PopulationMoments(
        model.center_point(),
        _frozen(frame, eh * eye),
        _frozen(frame, (r2_mean / d) * eye),
        _frozen(frame, ((1.0 + (d - 1) * c2_mean) / d) / (eh * eh) * eye),
    )


@cached(cache=LRUCache(maxsize=_MOMENT_CACHE_SIZE))
def population_moments(model: PopulationModel) -> PopulationMoments:
    if isinstance(model.distribution, PointMasses):
        moments = _discrete_moments(model)
    elif model.distribution.symmetric:
        moments = _isotropic_moments(model)
    else:
        raise UnsupportedModelError(model.kind)

    __log__.debug(
        "Population moments of %s: E[H] eigenvalues %s, tr Γ %r",
        model.kind.value,
        moments.EH.eigenvalues(),
        moments.Gamma.trace(),
    )

    return moments
