"""Closed-form Riemannian primitives on the constant-curvature model spaces.

Points and tangent vectors are numpy arrays of ambient coordinates, shape
``(..., D)``. Every primitive broadcasts over the leading axes, so a single
call evaluates one point pair or a whole sample at once.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import ManifoldKind

__all__ = [
    "ManifoldPoint",
    "TangentVector",
    "GeometryError",
    "InvalidInputError",
    "CutLocusError",
    "DomainError",
    "CurvatureBounds",
    "OrthonormalFrame",
    "FrameMatrix",
    "Manifold",
    "Euclidean",
    "Sphere",
    "Hyperbolic",
    "make_manifold",
    "rho_cot",
    "rho_coth",
    "hess_operator",
    "hess_bounds_check",
]

ManifoldPoint = NDArray[np.float64]
TangentVector = NDArray[np.float64]

CUT_LOCUS_TOL = 1e-8

_POINT_TOL = 1e-12
_SERIES_CUTOFF = 1e-4
_FRAME_DEGENERACY = 1e-8
_BOUNDS_TOL = 1e-9
_FAR_COSH = 2.0

__log__ = logging.getLogger(__name__)


class GeometryError(Exception):
    pass


class InvalidInputError(GeometryError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"invalid geometric input: {reason}")


class CutLocusError(GeometryError):
    def __init__(self, distance: float) -> None:
        super().__init__(
            f"point within {CUT_LOCUS_TOL:g} of the cut locus (distance {distance!r})"
        )

        self.distance = distance


class DomainError(GeometryError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"outside operator domain: {reason}")


def rho_cot(rho: ArrayLike) -> NDArray[np.float64]:
    """ρ·cot(ρ), switching to its Taylor series below 1e-4."""
    rho = np.asarray(rho, dtype=np.float64)
    small = np.abs(rho) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, rho)
    r2 = rho * rho

    return np.where(small, 1.0 - r2 / 3.0 - r2 * r2 / 45.0, safe / np.tan(safe))


def rho_coth(rho: ArrayLike) -> NDArray[np.float64]:
    """ρ·coth(ρ), switching to its Taylor series below 1e-4."""
    rho = np.asarray(rho, dtype=np.float64)
    small = np.abs(rho) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, rho)
    r2 = rho * rho

    return np.where(small, 1.0 + r2 / 3.0 - r2 * r2 / 45.0, safe / np.tanh(safe))


def _sinhc(t: NDArray[np.float64]) -> NDArray[np.float64]:
    small = np.abs(t) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, t)

    return np.where(small, 1.0 + t * t / 6.0, np.sinh(safe) / safe)


def _sinc(t: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.sinc(t / np.pi)


@dataclass(frozen=True)
class CurvatureBounds:
    kappa0: float
    kappa1: float

    def __post_init__(self) -> None:
        if not self.kappa0 <= 0.0 <= self.kappa1:
            raise InvalidInputError(
                f"curvature bounds need kappa0 <= 0 <= kappa1, got ({self.kappa0}, {self.kappa1})"
            )

    def lower(self, rho: ArrayLike) -> NDArray[np.float64]:
        return rho_cot(np.sqrt(self.kappa1) * np.asarray(rho, dtype=np.float64))

    def upper(self, rho: ArrayLike) -> NDArray[np.float64]:
        return rho_coth(np.sqrt(-self.kappa0) * np.asarray(rho, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class OrthonormalFrame:
    """Orthonormal basis of the tangent space at ``base``.

    ``signature`` is the ambient metric diagonal, so coordinates of a tangent
    vector are metric inner products against ``basis`` rows.
    """

    base: ManifoldPoint
    basis: NDArray[np.float64]
    signature: NDArray[np.float64]

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    def coordinates(self, v: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(v, dtype=np.float64) * self.signature) @ self.basis.T

    def vector(self, coords: ArrayLike) -> TangentVector:
        return np.asarray(coords, dtype=np.float64) @ self.basis

    def change_of_basis(self, other: "OrthonormalFrame") -> NDArray[np.float64]:
        """Matrix Q with ``other.coordinates(v) == Q @ self.coordinates(v)``."""
        if not np.allclose(self.base, other.base, rtol=0.0, atol=1e-12):
            raise InvalidInputError("frames are attached to different points")

        return (other.basis * self.signature) @ self.basis.T

    def gram(self) -> NDArray[np.float64]:
        return (self.basis * self.signature) @ self.basis.T


@dataclass(frozen=True, eq=False)
class FrameMatrix:
    frame: OrthonormalFrame
    entries: NDArray[np.float64]

    @classmethod
    def identity(cls, frame: OrthonormalFrame) -> "FrameMatrix":
        return cls(frame, np.eye(frame.dimension))

    @classmethod
    def zeros(cls, frame: OrthonormalFrame) -> "FrameMatrix":
        return cls(frame, np.zeros((frame.dimension, frame.dimension)))

    def symmetrized(self) -> NDArray[np.float64]:
        return 0.5 * (self.entries + self.entries.T)

    def eigenvalues(self) -> NDArray[np.float64]:
        return np.linalg.eigvalsh(self.symmetrized())

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def is_symmetric(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.T), initial=0.0) <= tol)

    def scaled(self, factor: float) -> "FrameMatrix":
        return FrameMatrix(self.frame, factor * self.entries)

    def apply(self, coords: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(coords, dtype=np.float64) @ self.entries.T

    def in_frame(self, other: OrthonormalFrame) -> "FrameMatrix":
        q = self.frame.change_of_basis(other)

        return FrameMatrix(other, q @ self.entries @ q.T)


class Manifold(ABC):
    __slots__ = ("_dimension",)

    kind: ManifoldKind
    curvature: CurvatureBounds
    injectivity_radius: float

    def __init__(self, dimension: int) -> None:
        if dimension < 1:
            raise InvalidInputError(f"dimension must be at least 1, got {dimension}")

        self._dimension = dimension

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Manifold)
            and self.kind is other.kind
            and self._dimension == other._dimension
        )

    def __hash__(self) -> int:
        return hash((self.kind, self._dimension))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dimension={self._dimension})"

    def __reduce__(self):
        return type(self), (self._dimension,)

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    @abstractmethod
    def ambient_dimension(self) -> int: ...

    @property
    @abstractmethod
    def signature(self) -> NDArray[np.float64]: ...

    @abstractmethod
    def origin(self) -> ManifoldPoint: ...

    @abstractmethod
    def distance(self, x: ArrayLike, y: ArrayLike) -> NDArray[np.float64]: ...

    @abstractmethod
    def exp_map(self, x: ArrayLike, v: ArrayLike) -> ManifoldPoint: ...

    @abstractmethod
    def log_map(self, x: ArrayLike, y: ArrayLike) -> TangentVector: ...

    @abstractmethod
    def project(self, x: ArrayLike, v: ArrayLike) -> TangentVector: ...

    @abstractmethod
    def comparison(self, rho: ArrayLike) -> NDArray[np.float64]:
        """Eigenvalue of H_{x,y} orthogonal to the geodesic, as a function of ρ."""

    @abstractmethod
    def _sn(self, r: NDArray[np.float64]) -> NDArray[np.float64]: ...

    def _coords(self, *arrays: ArrayLike) -> tuple[NDArray[np.float64], ...]:
        out = tuple(np.asarray(a, dtype=np.float64) for a in arrays)
        for a in out:
            if a.ndim == 0 or a.shape[-1] != self.ambient_dimension:
                raise InvalidInputError(
                    f"expected ambient dimension {self.ambient_dimension}, got shape {a.shape}"
                )

        return out

    def inner(self, x: ArrayLike, u: ArrayLike, v: ArrayLike) -> NDArray[np.float64]:
        _, u, v = self._coords(x, u, v)

        return np.sum(u * v * self.signature, axis=-1)

    def norm(self, x: ArrayLike, v: ArrayLike) -> NDArray[np.float64]:
        return np.sqrt(np.maximum(self.inner(x, v, v), 0.0))

    def parallel_transport(self, x: ArrayLike, y: ArrayLike, v: ArrayLike) -> TangentVector:
        """Transport along the minimizing geodesic from x to y.

        Π v = v − ⟨log_x y, v⟩/ρ² · (log_x y + log_y x); the identity when x = y.
        """
        x, y, v = self._coords(x, y, v)
        forward = self.log_map(x, y)
        backward = self.log_map(y, x)
        rho2 = self.inner(x, forward, forward)
        along = self.inner(x, forward, v)
        coefficient = np.divide(
            along,
            rho2,
            out=np.zeros(np.broadcast_shapes(along.shape, rho2.shape)),
            where=rho2 > 0.0,
        )

        return v - coefficient[..., None] * (forward + backward)

    def volume_density(self, r: ArrayLike) -> NDArray[np.float64]:
        """Radial density sn(r)^(d−1) of the Riemannian volume in polar coordinates."""
        return self._sn(np.asarray(r, dtype=np.float64)) ** (self._dimension - 1)

    def volume_ratio(self, r: ArrayLike) -> NDArray[np.float64]:
        r = np.asarray(r, dtype=np.float64)
        safe = np.where(r > 0.0, r, 1.0)

        return np.where(r > 0.0, self._sn(safe) / safe, 1.0) ** (self._dimension - 1)

    def validate_point(self, x: ArrayLike) -> ManifoldPoint:
        (x,) = self._coords(x)
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("point has non-finite coordinates")

        return x

    def validate_tangent(self, x: ArrayLike, v: ArrayLike) -> TangentVector:
        x, v = self._coords(x, v)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("vector has non-finite coordinates")

        scale = np.maximum(1.0, np.linalg.norm(x, axis=-1) * np.linalg.norm(v, axis=-1))
        if np.any(np.abs(self.inner(x, x, v)) > _POINT_TOL * scale):
            raise InvalidInputError("vector is not tangent at its base point")

        return v

    def frame(self, base: ArrayLike, order: Optional[Iterable[int]] = None) -> OrthonormalFrame:
        """Gram-Schmidt over projected ambient axes, in ``order`` (index order by default)."""
        base = self.validate_point(base)
        if base.ndim != 1:
            raise InvalidInputError("a frame is attached to a single point")

        axes = np.eye(self.ambient_dimension)
        order = range(self.ambient_dimension) if order is None else order
        basis: list[NDArray[np.float64]] = []

        for index in order:
            candidate = self.project(base, axes[index])
            # two passes keep the basis orthonormal to rounding
            for _ in range(2):
                for e in basis:
                    candidate = candidate - self.inner(base, e, candidate) * e
            norm = float(self.norm(base, candidate))
            if norm < _FRAME_DEGENERACY:
                continue
            basis.append(candidate / norm)
            if len(basis) == self._dimension:
                break

        if len(basis) < self._dimension:
            raise InvalidInputError("ambient axes do not span the tangent space")

        return OrthonormalFrame(base, np.array(basis), self.signature)

    def hessian(self, x: ArrayLike, y: ArrayLike, frame: OrthonormalFrame) -> NDArray[np.float64]:
        """Frame matrices of H_{x,y} for a batch of y, shape ``(..., d, d)``."""
        coords = frame.coordinates(self.log_map(x, y))
        rho = np.linalg.norm(coords, axis=-1)
        c = self.comparison(rho)
        u = np.divide(
            coords, rho[..., None], out=np.zeros_like(coords), where=rho[..., None] > 0.0
        )
        eye = np.eye(self._dimension)

        return c[..., None, None] * eye + (1.0 - c)[..., None, None] * (
            u[..., :, None] * u[..., None, :]
        )


class Euclidean(Manifold):
    __slots__ = ()

    kind = ManifoldKind.euclidean
    curvature = CurvatureBounds(0.0, 0.0)
    injectivity_radius = np.inf

    @property
    def ambient_dimension(self) -> int:
        return self._dimension

    @property
    def signature(self) -> NDArray[np.float64]:
        return np.ones(self._dimension)

    def origin(self) -> ManifoldPoint:
        return np.zeros(self._dimension)

    def distance(self, x: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
        x, y = self._coords(x, y)

        return np.linalg.norm(y - x, axis=-1)

    def exp_map(self, x: ArrayLike, v: ArrayLike) -> ManifoldPoint:
        x, v = self._coords(x, v)

        return x + v

    def log_map(self, x: ArrayLike, y: ArrayLike) -> TangentVector:
        x, y = self._coords(x, y)

        return y - x

    def project(self, x: ArrayLike, v: ArrayLike) -> TangentVector:
        _, v = self._coords(x, v)

        return v

    def validate_tangent(self, x: ArrayLike, v: ArrayLike) -> TangentVector:
        """Every finite vector is tangent in flat space."""
        _, v = self._coords(x, v)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("vector has non-finite coordinates")

        return v

    def comparison(self, rho: ArrayLike) -> NDArray[np.float64]:
        return np.ones_like(np.asarray(rho, dtype=np.float64))

    def _sn(self, r: NDArray[np.float64]) -> NDArray[np.float64]:
        return r


class Sphere(Manifold):
    __slots__ = ()

    kind = ManifoldKind.sphere
    curvature = CurvatureBounds(0.0, 1.0)
    injectivity_radius = np.pi

    @property
    def ambient_dimension(self) -> int:
        return self._dimension + 1

    @property
    def signature(self) -> NDArray[np.float64]:
        return np.ones(self._dimension + 1)

    def origin(self) -> ManifoldPoint:
        point = np.zeros(self._dimension + 1)
        point[-1] = 1.0

        return point

    def _split(self, x, y) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        # (cos ρ, tangential part of y at x, ρ)
        cos = np.clip(np.sum(x * y, axis=-1), -1.0, 1.0)
        tangential = y - cos[..., None] * x
        rho = np.arctan2(np.linalg.norm(tangential, axis=-1), cos)

        return cos, tangential, rho

    def distance(self, x: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
        x, y = self._coords(x, y)

        return self._split(x, y)[2]

    def exp_map(self, x: ArrayLike, v: ArrayLike) -> ManifoldPoint:
        x, v = self._coords(x, v)
        length = np.linalg.norm(v, axis=-1)[..., None]
        point = np.cos(length) * x + _sinc(length) * v

        return point / np.linalg.norm(point, axis=-1, keepdims=True)

    def log_map(self, x: ArrayLike, y: ArrayLike) -> TangentVector:
        x, y = self._coords(x, y)
        _, tangential, rho = self._split(x, y)
        if np.any(np.pi - rho < CUT_LOCUS_TOL):
            raise CutLocusError(float(np.max(rho)))

        return tangential / _sinc(rho)[..., None]

    def project(self, x: ArrayLike, v: ArrayLike) -> TangentVector:
        x, v = self._coords(x, v)

        return v - np.sum(x * v, axis=-1, keepdims=True) * x

    def parallel_transport(self, x: ArrayLike, y: ArrayLike, v: ArrayLike) -> TangentVector:
        """Π v = v − ⟨y, v⟩/(1 + ⟨x, y⟩) · (x + y), stable as y approaches x."""
        x, y, v = self._coords(x, y, v)
        cos, _, rho = self._split(x, y)
        if np.any(np.pi - rho < CUT_LOCUS_TOL):
            raise CutLocusError(float(np.max(rho)))

        return v - (np.sum(y * v, axis=-1) / (1.0 + cos))[..., None] * (x + y)

    def comparison(self, rho: ArrayLike) -> NDArray[np.float64]:
        return rho_cot(rho)

    def _sn(self, r: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.sin(r)

    def validate_point(self, x: ArrayLike) -> ManifoldPoint:
        x = super().validate_point(x)
        if np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > _POINT_TOL):
            raise InvalidInputError("sphere point must have unit norm")

        return x


class Hyperbolic(Manifold):
    """Hyperboloid sheet ⟨x, x⟩ = −1, x_d ≥ 1, with the last coordinate time-like."""

    __slots__ = ()

    kind = ManifoldKind.hyperbolic
    curvature = CurvatureBounds(-1.0, 0.0)
    injectivity_radius = np.inf

    @property
    def ambient_dimension(self) -> int:
        return self._dimension + 1

    @property
    def signature(self) -> NDArray[np.float64]:
        signature = np.ones(self._dimension + 1)
        signature[-1] = -1.0

        return signature

    def origin(self) -> ManifoldPoint:
        point = np.zeros(self._dimension + 1)
        point[-1] = 1.0

        return point

    def _minkowski(self, u, v) -> NDArray[np.float64]:
        return np.sum(u * v * self.signature, axis=-1)

    def _split(self, x, y) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        # (tangential part of y at x, ρ)
        cosh = np.maximum(-self._minkowski(x, y), 1.0)
        tangential = y - cosh[..., None] * x
        sinh = np.sqrt(np.maximum(self._minkowski(tangential, tangential), 0.0))
        rho = np.where(cosh > _FAR_COSH, np.arccosh(cosh), np.arcsinh(sinh))

        return tangential, rho

    def distance(self, x: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
        x, y = self._coords(x, y)

        return self._split(x, y)[1]

    def exp_map(self, x: ArrayLike, v: ArrayLike) -> ManifoldPoint:
        x, v = self._coords(x, v)
        length = np.sqrt(np.maximum(self._minkowski(v, v), 0.0))[..., None]
        point = np.cosh(length) * x + _sinhc(length) * v

        return point / np.sqrt(-self._minkowski(point, point))[..., None]

    def log_map(self, x: ArrayLike, y: ArrayLike) -> TangentVector:
        x, y = self._coords(x, y)
        tangential, rho = self._split(x, y)

        return tangential / _sinhc(rho)[..., None]

    def project(self, x: ArrayLike, v: ArrayLike) -> TangentVector:
        x, v = self._coords(x, v)

        return v + self._minkowski(x, v)[..., None] * x

    def parallel_transport(self, x: ArrayLike, y: ArrayLike, v: ArrayLike) -> TangentVector:
        """Π v = v + ⟨y, v⟩/(1 − ⟨x, y⟩) · (x + y), Minkowski products throughout."""
        x, y, v = self._coords(x, y, v)
        coefficient = self._minkowski(y, v) / (1.0 - self._minkowski(x, y))

        return v + coefficient[..., None] * (x + y)

    def comparison(self, rho: ArrayLike) -> NDArray[np.float64]:
        return rho_coth(rho)

    def _sn(self, r: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.sinh(r)

    def validate_point(self, x: ArrayLike) -> ManifoldPoint:
        x = super().validate_point(x)
        scale = np.maximum(1.0, x[..., -1] ** 2)
        if np.any(np.abs(self._minkowski(x, x) + 1.0) > _POINT_TOL * scale):
            raise InvalidInputError("hyperboloid point must have Minkowski norm -1")
        if np.any(x[..., -1] < 1.0 - _POINT_TOL):
            raise InvalidInputError("hyperboloid point must lie on the upper sheet")

        return x


_MANIFOLDS: dict[ManifoldKind, type[Manifold]] = {
    ManifoldKind.euclidean: Euclidean,
    ManifoldKind.sphere: Sphere,
    ManifoldKind.hyperbolic: Hyperbolic,
}


def make_manifold(kind: ManifoldKind, dimension: int) -> Manifold:
    return _MANIFOLDS[kind](dimension)


def hess_operator(
    manifold: Manifold, x: ArrayLike, y: ArrayLike, frame: OrthonormalFrame
) -> FrameMatrix:
    x = manifold.validate_point(x)
    if not np.allclose(frame.base, x, rtol=0.0, atol=1e-12):
        raise InvalidInputError("frame is not attached to x")

    return FrameMatrix(frame, manifold.hessian(x, y, frame))


def hess_bounds_check(H: FrameMatrix, rho: float, bounds: CurvatureBounds) -> bool:
    if rho < 0.0:
        raise DomainError(f"distance must be nonnegative, got {rho}")
    if bounds.kappa1 > 0.0 and np.sqrt(bounds.kappa1) * rho >= np.pi / 2:
        raise DomainError(
            f"sqrt(kappa1)*rho = {np.sqrt(bounds.kappa1) * rho} is not below pi/2"
        )

    eigenvalues = H.eigenvalues()
    lower = float(bounds.lower(rho)) - _BOUNDS_TOL
    upper = float(bounds.upper(rho)) + _BOUNDS_TOL

    return bool(np.all((lower <= eigenvalues) & (eigenvalues <= upper)))
