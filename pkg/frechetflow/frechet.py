import logging
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .geometry import FrameMatrix, Manifold, ManifoldPoint, OrthonormalFrame
from .model import MomentMethod, Provenance
from .sampling import (
    SINGULARITY_TOL,
    PopulationModel,
    RngStream,
    SingularityError,
    UnsupportedModelError,
    population_moments,
    sample,
)

__all__ = [
    "FrechetError",
    "AssumptionViolation",
    "NumericalFailure",
    "SolverAbort",
    "SolverSettings",
    "FrechetSolveResult",
    "LimitParams",
    "frechet_mean",
    "incremental_mean_update",
    "estimate_limit_params",
    "limit_params_from_moments",
]

_MIN_STEP = 2.0**-40
_WEIGHT_SUM_TOL = 1e-10
_NEGATIVE_EIGEN_TOL = 1e-10
_FRAME_MATCH_TOL = 1e-8
_MC_CHUNK = 100_000

__log__ = logging.getLogger(__name__)


class FrechetError(Exception):
    pass


class AssumptionViolation(FrechetError):
    def __init__(self, smallest_eigenvalue: float) -> None:
        super().__init__(
            f"E[H] is not invertible: smallest eigenvalue {smallest_eigenvalue!r} "
            f"< {SINGULARITY_TOL:g}"
        )

        self.smallest_eigenvalue = smallest_eigenvalue


class NumericalFailure(FrechetError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"numerical failure: {reason}")


class SolverAbort(FrechetError):
    def __init__(self, k: int, result: "FrechetSolveResult") -> None:
        super().__init__(
            f"Fréchet solver did not converge at k={k} after {result.iterations} "
            f"iterations (gradient norm {result.gradient_norm!r})"
        )

        self.k = k
        self.result = result


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-10
    max_iterations: int = 10_000

    def __post_init__(self) -> None:
        if not self.tolerance > 0.0:
            raise FrechetError(f"solver tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise FrechetError(
                f"solver max_iterations must be at least 1, got {self.max_iterations}"
            )


@dataclass(frozen=True, eq=False)
class FrechetSolveResult:
    mean: ManifoldPoint
    gradient_norm: float
    iterations: int
    converged: bool


def frechet_mean(
    manifold: Manifold,
    points: ArrayLike,
    weights: Optional[ArrayLike] = None,
    init: Optional[ArrayLike] = None,
    tol: float = SolverSettings.tolerance,
    max_iter: int = SolverSettings.max_iterations,
) -> FrechetSolveResult:
    """Weighted Fréchet mean by fixed-point iteration with step halving.

    Cold solves start at the first point. A step is taken when it lowers the
    functional; when the change is below the functional's rounding noise
    (``len(points)`` ulps) it is taken only if the gradient norm shrinks.
    Rejected (halved) steps count as iterations; ``converged`` is False once
    ``max_iter`` is spent.
    """
    points = np.atleast_2d(manifold.validate_point(points))
    if weights is None:
        weights = np.full(len(points), 1.0 / len(points))
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(points),):
            raise FrechetError(f"{len(weights)} weights for {len(points)} points")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > _WEIGHT_SUM_TOL:
            raise FrechetError("weights must be nonnegative and sum to 1")

    x = points[0] if init is None else manifold.validate_point(init)

    def functional(p: ManifoldPoint) -> float:
        return 0.5 * float(weights @ manifold.distance(p, points) ** 2)

    def gradient(p: ManifoldPoint) -> NDArray[np.float64]:
        return weights @ manifold.log_map(p, points)

    value = functional(x)
    step_dir = gradient(x)
    gradient_norm = float(manifold.norm(x, step_dir))
    tau = 1.0
    iterations = 0

    while gradient_norm > tol and iterations < max_iter:
        iterations += 1
        candidate = manifold.exp_map(x, tau * step_dir)
        candidate_value = functional(candidate)

        if candidate_value < value:
            x, value = candidate, candidate_value
            step_dir = gradient(x)
            gradient_norm = float(manifold.norm(x, step_dir))
            tau = 1.0
            continue

        # within rounding noise of the functional, the gradient decides
        if candidate_value - value <= len(points) * np.spacing(value):
            candidate_dir = gradient(candidate)
            candidate_norm = float(manifold.norm(candidate, candidate_dir))
            if candidate_norm < gradient_norm:
                x, value = candidate, candidate_value
                step_dir, gradient_norm = candidate_dir, candidate_norm
                tau = 1.0
                continue

        tau *= 0.5
        if tau < _MIN_STEP:
            break

    return FrechetSolveResult(x, gradient_norm, iterations, gradient_norm <= tol)


def incremental_mean_update(
    manifold: Manifold,
    prev: FrechetSolveResult,
    prefix: ArrayLike,
    tol: float = SolverSettings.tolerance,
    max_iter: int = SolverSettings.max_iterations,
) -> FrechetSolveResult:
    """Re-solve the mean of ``prefix`` (the previous points plus the new
    arrival as its last row) warm-started at ``prev.mean``."""
    if not prev.converged:
        raise FrechetError("warm start requires a converged previous mean")

    return frechet_mean(manifold, prefix, init=prev.mean, tol=tol, max_iter=max_iter)


@dataclass(frozen=True, eq=False)
class LimitParams:
    mu: ManifoldPoint
    EH: FrameMatrix
    EH_inv: FrameMatrix
    Gamma: FrameMatrix
    A: FrameMatrix
    sqrtA: FrameMatrix
    B: FrameMatrix
    second_moment: float
    provenance: Provenance

    @property
    def frame(self) -> OrthonormalFrame:
        return self.EH.frame

    @property
    def dimension(self) -> int:
        return self.frame.dimension

    @property
    def alpha(self) -> float:
        """Squared spectral norm of E[H]⁻¹."""
        return float(np.linalg.norm(self.EH_inv.entries, ord=2) ** 2)

    @property
    def beta(self) -> float:
        return max(float(self.B.eigenvalues()[-1]) - 1.0, 0.0)

    @property
    def growth_constant(self) -> float:
        """Π_j (1 + β/j²) = sinh(π√β)/(π√β)."""
        root = np.pi * np.sqrt(self.beta)

        return 1.0 if root == 0.0 else float(np.sinh(root) / root)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mu": self.mu.tolist(),
            "frame": self.frame.basis.tolist(),
            "EH": self.EH.entries.tolist(),
            "EH_inv": self.EH_inv.entries.tolist(),
            "Gamma": self.Gamma.entries.tolist(),
            "A": self.A.entries.tolist(),
            "sqrtA": self.sqrtA.entries.tolist(),
            "B": self.B.entries.tolist(),
            "second_moment": self.second_moment,
            "provenance": self.provenance.value,
        }


def limit_params_from_moments(
    mu: ManifoldPoint,
    frame: OrthonormalFrame,
    EH: NDArray[np.float64],
    Gamma: NDArray[np.float64],
    B: NDArray[np.float64],
    provenance: Provenance,
) -> LimitParams:
    smallest = float(np.linalg.eigvalsh(0.5 * (EH + EH.T))[0])
    if smallest < SINGULARITY_TOL:
        raise AssumptionViolation(smallest)

    gamma_min = float(np.linalg.eigvalsh(Gamma)[0])
    if gamma_min < -_NEGATIVE_EIGEN_TOL:
        raise NumericalFailure(f"Γ has a negative eigenvalue {gamma_min!r}")

    EH_inv = np.linalg.inv(EH)
    A = EH_inv @ Gamma @ EH_inv.T
    A = 0.5 * (A + A.T)

    eigenvalues, vectors = linalg.eigh(A)
    if eigenvalues[0] < -_NEGATIVE_EIGEN_TOL:
        raise NumericalFailure(f"A has a negative eigenvalue {eigenvalues[0]!r}")
    sqrtA = (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T

    def wrap(entries: NDArray[np.float64]) -> FrameMatrix:
        return FrameMatrix(frame, entries)

    return LimitParams(
        mu=mu,
        EH=wrap(EH),
        EH_inv=wrap(EH_inv),
        Gamma=wrap(Gamma),
        A=wrap(A),
        sqrtA=wrap(sqrtA),
        B=wrap(B),
        second_moment=float(np.trace(Gamma)),
        provenance=provenance,
    )


def _reexpress(matrix: FrameMatrix, frame: OrthonormalFrame) -> NDArray[np.float64]:
    source = matrix.frame
    if not np.allclose(source.base, frame.base, rtol=0.0, atol=_FRAME_MATCH_TOL):
        raise FrechetError("mu is not the model's Fréchet mean")
    q = (frame.basis * frame.signature) @ source.basis.T

    return q @ matrix.entries @ q.T


def _monte_carlo_moments(
    model: PopulationModel,
    mu: ManifoldPoint,
    frame: OrthonormalFrame,
    mc_samples: int,
    stream: RngStream,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    manifold = model.manifold
    d = frame.dimension
    points = sample(model, stream, mc_samples)

    EH = np.zeros((d, d))
    Gamma = np.zeros((d, d))
    for start in range(0, mc_samples, _MC_CHUNK):
        chunk = points[start : start + _MC_CHUNK]
        EH += manifold.hessian(mu, chunk, frame).sum(axis=0)
        xi = frame.coordinates(manifold.log_map(mu, chunk))
        Gamma += xi.T @ xi
    EH /= mc_samples
    Gamma /= mc_samples

    smallest = float(np.linalg.eigvalsh(0.5 * (EH + EH.T))[0])
    if smallest < SINGULARITY_TOL:
        raise AssumptionViolation(smallest)
    EH_inv = np.linalg.inv(EH)

    B = np.zeros((d, d))
    for start in range(0, mc_samples, _MC_CHUNK):
        G = EH_inv @ manifold.hessian(mu, points[start : start + _MC_CHUNK], frame)
        B += np.einsum("ikj,ikl->jl", G, G)
    B /= mc_samples

    return EH, Gamma, B


def estimate_limit_params(
    model: PopulationModel,
    mu: ArrayLike,
    frame: OrthonormalFrame,
    mc_samples: int,
    stream: RngStream,
    method: MomentMethod = MomentMethod.auto,
) -> LimitParams:
    mu = model.manifold.validate_point(mu)

    moments = None
    if method is MomentMethod.auto:
        try:
            moments = population_moments(model)
        except UnsupportedModelError:
            __log__.info("No closed form for %s moments, using Monte Carlo", model.kind.value)
        except SingularityError as e:
            raise AssumptionViolation(e.smallest_eigenvalue) from e

    if moments is not None:
        EH = _reexpress(moments.EH, frame)
        Gamma = _reexpress(moments.Gamma, frame)
        B = _reexpress(moments.B, frame)
        provenance = Provenance.analytic
    else:
        if mc_samples < 1:
            raise FrechetError(f"mc_samples must be positive, got {mc_samples}")
        EH, Gamma, B = _monte_carlo_moments(model, mu, frame, mc_samples, stream)
        provenance = Provenance.monte_carlo

    params = limit_params_from_moments(mu, frame, EH, Gamma, B, provenance)
    __log__.debug(
        "Limit parameters (%s): A eigenvalues %s", provenance.value, params.A.eigenvalues()
    )

    return params
