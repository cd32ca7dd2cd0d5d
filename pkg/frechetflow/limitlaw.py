from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .frechet import LimitParams
from .geometry import FrameMatrix
from .sampling import RngStream

__all__ = [
    "LimitLawError",
    "DiffusionSpec",
    "gaussian_law_at",
    "brownian_times",
    "sample_brownian_paths",
    "sample_brownian_path",
]

_ROOT_TOL = 1e-10


class LimitLawError(Exception):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Constant-coefficient diffusion dV = sqrtA dB started at 0."""

    A: FrameMatrix
    sqrtA: FrameMatrix

    def __post_init__(self) -> None:
        product = self.sqrtA.entries @ self.sqrtA.entries.T
        scale = max(1.0, float(np.max(np.abs(self.A.entries), initial=0.0)))
        if np.max(np.abs(product - self.A.entries), initial=0.0) > _ROOT_TOL * scale:
            raise LimitLawError("sqrtA·sqrtAᵀ does not reproduce A")

    @classmethod
    def from_params(cls, params: LimitParams) -> "DiffusionSpec":
        return cls(params.A, params.sqrtA)

    @property
    def dimension(self) -> int:
        return self.A.frame.dimension


def gaussian_law_at(spec: DiffusionSpec, t: float) -> tuple[NDArray[np.float64], FrameMatrix]:
    if t < 0.0:
        raise LimitLawError(f"time must be nonnegative, got {t}")

    return np.zeros(spec.dimension), spec.A.scaled(t)


def brownian_times(horizon: float, steps: int) -> NDArray[np.float64]:
    return np.linspace(0.0, horizon, steps + 1)


def sample_brownian_paths(
    spec: DiffusionSpec,
    horizon: float,
    steps: int,
    count: int,
    stream: RngStream,
) -> NDArray[np.float64]:
    """``count`` paths on the uniform grid of ``steps`` intervals, shape
    ``(count, steps + 1, d)``; the first grid value is 0."""
    if steps < 1:
        raise LimitLawError(f"steps must be at least 1, got {steps}")
    if not horizon > 0.0:
        raise LimitLawError(f"horizon must be positive, got {horizon}")
    if count < 0:
        raise LimitLawError(f"path count must be nonnegative, got {count}")

    rng = stream.generator()
    noise = rng.standard_normal((count, steps, spec.dimension))
    increments = np.sqrt(horizon / steps) * (noise @ spec.sqrtA.entries.T)

    paths = np.zeros((count, steps + 1, spec.dimension))
    np.cumsum(increments, axis=1, out=paths[:, 1:])

    return paths


def sample_brownian_path(
    spec: DiffusionSpec, horizon: float, steps: int, stream: RngStream
) -> NDArray[np.float64]:
    return sample_brownian_paths(spec, horizon, steps, 1, stream)[0]
