from typing import Callable

import numpy as np
import pytest

from frechetflow.frechet import LimitParams, estimate_limit_params
from frechetflow.geometry import Euclidean, Hyperbolic, Manifold, Sphere
from frechetflow.model import StreamPurpose
from frechetflow.sampling import (
    GaussianPushforward,
    PointMasses,
    PopulationModel,
    RngStream,
    UniformCircle,
)

# E[H] and Γ of the uniform law on the circle of radius 0.5 around the pole of S²
CIRCLE_RADIUS = 0.5
CIRCLE_EH = (1.0 + CIRCLE_RADIUS / np.tan(CIRCLE_RADIUS)) / 2.0
CIRCLE_GAMMA = CIRCLE_RADIUS**2 / 2.0
CIRCLE_A = CIRCLE_GAMMA / CIRCLE_EH**2


@pytest.fixture(
    params=[Euclidean(3), Sphere(2), Sphere(3), Hyperbolic(2), Hyperbolic(3)],
    ids=repr,
)
def manifold(request) -> Manifold:
    return request.param


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def random_points(rng) -> Callable[[Manifold, int, float], np.ndarray]:
    """Points exp_o(v) with tangent coordinates of scale ``spread`` at the origin."""

    def draw(manifold: Manifold, count: int, spread: float = 0.6) -> np.ndarray:
        origin = manifold.origin()
        frame = manifold.frame(origin)
        coords = spread * rng.standard_normal((count, manifold.dimension))
        return manifold.exp_map(origin, frame.vector(coords))

    return draw


@pytest.fixture
def random_tangents(rng) -> Callable[[Manifold, np.ndarray, float], np.ndarray]:
    def draw(manifold: Manifold, base: np.ndarray, scale: float = 1.0) -> np.ndarray:
        raw = scale * rng.standard_normal(base.shape)
        return manifold.project(base, raw)

    return draw


@pytest.fixture
def sphere() -> Sphere:
    return Sphere(2)


@pytest.fixture
def circle_model(sphere) -> PopulationModel:
    return PopulationModel.build(sphere, UniformCircle(CIRCLE_RADIUS))


@pytest.fixture
def circle_params(circle_model) -> LimitParams:
    mu = circle_model.center_point()
    return estimate_limit_params(
        circle_model, mu, circle_model.frame(), 1, RngStream(1, 0, StreamPurpose.moments)
    )


@pytest.fixture
def flat_model() -> PopulationModel:
    return PopulationModel.build(Euclidean(2), GaussianPushforward(1.0, truncation=5.0))


@pytest.fixture
def flat_params(flat_model) -> LimitParams:
    return estimate_limit_params(
        flat_model,
        flat_model.center_point(),
        flat_model.frame(),
        1,
        RngStream(1, 0, StreamPurpose.moments),
    )


@pytest.fixture
def pole_mass_model(sphere) -> PopulationModel:
    return PopulationModel.build(sphere, PointMasses(((0.0, 0.0, 1.0),), (1.0,)))
