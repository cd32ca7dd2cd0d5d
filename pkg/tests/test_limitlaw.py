import numpy as np
import pytest

from conftest import CIRCLE_A
from frechetflow.geometry import Euclidean, FrameMatrix
from frechetflow.limitlaw import (
    DiffusionSpec,
    LimitLawError,
    brownian_times,
    gaussian_law_at,
    sample_brownian_path,
    sample_brownian_paths,
)
from frechetflow.model import StreamPurpose
from frechetflow.sampling import RngStream

STREAM = RngStream(77, 0, StreamPurpose.brownian)


def test_marginal_covariance_is_linear_in_time(circle_params):
    spec = DiffusionSpec.from_params(circle_params)

    mean, cov = gaussian_law_at(spec, 1.0)

    np.testing.assert_array_equal(mean, np.zeros(2))
    np.testing.assert_allclose(cov.entries, CIRCLE_A * np.eye(2), rtol=1e-12)
    np.testing.assert_allclose(gaussian_law_at(spec, 0.25)[1].entries, 0.25 * cov.entries)
    np.testing.assert_array_equal(gaussian_law_at(spec, 0.0)[1].entries, np.zeros((2, 2)))


def test_negative_time_is_rejected(circle_params):
    with pytest.raises(LimitLawError):
        gaussian_law_at(DiffusionSpec.from_params(circle_params), -0.1)


def test_mismatched_root_is_rejected():
    frame = Euclidean(2).frame(np.zeros(2))

    with pytest.raises(LimitLawError):
        DiffusionSpec(FrameMatrix(frame, np.eye(2)), FrameMatrix(frame, 2.0 * np.eye(2)))


def test_paths_start_at_zero_on_a_uniform_grid(circle_params):
    paths = sample_brownian_paths(DiffusionSpec.from_params(circle_params), 2.0, 50, 10, STREAM)

    assert paths.shape == (10, 51, 2)
    np.testing.assert_array_equal(paths[:, 0], 0.0)
    np.testing.assert_allclose(brownian_times(2.0, 50)[[0, 1, -1]], [0.0, 0.04, 2.0])


def test_path_marginals_match_the_law(circle_params):
    spec = DiffusionSpec.from_params(circle_params)

    paths = sample_brownian_paths(spec, 1.0, 20, 20_000, STREAM)

    for index, t in ((5, 0.25), (20, 1.0)):
        np.testing.assert_allclose(
            np.cov(paths[:, index].T), gaussian_law_at(spec, t)[1].entries, atol=0.04 * t * CIRCLE_A * 3
        )


def test_increments_are_independent(circle_params):
    paths = sample_brownian_paths(DiffusionSpec.from_params(circle_params), 1.0, 2, 20_000, STREAM)
    first = paths[:, 1, 0]
    second = paths[:, 2, 0] - paths[:, 1, 0]

    assert abs(np.corrcoef(first, second)[0, 1]) < 0.03


def test_single_path_is_the_first_of_many(circle_params):
    spec = DiffusionSpec.from_params(circle_params)

    np.testing.assert_array_equal(
        sample_brownian_path(spec, 1.0, 10, STREAM), sample_brownian_paths(spec, 1.0, 10, 1, STREAM)[0]
    )


@pytest.mark.parametrize("horizon, steps, count", [(1.0, 0, 1), (0.0, 10, 1), (1.0, 10, -1)])
def test_path_arguments_are_validated(circle_params, horizon, steps, count):
    with pytest.raises(LimitLawError):
        sample_brownian_paths(DiffusionSpec.from_params(circle_params), horizon, steps, count, STREAM)
