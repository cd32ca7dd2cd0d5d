import numpy as np
import pytest

from conftest import CIRCLE_A, CIRCLE_EH, CIRCLE_GAMMA
from frechetflow.frechet import (
    AssumptionViolation,
    FrechetError,
    NumericalFailure,
    SolverSettings,
    estimate_limit_params,
    frechet_mean,
    incremental_mean_update,
    limit_params_from_moments,
)
from frechetflow.geometry import Euclidean, Hyperbolic, Sphere
from frechetflow.model import MomentMethod, Provenance, StreamPurpose
from frechetflow.sampling import (
    AnisotropicGaussian,
    PopulationModel,
    RngStream,
    sample,
)

MOMENTS = RngStream(5, 0, StreamPurpose.moments)


def test_single_point_is_its_own_mean(manifold, random_points):
    p = random_points(manifold, 1)[0]

    result = frechet_mean(manifold, p[None, :])

    np.testing.assert_array_equal(result.mean, p)
    assert result.converged
    assert result.iterations <= 1


def test_flat_weighted_mean(rng):
    points = rng.standard_normal((40, 3))
    weights = rng.dirichlet(np.ones(40))

    result = frechet_mean(Euclidean(3), points, weights)

    np.testing.assert_allclose(result.mean, weights @ points, rtol=0.0, atol=1e-12)
    assert result.converged


def test_octant_corners_average_to_diagonal():
    sphere = Sphere(2)

    result = frechet_mean(sphere, np.eye(3))

    np.testing.assert_allclose(result.mean, np.ones(3) / np.sqrt(3.0), atol=1e-10)
    assert result.gradient_norm <= SolverSettings.tolerance


def test_two_points_average_to_the_midpoint(manifold, random_points):
    x, y = random_points(manifold, 2, 0.5)
    midpoint = manifold.exp_map(x, 0.5 * manifold.log_map(x, y))

    result = frechet_mean(manifold, np.stack([x, y]))

    assert manifold.distance(result.mean, midpoint) < 1e-9


def test_mean_satisfies_stationarity(manifold, random_points):
    points = random_points(manifold, 30, 0.4)

    result = frechet_mean(manifold, points)
    gradient = manifold.log_map(result.mean, points).mean(axis=0)

    assert result.converged
    assert manifold.norm(result.mean, gradient) <= 1.01 * SolverSettings.tolerance


def test_mean_minimizes_the_functional(manifold, random_points, random_tangents):
    points = random_points(manifold, 30, 0.4)
    mean = frechet_mean(manifold, points).mean
    nearby = manifold.exp_map(
        np.broadcast_to(mean, (50, len(mean))),
        random_tangents(manifold, np.broadcast_to(mean, (50, len(mean))), 0.05),
    )

    def functional(p):
        return np.sum(manifold.distance(p, points) ** 2)

    assert all(functional(mean) <= functional(q) + 1e-12 for q in nearby)


def test_iteration_budget_is_reported(rng):
    sphere = Sphere(2)
    points = sphere.exp_map(sphere.origin(), np.c_[0.4 * rng.standard_normal((20, 2)), np.zeros(20)])

    result = frechet_mean(sphere, points, max_iter=1)

    assert not result.converged
    assert result.iterations == 1
    assert result.gradient_norm > SolverSettings.tolerance


@pytest.mark.parametrize(
    "weights", [[0.5, 0.6], [1.5, -0.5], [1.0]], ids=["sum", "negative", "length"]
)
def test_invalid_weights_are_rejected(weights):
    with pytest.raises(FrechetError):
        frechet_mean(Euclidean(1), [[0.0], [1.0]], weights)


def test_invalid_solver_settings_are_rejected():
    with pytest.raises(FrechetError):
        SolverSettings(tolerance=0.0)
    with pytest.raises(FrechetError):
        SolverSettings(max_iterations=0)


def test_running_average_in_flat_space(rng):
    flat = Euclidean(2)
    points = rng.standard_normal((10, 2))

    prev = frechet_mean(flat, points[:9])
    result = incremental_mean_update(flat, prev, points)

    np.testing.assert_allclose(result.mean, (9 * prev.mean + points[9]) / 10, atol=1e-12)


def test_warm_and_cold_solves_agree(circle_model):
    sphere = circle_model.manifold
    points = sample(circle_model, RngStream(11), 100)
    tol = SolverSettings.tolerance

    prev = frechet_mean(sphere, points[:1])
    for k in range(2, 101):
        prev = incremental_mean_update(sphere, prev, points[:k])
        cold = frechet_mean(sphere, points[:k])

        assert prev.converged and cold.converged
        assert sphere.distance(prev.mean, cold.mean) < 10 * tol


def test_long_circle_stream_converges_at_default_tolerance(circle_model):
    sphere = circle_model.manifold
    points = sample(circle_model, RngStream(7301, 0, StreamPurpose.data), 250)

    prev = frechet_mean(sphere, points[:1])
    for k in range(2, 251):
        prev = incremental_mean_update(sphere, prev, points[:k])
        cold = frechet_mean(sphere, points[:k], tol=1e-10)

        assert prev.converged, (k, prev.iterations, prev.gradient_norm)
        assert cold.converged, (k, cold.iterations, cold.gradient_norm)
        assert cold.iterations < 1_000


def test_iterates_never_raise_the_functional(rng):
    sphere = Sphere(2)
    points = sphere.exp_map(sphere.origin(), np.c_[0.6 * rng.standard_normal((30, 2)), np.zeros(30)])

    def functional(p):
        return 0.5 * np.mean(sphere.distance(p, points) ** 2)

    values = [functional(frechet_mean(sphere, points, max_iter=budget).mean) for budget in range(8)]

    slack = len(points) * np.spacing(values[0])
    assert all(later <= earlier + slack for earlier, later in zip(values, values[1:]))


def test_warm_start_needs_a_converged_mean():
    flat = Euclidean(1)
    stale = frechet_mean(flat, [[0.0], [1.0]], max_iter=0)

    with pytest.raises(FrechetError):
        incremental_mean_update(flat, stale, [[0.0], [1.0], [2.0]])


def test_scalar_limit_params():
    frame = Euclidean(2).frame(np.zeros(2))

    params = limit_params_from_moments(
        np.zeros(2), frame, 2.0 * np.eye(2), np.eye(2), np.eye(2), Provenance.analytic
    )

    np.testing.assert_allclose(params.A.entries, 0.25 * np.eye(2))
    np.testing.assert_allclose(params.sqrtA.entries, 0.5 * np.eye(2))
    np.testing.assert_allclose(params.EH.entries @ params.EH_inv.entries, np.eye(2), atol=1e-10)
    assert params.alpha == pytest.approx(0.25)
    assert params.second_moment == pytest.approx(2.0)


def test_rank_deficient_gamma_has_a_root():
    frame = Euclidean(2).frame(np.zeros(2))
    gamma = np.diag([0.16, 0.0])

    params = limit_params_from_moments(
        np.zeros(2), frame, np.diag([1.0, 0.9]), gamma, np.eye(2), Provenance.analytic
    )

    np.testing.assert_allclose(params.sqrtA.entries @ params.sqrtA.entries.T, params.A.entries, atol=1e-10)
    assert params.A.eigenvalues()[0] >= 0.0


def test_singular_expected_hessian_is_an_assumption_violation():
    frame = Euclidean(2).frame(np.zeros(2))

    with pytest.raises(AssumptionViolation) as info:
        limit_params_from_moments(
            np.zeros(2), frame, np.diag([1.0, 1e-9]), np.eye(2), np.eye(2), Provenance.analytic
        )

    assert info.value.smallest_eigenvalue == pytest.approx(1e-9)


def test_negative_gamma_is_a_numerical_failure():
    frame = Euclidean(2).frame(np.zeros(2))

    with pytest.raises(NumericalFailure):
        limit_params_from_moments(
            np.zeros(2), frame, np.eye(2), np.diag([1.0, -1e-6]), np.eye(2), Provenance.analytic
        )


def test_circle_limit_params(circle_params):
    np.testing.assert_allclose(circle_params.EH.entries, CIRCLE_EH * np.eye(2), rtol=1e-12)
    np.testing.assert_allclose(circle_params.A.entries, CIRCLE_A * np.eye(2), rtol=1e-12)
    np.testing.assert_allclose(
        circle_params.sqrtA.entries @ circle_params.sqrtA.entries.T,
        circle_params.A.entries,
        atol=1e-10,
    )
    assert CIRCLE_EH == pytest.approx(0.957616, abs=1e-5)
    assert CIRCLE_A == pytest.approx(0.136303, abs=1e-5)
    assert circle_params.provenance is Provenance.analytic


def test_growth_constant_of_the_circle(circle_params):
    c = 0.5 / np.tan(0.5)
    beta = ((1.0 + c * c) / 2.0) / CIRCLE_EH**2 - 1.0
    root = np.pi * np.sqrt(beta)

    assert circle_params.beta == pytest.approx(beta, rel=1e-10)
    assert circle_params.growth_constant == pytest.approx(np.sinh(root) / root, rel=1e-10)
    assert circle_params.alpha == pytest.approx(CIRCLE_EH**-2, rel=1e-12)


def test_flat_model_has_no_growth(flat_params):
    assert flat_params.beta == 0.0
    assert flat_params.growth_constant == 1.0
    np.testing.assert_allclose(flat_params.A.entries, flat_params.Gamma.entries)


def test_monte_carlo_converges_to_closed_form(circle_model):
    mu = circle_model.center_point()
    frame = circle_model.frame()

    coarse, fine = (
        estimate_limit_params(circle_model, mu, frame, count, MOMENTS, MomentMethod.monte_carlo)
        for count in (10_000, 1_000_000)
    )

    assert fine.provenance is Provenance.monte_carlo
    coarse_error = np.linalg.norm(coarse.A.entries - CIRCLE_A * np.eye(2))
    fine_error = np.linalg.norm(fine.A.entries - CIRCLE_A * np.eye(2))

    assert fine_error < 5e-3 * CIRCLE_A
    assert fine_error < coarse_error
    np.testing.assert_allclose(fine.Gamma.entries, CIRCLE_GAMMA * np.eye(2), rtol=1e-2, atol=1e-3)


def test_anisotropic_model_falls_back_to_monte_carlo():
    model = PopulationModel.build(Hyperbolic(2), AnisotropicGaussian((0.3, 0.1), truncation=1.5))

    params = estimate_limit_params(
        model, model.center_point(), model.frame(), 50_000, MOMENTS
    )

    assert params.provenance is Provenance.monte_carlo
    # curvature only lifts E[H] above the identity on the hyperboloid
    assert np.all(params.EH.eigenvalues() > 1.0)
    np.testing.assert_allclose(np.diag(params.Gamma.entries), [0.09, 0.01], rtol=0.05)


def test_limit_params_need_the_population_mean(circle_model):
    sphere = circle_model.manifold
    off = sphere.exp_map(sphere.origin(), np.array([0.1, 0.0, 0.0]))

    with pytest.raises(FrechetError):
        estimate_limit_params(circle_model, off, sphere.frame(off), 1, MOMENTS)


def test_a_is_invariant_under_frame_relabeling(circle_model):
    sphere = circle_model.manifold
    mu = circle_model.center_point()
    relabeled = sphere.frame(mu, order=[1, 0, 2])

    base = estimate_limit_params(circle_model, mu, circle_model.frame(), 1, MOMENTS)
    moved = estimate_limit_params(circle_model, mu, relabeled, 1, MOMENTS)

    np.testing.assert_allclose(moved.A.eigenvalues(), base.A.eigenvalues(), atol=1e-9)
