import logging
import math
from dataclasses import dataclass, field
from typing import Any, ClassVar, Mapping, Optional, Sequence, Union

import dcor
import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats
from scipy.spatial.distance import cdist

from .chains import PathRecord, v_increments, v_step
from .frechet import LimitParams
from .geometry import FrameMatrix
from .model import StreamPurpose, TestStatus
from .sampling import PopulationModel, RngStream, sample
from .thresholds import Thresholds

__all__ = [
    "MIN_COVARIANCE_SAMPLES",
    "MIN_ENERGY_SAMPLES",
    "MIN_TREND_REPLICATIONS",
    "VerifyError",
    "PreconditionError",
    "TestReport",
    "covariance_match",
    "calibrated_replications",
    "marginal_match",
    "energy_gaussianity",
    "sup_diff_trend",
    "martingale_and_condcov",
    "second_moment_bound",
    "residual_trend",
    "epsilon0_scaling",
]

MIN_COVARIANCE_SAMPLES = 100
MIN_ENERGY_SAMPLES = 500
MIN_TREND_REPLICATIONS = 100
MIN_CONDITIONAL_REPLICATIONS = 100

_NEGLIGIBLE = 1e-10
_ZERO_COVARIANCE = 1e-20
_PSD_TOL = 1e-10

__log__ = logging.getLogger(__name__)


class VerifyError(Exception):
    pass


class PreconditionError(VerifyError):
    def __init__(self, test_id: str, reason: str) -> None:
        super().__init__(f"{test_id}: {reason}")

        self.test_id = test_id


@dataclass(frozen=True, eq=False)
class TestReport:
    __test__: ClassVar[bool] = False

    test_id: str
    statistic: float
    threshold: float
    status: TestStatus
    replications: int
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status is TestStatus.passed

    @property
    def inconclusive(self) -> bool:
        return self.status is TestStatus.inconclusive

    def to_dict(self) -> dict[str, Any]:
        return {
            "test_id": self.test_id,
            "statistic": _finite_or_none(self.statistic),
            "threshold": _finite_or_none(self.threshold),
            "status": self.status.value,
            "pass": self.passed,
            "replications": self.replications,
            "metadata": self.metadata,
        }


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _status(ok: bool) -> TestStatus:
    return TestStatus.passed if ok else TestStatus.failed


def _entries(target: Union[FrameMatrix, ArrayLike]) -> NDArray[np.float64]:
    if isinstance(target, FrameMatrix):
        return np.asarray(target.entries, dtype=np.float64)

    return np.atleast_2d(np.asarray(target, dtype=np.float64))


def _empirical_covariance(samples: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.atleast_2d(np.cov(samples, rowvar=False))


def _relative_frobenius(estimate: NDArray[np.float64], target: NDArray[np.float64]) -> float:
    scale = float(np.linalg.norm(target))
    if scale == 0.0:
        return 0.0 if float(np.linalg.norm(estimate)) <= _ZERO_COVARIANCE else np.inf

    return float(np.linalg.norm(estimate - target)) / scale


def covariance_match(
    samples: ArrayLike,
    target: Union[FrameMatrix, ArrayLike],
    rel_tol: float,
    test_id: str = "covariance_match",
    metadata: Optional[dict[str, Any]] = None,
) -> TestReport:
    """Relative Frobenius distance of the sample covariance from ``target``.

    A zero target passes only against a zero sample covariance.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if len(samples) < MIN_COVARIANCE_SAMPLES:
        raise PreconditionError(
            test_id, f"need at least {MIN_COVARIANCE_SAMPLES} samples, got {len(samples)}"
        )

    target = _entries(target)
    if np.max(np.abs(target - target.T), initial=0.0) > _PSD_TOL:
        raise PreconditionError(test_id, "target covariance is not symmetric")
    if np.linalg.eigvalsh(target)[0] < -_PSD_TOL:
        raise PreconditionError(test_id, "target covariance is not positive semidefinite")

    statistic = _relative_frobenius(_empirical_covariance(samples), target)

    return TestReport(
        test_id,
        statistic,
        rel_tol,
        _status(statistic <= rel_tol),
        len(samples),
        dict(metadata or {}),
    )


def calibrated_replications(
    target: Union[FrameMatrix, ArrayLike], rel_tol: float, alpha: float
) -> int:
    """Smallest sample count at which exact N(0, target) draws exceed
    ``rel_tol`` with probability at most ``alpha``.

    Under N(0, target) the squared statistic is close to a scaled chi-square
    with d(d+1)/2 degrees of freedom and mean (1 + tr(target)²/‖target‖²_F)/R.
    """
    target = _entries(target)
    scale = float(np.linalg.norm(target))
    if scale <= _ZERO_COVARIANCE:
        return MIN_COVARIANCE_SAMPLES

    dof = len(target) * (len(target) + 1) // 2
    mean = 1.0 + float(np.trace(target)) ** 2 / scale**2
    needed = mean / dof * float(stats.chi2.ppf(1.0 - alpha, dof)) / rel_tol**2

    return max(MIN_COVARIANCE_SAMPLES, math.ceil(needed))


def marginal_match(
    samples: ArrayLike,
    target: Union[FrameMatrix, ArrayLike],
    rel_tol: float,
    alpha: float,
    test_id: str = "marginal_match",
    metadata: Optional[dict[str, Any]] = None,
) -> TestReport:
    """``covariance_match`` that refuses to judge sample counts too small to
    hold ``rel_tol`` at level ``alpha``."""
    samples = np.asarray(samples, dtype=np.float64)
    needed = calibrated_replications(target, rel_tol, alpha)
    if len(samples) < needed:
        raise PreconditionError(
            test_id,
            f"{len(samples)} samples cannot resolve a {rel_tol:g} tolerance at "
            f"level {alpha:g}, need {needed}",
        )

    return covariance_match(
        samples,
        target,
        rel_tol,
        test_id,
        {**(metadata or {}), "alpha": alpha, "min_replications": needed},
    )


def _energy(distances: NDArray[np.float64], left: NDArray[np.intp], right: NDArray[np.intp]) -> float:
    return float(
        2.0 * distances[np.ix_(left, right)].mean()
        - distances[np.ix_(left, left)].mean()
        - distances[np.ix_(right, right)].mean()
    )


def energy_gaussianity(
    samples: ArrayLike,
    target: Union[FrameMatrix, ArrayLike],
    alpha: float,
    stream: RngStream,
    permutations: int = 200,
    test_id: str = "energy_gaussianity",
    metadata: Optional[dict[str, Any]] = None,
    reference: Optional[ArrayLike] = None,
) -> TestReport:
    """Two-sample energy test of ``samples`` against N(0, target), calibrated
    by ``permutations`` label shuffles of the pooled sample.

    The comparison sample is ``reference`` when given (draws of the limiting
    diffusion at the same time), otherwise fresh N(0, target) draws.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    count = len(samples)
    if count < MIN_ENERGY_SAMPLES:
        raise PreconditionError(
            test_id, f"need at least {MIN_ENERGY_SAMPLES} samples, got {count}"
        )

    target = _entries(target)
    if reference is None:
        reference_rng = stream.with_purpose(StreamPurpose.reference).generator()
        reference = reference_rng.multivariate_normal(
            np.zeros(len(target)), target, size=count, method="eigh"
        )
    else:
        reference = np.atleast_2d(np.asarray(reference, dtype=np.float64))
        if reference.shape[1:] != samples.shape[1:] or len(reference) < MIN_ENERGY_SAMPLES:
            raise PreconditionError(
                test_id,
                f"reference sample of shape {reference.shape} does not fit samples "
                f"of shape {samples.shape}",
            )
    statistic = float(dcor.energy_distance(samples, reference))

    pooled = np.concatenate([samples, reference])
    distances = cdist(pooled, pooled)
    shuffle_rng = stream.with_purpose(StreamPurpose.permutation).generator()
    null = np.empty(permutations)
    for i in range(permutations):
        order = shuffle_rng.permutation(len(pooled))
        null[i] = _energy(distances, order[:count], order[count:])
    threshold = float(np.quantile(null, 1.0 - alpha))

    return TestReport(
        test_id,
        statistic,
        threshold,
        _status(statistic <= threshold),
        count,
        {"alpha": alpha, "permutations": permutations, **(metadata or {})},
    )


def _quantiles(values: NDArray[np.float64]) -> dict[str, float]:
    q25, median, q75 = np.quantile(values, [0.25, 0.5, 0.75])

    return {"median": float(median), "q25": float(q25), "q75": float(q75)}


def sup_diff_trend(
    records: Mapping[int, Sequence[PathRecord]],
    thresholds: Thresholds = Thresholds(),
    attribute: str = "sup_diff",
    test_id: str = "sup_diff_trend",
) -> TestReport:
    """Median sup|W − V| must fall strictly with n.

    The statistic is the larger of the worst consecutive median ratio and the
    end-to-end ratio over the required reduction (that term only when the n
    span is at least 8); the trend holds when it is below 1.
    """
    ns = sorted(records)
    if len(ns) < 2:
        raise PreconditionError(test_id, "need at least two values of n")
    for n in ns:
        if len(records[n]) < MIN_TREND_REPLICATIONS:
            raise PreconditionError(
                test_id,
                f"n={n} has {len(records[n])} replications, "
                f"need {MIN_TREND_REPLICATIONS}",
            )

    summaries = {}
    stopped = {}
    medians = []
    for n in ns:
        values = np.array([getattr(r, attribute) for r in records[n]])
        summaries[str(n)] = _quantiles(values)
        stopped[str(n)] = float(np.mean([r.stopped for r in records[n]]))
        medians.append(summaries[str(n)]["median"])
    medians = np.array(medians)

    metadata = {"n": ns, "quantiles": summaries, "stopped_fraction": stopped}
    replications = sum(len(records[n]) for n in ns)

    if max(stopped.values()) > thresholds.stopped_fraction:
        __log__.warning(
            "%s inconclusive: stopped fractions %s exceed %g",
            test_id,
            stopped,
            thresholds.stopped_fraction,
        )
        return TestReport(test_id, np.nan, 1.0, TestStatus.inconclusive, replications, metadata)

    if np.all(medians < _NEGLIGIBLE):
        return TestReport(test_id, 0.0, 1.0, TestStatus.passed, replications, metadata)

    with np.errstate(divide="ignore", invalid="ignore"):
        steps = medians[1:] / medians[:-1]
    statistic = float(np.max(np.nan_to_num(steps, nan=np.inf)))
    if ns[-1] / ns[0] >= 8:
        statistic = max(statistic, float(medians[-1] / medians[0]) / thresholds.trend_reduction)

    return TestReport(
        test_id, statistic, 1.0, _status(statistic < 1.0), replications, metadata
    )


def martingale_and_condcov(
    model: PopulationModel,
    params: LimitParams,
    n: int,
    k: int,
    replications: int,
    stream: RngStream,
    thresholds: Thresholds = Thresholds(),
    v: Optional[ArrayLike] = None,
    test_id: str = "martingale_condcov",
) -> TestReport:
    """Resample X_{k+1} with V^n_k = v held fixed.

    Passes when the mean increment lies in the standard-error band around 0
    and the increment covariance matches A/n; the statistic is the larger of
    the two normalized deviations.
    """
    if replications < MIN_CONDITIONAL_REPLICATIONS:
        raise PreconditionError(
            test_id,
            f"need at least {MIN_CONDITIONAL_REPLICATIONS} replications, got {replications}",
        )
    if k < 1:
        raise PreconditionError(test_id, f"conditioning step k must be at least 1, got {k}")

    manifold = model.manifold
    if v is None:
        history = sample(model, stream.with_purpose(StreamPurpose.data), k)
        v = np.zeros(params.dimension)
        for j in range(k):
            v = v_step(manifold, params, j, v, history[j], n)
    v = np.asarray(v, dtype=np.float64)

    x = sample(model, stream.with_purpose(StreamPurpose.conditional), replications)
    increments = v_increments(manifold, params, k, v, x, n) - v

    mean_norm = float(np.linalg.norm(increments.mean(axis=0)))
    band = thresholds.standard_errors * np.sqrt(params.A.trace() / (n * replications))
    floor = _NEGLIGIBLE * (1.0 + float(np.linalg.norm(v)))
    mean_score = 0.0 if mean_norm <= floor else (mean_norm / band if band > 0.0 else np.inf)

    target = params.A.entries / n
    cov_error = _relative_frobenius(_empirical_covariance(increments), target)
    cov_score = cov_error / thresholds.covariance

    statistic = max(mean_score, cov_score)

    return TestReport(
        test_id,
        statistic,
        1.0,
        _status(statistic <= 1.0),
        replications,
        {
            "n": n,
            "k": k,
            "v": v.tolist(),
            "mean_norm": mean_norm,
            "mean_band": float(band),
            "covariance_error": _finite_or_none(cov_error),
        },
    )


def second_moment_bound(
    values: ArrayLike,
    params: LimitParams,
    n: int,
    epsilon0: float,
    thresholds: Thresholds = Thresholds(),
    test_id: str = "second_moment_bound",
) -> TestReport:
    """E|V^n_{[ε0 n]}|² against α·tr Γ·(1/n + ε0·c0) plus a standard-error margin."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if len(values) < 2:
        raise PreconditionError(test_id, "need at least two replications")

    squared = np.sum(values * values, axis=1)
    estimate = float(squared.mean())
    standard_error = float(squared.std(ddof=1) / np.sqrt(len(squared)))
    bound = params.alpha * params.second_moment * (1.0 / n + epsilon0 * params.growth_constant)
    threshold = bound + thresholds.standard_errors * standard_error

    return TestReport(
        test_id,
        estimate,
        threshold,
        _status(estimate <= threshold),
        len(values),
        {
            "n": n,
            "epsilon0": epsilon0,
            "bound": bound,
            "alpha": params.alpha,
            "beta": params.beta,
            "growth_constant": params.growth_constant,
        },
    )


def residual_trend(
    records: Sequence[PathRecord],
    thresholds: Thresholds = Thresholds(),
    k_small: int = 100,
    k_large: int = 1600,
    test_id: str = "residual_trend",
) -> TestReport:
    small = np.array([r.residuals[k_small] for r in records if k_small in r.residuals])
    large = np.array([r.residuals[k_large] for r in records if k_large in r.residuals])
    if len(small) == 0 or len(large) == 0:
        raise PreconditionError(
            test_id, f"no recorded residuals at k={k_small} and k={k_large}"
        )

    first, last = float(np.median(small)), float(np.median(large))
    if first < _NEGLIGIBLE and last < _NEGLIGIBLE:
        statistic = 0.0
    else:
        statistic = last / first if first > 0.0 else np.inf

    return TestReport(
        test_id,
        statistic,
        thresholds.residual_reduction,
        _status(statistic <= thresholds.residual_reduction),
        len(large),
        {"k": [k_small, k_large], "median": [first, last]},
    )


def epsilon0_scaling(
    values: ArrayLike,
    params: LimitParams,
    epsilon0: float,
    thresholds: Thresholds = Thresholds(),
    test_id: str = "epsilon0_scaling",
) -> TestReport:
    """Separation of the covariance at ε0 from ε0²·A; passes when it exceeds
    the threshold."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if len(values) < MIN_COVARIANCE_SAMPLES:
        raise PreconditionError(
            test_id, f"need at least {MIN_COVARIANCE_SAMPLES} samples, got {len(values)}"
        )

    statistic = _relative_frobenius(
        _empirical_covariance(values), epsilon0 * epsilon0 * params.A.entries
    )

    return TestReport(
        test_id,
        statistic,
        thresholds.epsilon_separation,
        _status(statistic > thresholds.epsilon_separation),
        len(values),
        {"epsilon0": epsilon0, "rejects": "epsilon0^2 * A"},
    )
