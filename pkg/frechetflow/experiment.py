import asyncio
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from types import TracebackType
from typing import Any, Callable, Optional, Type, Union

import numpy as np

from .chains import ChainError, PathRecord, run_coupled
from .config import Config
from .frechet import (
    AssumptionViolation,
    FrechetError,
    LimitParams,
    SolverSettings,
    estimate_limit_params,
)
from .geometry import GeometryError, ManifoldPoint
from .limitlaw import DiffusionSpec, gaussian_law_at, sample_brownian_paths
from .logger import timed
from .model import ModelKind, StreamPurpose, TestStatus
from .sampling import (
    PopulationModel,
    RngStream,
    SamplingError,
    SingularityError,
    population_moments,
)
from .verify import (
    PreconditionError,
    TestReport,
    energy_gaussianity,
    epsilon0_scaling,
    marginal_match,
    martingale_and_condcov,
    residual_trend,
    second_moment_bound,
    sup_diff_trend,
)

__all__ = [
    "MOMENT_EXPONENT",
    "DEFAULT_CONDITIONAL_REPLICATIONS",
    "ExperimentError",
    "ReplicationFailed",
    "NSummary",
    "RunSummary",
    "population_mean",
    "describe_model",
    "evaluate",
    "Experiment",
]

# compact support gives every moment; recorded as the exponent δ in E[ρ^{2+δ}] < ∞
MOMENT_EXPONENT = 1
DEFAULT_CONDITIONAL_REPLICATIONS = 100_000
RESIDUAL_CHECKPOINTS = (100, 1600)
REFERENCE_STEPS = 100

__log__ = logging.getLogger(__name__)


class ExperimentError(Exception):
    pass


class ReplicationFailed(ExperimentError):
    def __init__(self, n: int, replication: int, seed: int, reason: str) -> None:
        super().__init__(f"replication {replication} (n={n}, seed={seed}) failed: {reason}")

        self.n = n
        self.replication = replication
        self.seed = seed


@dataclass(frozen=True)
class _Task:
    model: PopulationModel
    params: LimitParams
    n: int
    horizon: float
    stop_radius: float
    epsilon0: float
    seed: int
    replication: int
    solver: SolverSettings


@dataclass(frozen=True)
class _Failure:
    replication: int
    reason: str


def _replicate(task: _Task) -> Union[PathRecord, _Failure]:
    stream = RngStream(task.seed, task.replication, StreamPurpose.data)
    try:
        return run_coupled(
            task.model,
            task.params,
            task.n,
            task.horizon,
            task.stop_radius,
            task.epsilon0,
            stream,
            task.solver,
        )
    except (FrechetError, ChainError, GeometryError, SamplingError) as e:
        # custom exception signatures do not survive the trip back from a worker
        return _Failure(task.replication, f"{type(e).__name__}: {e}")


def population_mean(model: PopulationModel) -> ManifoldPoint:
    """The center for every shipped continuous law; solved for point masses."""
    if model.kind is not ModelKind.discrete:
        return model.center_point()

    try:
        return population_moments(model).mu
    except SingularityError as e:
        raise AssumptionViolation(e.smallest_eigenvalue) from e


def describe_model(conf: Config, model: PopulationModel) -> LimitParams:
    mu = population_mean(model)
    stream = RngStream(conf.experiment.seed, 0, StreamPurpose.moments)

    return estimate_limit_params(
        model,
        mu,
        model.manifold.frame(mu),
        conf.experiment.mc_samples,
        stream,
        conf.experiment.moments,
    )


@dataclass(frozen=True)
class NSummary:
    n: int
    steps: int
    replications: int
    sup_diff: dict[str, float]
    anchored_sup_diff: dict[str, float]
    stopped_fraction: float
    rows: int

    @classmethod
    def of(cls, n: int, records: list[PathRecord]) -> "NSummary":
        def quantiles(values: list[float]) -> dict[str, float]:
            q25, median, q75 = np.quantile(values, [0.25, 0.5, 0.75])
            return {"median": float(median), "q25": float(q25), "q75": float(q75)}

        return cls(
            n=n,
            steps=records[0].steps,
            replications=len(records),
            sup_diff=quantiles([r.sup_diff for r in records]),
            anchored_sup_diff=quantiles([r.anchored_sup_diff for r in records]),
            stopped_fraction=float(np.mean([r.stopped for r in records])),
            rows=sum(len(r.times) for r in records),
        )


@dataclass
class RunSummary:
    config: dict[str, Any]
    params: LimitParams
    per_n: dict[int, NSummary]
    reports: list[TestReport]
    records: dict[int, list[PathRecord]] = field(default_factory=dict)
    elapsed: float = 0.0
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 0 if all(r.status is not TestStatus.failed for r in self.reports) else 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "limit_params": self.params.to_dict(),
            "moment_exponent": MOMENT_EXPONENT,
            "per_n": {str(n): asdict(s) for n, s in self.per_n.items()},
            "reports": {r.test_id: r.status.value for r in self.reports},
            "all_passed": self.exit_code == 0,
        }


def _echo(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _echo(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_echo(v) for v in value]

    return value


def _guarded(test_id: str, run: Callable[[], TestReport]) -> TestReport:
    try:
        return run()
    except PreconditionError as e:
        __log__.warning("%s inconclusive: %s", test_id, e)
        return TestReport(test_id, np.nan, np.nan, TestStatus.inconclusive, 0, {"reason": str(e)})


def evaluate(
    conf: Config,
    model: PopulationModel,
    params: LimitParams,
    records: dict[int, list[PathRecord]],
) -> list[TestReport]:
    experiment = conf.experiment
    thresholds = conf.threshold_preset()
    horizon = experiment.horizon
    epsilon0 = experiment.anchor_time
    diffusion = DiffusionSpec.from_params(params)
    _, law_T = gaussian_law_at(diffusion, horizon)
    _, law_epsilon0 = gaussian_law_at(diffusion, epsilon0)
    reports: list[TestReport] = []

    for n, group in records.items():
        live = [r for r in group if not r.stopped]
        terminal = np.array([r.W_terminal for r in live]).reshape(-1, params.dimension)
        anchored = [r for r in group if r.W_epsilon is not None]
        W_eps = np.array([r.W_epsilon for r in anchored]).reshape(-1, params.dimension)
        V_eps = np.array([r.V_epsilon for r in anchored]).reshape(-1, params.dimension)
        meta = {"n": n, "T": horizon, "model": model.kind.value, "seed": experiment.seed}
        reference = RngStream(experiment.seed, n, StreamPurpose.reference)
        limit_draws = sample_brownian_paths(
            diffusion,
            horizon,
            REFERENCE_STEPS,
            len(terminal),
            reference.with_purpose(StreamPurpose.brownian),
        )[:, -1]

        reports.append(
            _guarded(
                f"marginal_T[n={n}]",
                lambda: marginal_match(
                    terminal, law_T, thresholds.marginal, thresholds.alpha,
                    f"marginal_T[n={n}]", meta,
                ),
            )
        )
        reports.append(
            _guarded(
                f"energy_gaussianity[n={n}]",
                lambda: energy_gaussianity(
                    terminal, law_T, thresholds.alpha, reference,
                    thresholds.permutations, f"energy_gaussianity[n={n}]", meta,
                    limit_draws,
                ),
            )
        )
        reports.append(
            _guarded(
                f"marginal_epsilon0[n={n}]",
                lambda: marginal_match(
                    W_eps, law_epsilon0, thresholds.marginal, thresholds.alpha,
                    f"marginal_epsilon0[n={n}]", {**meta, "epsilon0": epsilon0},
                ),
            )
        )
        reports.append(
            _guarded(
                f"epsilon0_scaling[n={n}]",
                lambda: epsilon0_scaling(
                    W_eps, params, epsilon0, thresholds, f"epsilon0_scaling[n={n}]"
                ),
            )
        )
        reports.append(
            _guarded(
                f"second_moment_bound[n={n}]",
                lambda: second_moment_bound(
                    V_eps, params, n, epsilon0, thresholds, f"second_moment_bound[n={n}]"
                ),
            )
        )

    reports.append(_guarded("sup_diff_trend", lambda: sup_diff_trend(records, thresholds)))
    reports.append(
        _guarded(
            "anchored_sup_diff_trend",
            lambda: sup_diff_trend(
                records, thresholds, "anchored_sup_diff", "anchored_sup_diff_trend"
            ),
        )
    )

    largest = max(records)
    k_small, k_large = RESIDUAL_CHECKPOINTS
    reports.append(
        _guarded(
            "residual_trend",
            lambda: residual_trend(records[largest], thresholds, k_small, k_large),
        )
    )

    conditional = conf.conditional
    cond_n = conditional.n or largest
    cond_k = conditional.k or max(1, cond_n // 2)
    cond_r = conditional.replications or DEFAULT_CONDITIONAL_REPLICATIONS
    reports.append(
        _guarded(
            "martingale_condcov",
            lambda: martingale_and_condcov(
                model,
                params,
                cond_n,
                cond_k,
                cond_r,
                RngStream(experiment.seed, 0, StreamPurpose.conditional),
                thresholds,
            ),
        )
    )

    for report in reports:
        level = logging.INFO if report.status is TestStatus.passed else logging.WARNING
        __log__.log(
            level, "%s: %s (statistic %.6g, threshold %.6g)",
            report.test_id, report.status.value, report.statistic, report.threshold,
        )

    return reports


class Experiment:
    """Runs the configured sweep on a process pool; use as an async context manager."""

    __slots__ = ("conf", "model", "_workers", "_executor")

    def __init__(
        self, conf: Config, model: PopulationModel, workers: Optional[int] = None
    ) -> None:
        self.conf = conf
        self.model = model
        self._workers = workers or os.cpu_count() or 1
        self._executor: Optional[ProcessPoolExecutor] = None

        if self._workers < 1:
            raise ExperimentError(f"worker count must be at least 1, got {self._workers}")

    @property
    def workers(self) -> int:
        return self._workers

    async def __aenter__(self) -> "Experiment":
        self._executor = ProcessPoolExecutor(max_workers=self._workers)

        return self

    async def __aexit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_value: Optional[BaseException],
        traceback: Optional[TracebackType],
    ) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=exc_type is not None)
            self._executor = None

    async def simulate(self, params: LimitParams, n: int) -> list[PathRecord]:
        if self._executor is None:
            raise ExperimentError("experiment is not running")

        experiment = self.conf.experiment
        solver = self.conf.solver_settings()
        loop = asyncio.get_running_loop()
        tasks = [
            _Task(
                self.model,
                params,
                n,
                experiment.horizon,
                experiment.stop_radius,
                experiment.anchor_time,
                experiment.seed,
                replication,
                solver,
            )
            for replication in range(experiment.replications)
        ]
        results = await asyncio.gather(
            *(loop.run_in_executor(self._executor, _replicate, task) for task in tasks)
        )

        for result in results:
            if isinstance(result, _Failure):
                raise ReplicationFailed(n, result.replication, experiment.seed, result.reason)

        return results  # pyright: ignore[reportReturnType]

    async def run(self) -> RunSummary:
        timings: dict[str, float] = {}

        with timed(__log__, "Run") as total:
            with timed(__log__, "Limit parameters") as watch:
                params = describe_model(self.conf, self.model)
            timings["limit_params"] = watch.elapsed
            __log__.info(
                "Limit parameters (%s): A eigenvalues %s",
                params.provenance.value,
                params.A.eigenvalues(),
            )

            records: dict[int, list[PathRecord]] = {}
            for n in self.conf.experiment.n_list:
                __log__.info(
                    "Simulating n=%d over %d replications on %d workers",
                    n,
                    self.conf.experiment.replications,
                    self._workers,
                )
                with timed(__log__, f"n={n}") as watch:
                    records[n] = await self.simulate(params, n)
                timings[f"n={n}"] = watch.elapsed

            with timed(__log__, "Evaluation") as watch:
                reports = evaluate(self.conf, self.model, params, records)
            timings["evaluation"] = watch.elapsed

        return RunSummary(
            config=_echo(asdict(self.conf)),
            params=params,
            per_n={n: NSummary.of(n, group) for n, group in records.items()},
            reports=reports,
            records=records,
            elapsed=total.elapsed,
            timings=timings,
        )
