import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .frechet import (
    FrechetSolveResult,
    LimitParams,
    SolverAbort,
    SolverSettings,
    incremental_mean_update,
)
from .geometry import Manifold, ManifoldPoint
from .sampling import PopulationModel, RngStream, sample

__all__ = [
    "ChainError",
    "StoppedChainError",
    "ChainState",
    "PathRecord",
    "grid_stride",
    "residual_checkpoints",
    "v_increments",
    "v_step",
    "w_step",
    "coupled_step",
    "linearization_residual",
    "run_coupled",
]

GRID_POINTS = 1000
RESIDUAL_BASE = 100

__log__ = logging.getLogger(__name__)


class ChainError(Exception):
    pass


class StoppedChainError(ChainError):
    def __init__(self, k: int) -> None:
        super().__init__(f"chain already left the localization ball at k={k}")


@dataclass(frozen=True, eq=False)
class ChainState:
    """V and W at step k, both as frame coordinates at μ."""

    k: int
    V: NDArray[np.float64]
    W: NDArray[np.float64]
    mean: Optional[FrechetSolveResult] = None
    stopped: bool = False

    @classmethod
    def initial(cls, dimension: int) -> "ChainState":
        return cls(0, np.zeros(dimension), np.zeros(dimension))

    @property
    def mu_k(self) -> Optional[ManifoldPoint]:
        return None if self.mean is None else self.mean.mean


@dataclass(eq=False)
class PathRecord:
    n: int
    horizon: float
    steps: int
    epsilon0: float
    times: NDArray[np.float64]
    V_path: NDArray[np.float64]
    W_path: NDArray[np.float64]
    stopped_flags: NDArray[np.bool_]
    sup_diff: float
    anchored_sup_diff: float
    stopped_at: Optional[float]
    V_epsilon: Optional[NDArray[np.float64]]
    W_epsilon: Optional[NDArray[np.float64]]
    V_terminal: NDArray[np.float64]
    W_terminal: NDArray[np.float64]
    residuals: dict[int, float] = field(default_factory=dict)

    @property
    def stopped(self) -> bool:
        return self.stopped_at is not None


def grid_stride(n: int) -> int:
    return max(1, math.ceil(n / GRID_POINTS))


def residual_checkpoints(steps: int) -> list[int]:
    checkpoints = []
    k = RESIDUAL_BASE
    while k <= steps:
        checkpoints.append(k)
        k *= 2

    return checkpoints


def v_increments(
    manifold: Manifold,
    params: LimitParams,
    k: int,
    V: ArrayLike,
    x_next: ArrayLike,
    n: int,
) -> NDArray[np.float64]:
    """V^n_{k+1} for each candidate next observation in ``x_next``.

    V^n_{k+1} = EH⁻¹ξ/√n + ((k+1)/k)V − (1/k)EH⁻¹H V, and EH⁻¹ξ/√n at k = 0.
    """
    if n < 1 or k < 0:
        raise ChainError(f"need n >= 1 and k >= 0, got n={n}, k={k}")

    frame = params.frame
    xi = frame.coordinates(manifold.log_map(params.mu, x_next))
    drift = params.EH_inv.apply(xi) / math.sqrt(n)
    if k == 0:
        return drift

    V = np.asarray(V, dtype=np.float64)
    G = params.EH_inv.entries @ manifold.hessian(params.mu, x_next, frame)

    return drift + ((k + 1) / k) * V - (G @ V) / k


def v_step(
    manifold: Manifold,
    params: LimitParams,
    k: int,
    V: ArrayLike,
    x_next: ArrayLike,
    n: int,
) -> NDArray[np.float64]:
    x_next = np.asarray(x_next, dtype=np.float64)
    if x_next.ndim != 1:
        raise ChainError("v_step takes a single observation")

    return v_increments(manifold, params, k, V, x_next, n)


def w_step(
    manifold: Manifold,
    params: LimitParams,
    state: ChainState,
    prefix: ArrayLike,
    n: int,
    stop_radius: float,
    solver: SolverSettings = SolverSettings(),
) -> ChainState:
    """Advance W by one observation; ``prefix`` holds X_1..X_{k+1}.

    V is carried over unchanged.
    """
    if state.stopped:
        raise StoppedChainError(state.k)

    prefix = np.asarray(prefix, dtype=np.float64)
    k1 = state.k + 1
    if len(prefix) != k1:
        raise ChainError(f"expected {k1} observations, got {len(prefix)}")

    if state.mean is None:
        mean = FrechetSolveResult(prefix[-1], 0.0, 0, True)
    else:
        mean = incremental_mean_update(
            manifold, state.mean, prefix, solver.tolerance, solver.max_iterations
        )
        if not mean.converged:
            raise SolverAbort(k1, mean)

    W = (k1 / math.sqrt(n)) * params.frame.coordinates(manifold.log_map(params.mu, mean.mean))
    stopped = bool(
        np.linalg.norm(W) >= stop_radius or np.linalg.norm(state.W) >= stop_radius
    )

    return ChainState(k1, state.V, W, mean, stopped)


def coupled_step(
    manifold: Manifold,
    params: LimitParams,
    state: ChainState,
    prefix: ArrayLike,
    n: int,
    stop_radius: float,
    solver: SolverSettings = SolverSettings(),
) -> ChainState:
    prefix = np.asarray(prefix, dtype=np.float64)
    V = v_step(manifold, params, state.k, state.V, prefix[-1], n)
    advanced = w_step(manifold, params, state, prefix, n, stop_radius, solver)

    return dataclasses.replace(advanced, V=V)


def linearization_residual(
    manifold: Manifold,
    params: LimitParams,
    points: ArrayLike,
    mu_k: ArrayLike,
) -> float:
    """|Σ H_{μ,Xᵢ}(log_μ μ_k) − Σ log_μ Xᵢ| / k."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    frame = params.frame
    H = manifold.hessian(params.mu, points, frame).sum(axis=0)
    offset = frame.coordinates(manifold.log_map(params.mu, mu_k))
    total = frame.coordinates(manifold.log_map(params.mu, points)).sum(axis=0)

    return float(np.linalg.norm(H @ offset - total)) / len(points)


def run_coupled(
    model: PopulationModel,
    params: LimitParams,
    n: int,
    horizon: float,
    stop_radius: float,
    epsilon0: float,
    stream: RngStream,
    solver: SolverSettings = SolverSettings(),
) -> PathRecord:
    if n < 1 or not horizon > 0.0 or not stop_radius > 0.0:
        raise ChainError(
            f"need n >= 1, T > 0 and r > 0, got n={n}, T={horizon}, r={stop_radius}"
        )
    if not 0.0 <= epsilon0 <= horizon:
        raise ChainError(f"epsilon0 must lie in [0, T], got {epsilon0}")

    manifold = model.manifold
    steps = math.floor(n * horizon)
    if steps < 1:
        raise ChainError(f"n*T = {n * horizon} leaves no chain steps")

    observations = sample(model, stream, steps)
    stride = grid_stride(n)
    anchor = math.floor(epsilon0 * n)
    checkpoints = set(residual_checkpoints(steps))

    state = ChainState.initial(params.dimension)
    times, Vs, Ws, flags = [0.0], [state.V], [state.W], [False]
    sup_diff = 0.0
    anchored_sup = 0.0
    anchor_diff = np.zeros(params.dimension) if anchor == 0 else None
    V_eps, W_eps = (state.V, state.W) if anchor == 0 else (None, None)
    residuals: dict[int, float] = {}
    stopped_at = None

    for k in range(steps):
        state = coupled_step(
            manifold, params, state, observations[: k + 1], n, stop_radius, solver
        )
        diff = state.W - state.V
        sup_diff = max(sup_diff, float(np.linalg.norm(diff)))

        if state.k == anchor:
            anchor_diff = diff
            V_eps, W_eps = state.V, state.W
        if anchor_diff is not None:
            anchored_sup = max(anchored_sup, float(np.linalg.norm(diff - anchor_diff)))

        if state.k in checkpoints:
            residuals[state.k] = linearization_residual(
                manifold, params, observations[: state.k], state.mu_k
            )

        if state.k % stride == 0 or state.k == steps or state.stopped:
            times.append(state.k / n)
            Vs.append(state.V)
            Ws.append(state.W)
            flags.append(state.stopped)

        if state.stopped:
            stopped_at = state.k / n
            __log__.debug("Path n=%d left the ball of radius %g at t=%g", n, stop_radius, stopped_at)
            break

    return PathRecord(
        n=n,
        horizon=horizon,
        steps=steps,
        epsilon0=epsilon0,
        times=np.array(times),
        V_path=np.array(Vs),
        W_path=np.array(Ws),
        stopped_flags=np.array(flags),
        sup_diff=sup_diff,
        anchored_sup_diff=anchored_sup,
        stopped_at=stopped_at,
        V_epsilon=V_eps,
        W_epsilon=W_eps,
        V_terminal=state.V,
        W_terminal=state.W,
        residuals=residuals,
    )
