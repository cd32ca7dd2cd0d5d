from typing import Any, Optional

__all__ = [
    "ThresholdError",
    "InvalidToleranceError",
    "InvalidAlphaError",
    "InvalidPermutationsError",
    "Thresholds",
]


_DEFAULT_COVARIANCE_TOL = 0.05
_DEFAULT_MARGINAL_TOL = 0.10
_DEFAULT_ALPHA = 0.01
_DEFAULT_STANDARD_ERRORS = 4.0
_DEFAULT_TREND_REDUCTION = 0.5
_DEFAULT_STOPPED_FRACTION = 0.05
_DEFAULT_PERMUTATIONS = 200
_DEFAULT_EPSILON_SEPARATION = 0.5
_DEFAULT_RESIDUAL_REDUCTION = 0.5


class ThresholdError(Exception):
    pass


class InvalidToleranceError(ThresholdError):
    def __init__(self, name: str, value: float) -> None:
        super().__init__(f"threshold {name} must be positive, got {value}")


class InvalidAlphaError(ThresholdError):
    def __init__(self, value: float) -> None:
        super().__init__(f"alpha must lie in (0, 1), got {value}")


class InvalidPermutationsError(ThresholdError):
    def __init__(self, value: int) -> None:
        super().__init__(f"permutation count must be at least 1, got {value}")


def _pick(value: Optional[float], default: float) -> float:
    return default if value is None else value


class Thresholds:
    """Named pass/fail constants of the statistical tests."""

    __slots__ = (
        "_covariance",
        "_marginal",
        "_alpha",
        "_standard_errors",
        "_trend_reduction",
        "_stopped_fraction",
        "_permutations",
        "_epsilon_separation",
        "_residual_reduction",
    )

    def __init__(
        self,
        covariance: Optional[float] = None,
        marginal: Optional[float] = None,
        alpha: Optional[float] = None,
        standard_errors: Optional[float] = None,
        trend_reduction: Optional[float] = None,
        stopped_fraction: Optional[float] = None,
        permutations: Optional[int] = None,
        epsilon_separation: Optional[float] = None,
        residual_reduction: Optional[float] = None,
    ) -> None:
        self._covariance = _pick(covariance, _DEFAULT_COVARIANCE_TOL)
        self._marginal = _pick(marginal, _DEFAULT_MARGINAL_TOL)
        self._alpha = _pick(alpha, _DEFAULT_ALPHA)
        self._standard_errors = _pick(standard_errors, _DEFAULT_STANDARD_ERRORS)
        self._trend_reduction = _pick(trend_reduction, _DEFAULT_TREND_REDUCTION)
        self._stopped_fraction = _pick(stopped_fraction, _DEFAULT_STOPPED_FRACTION)
        self._permutations = int(_pick(permutations, _DEFAULT_PERMUTATIONS))
        self._epsilon_separation = _pick(epsilon_separation, _DEFAULT_EPSILON_SEPARATION)
        self._residual_reduction = _pick(residual_reduction, _DEFAULT_RESIDUAL_REDUCTION)

        for name in (
            "covariance",
            "marginal",
            "standard_errors",
            "trend_reduction",
            "stopped_fraction",
            "epsilon_separation",
            "residual_reduction",
        ):
            value = getattr(self, name)
            if not value > 0.0:
                raise InvalidToleranceError(name, value)

        if not 0.0 < self._alpha < 1.0:
            raise InvalidAlphaError(self._alpha)

        if self._permutations < 1:
            raise InvalidPermutationsError(self._permutations)

    @property
    def covariance(self) -> float:
        """Relative Frobenius tolerance of the conditional covariance."""
        return self._covariance

    @property
    def marginal(self) -> float:
        """Relative Frobenius tolerance of fixed-time marginals."""
        return self._marginal

    @property
    def alpha(self) -> float:
        return self._alpha

    @property
    def standard_errors(self) -> float:
        return self._standard_errors

    @property
    def trend_reduction(self) -> float:
        return self._trend_reduction

    @property
    def stopped_fraction(self) -> float:
        return self._stopped_fraction

    @property
    def permutations(self) -> int:
        return self._permutations

    @property
    def epsilon_separation(self) -> float:
        return self._epsilon_separation

    @property
    def residual_reduction(self) -> float:
        return self._residual_reduction

    def to_dict(self) -> dict[str, Any]:
        return {name.lstrip("_"): getattr(self, name) for name in self.__slots__}
