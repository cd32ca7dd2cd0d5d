import os
from abc import ABC
from configparser import ConfigParser, Error as ParserError, SectionProxy
from dataclasses import MISSING, dataclass, fields
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin

import numpy as np

from .frechet import SolverSettings
from .geometry import make_manifold
from .model import ManifoldKind, ModelKind, MomentMethod
from .sampling import (
    MAX_SEED,
    AnisotropicGaussian,
    Distribution,
    GaussianPushforward,
    GeodesicBall,
    PointMasses,
    PopulationModel,
    UniformCircle,
)
from .thresholds import Thresholds

__all__ = [
    "OUTPUT_DIR_ENV",
    "DEFAULT_OUTPUT_DIR",
    "ConfigError",
    "MissingSection",
    "MissingField",
    "InvalidField",
    "InvalidValue",
    "Manifold",
    "Model",
    "Experiment",
    "Solver",
    "Conditional",
    "ThresholdSection",
    "Config",
    "parse",
    "parse_text",
    "output_dir",
]

OUTPUT_DIR_ENV = "FRECHETFLOW_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "results"

Floats = tuple[float, ...]
Ints = tuple[int, ...]
Points = tuple[Floats, ...]


def _where(section: str, field: str, line: Optional[int]) -> str:
    place = f"field {field} in section {section}"

    return place if line is None else f"{place} (line {line})"


class ConfigError(Exception):
    pass


class MissingSection(ConfigError):
    def __init__(self, section: str) -> None:
        super().__init__(f"missing config section {section}")


class MissingField(ConfigError):
    def __init__(self, section: str, field: str) -> None:
        super().__init__(f"missing {_where(section, field, None)}")


class InvalidField(ConfigError):
    def __init__(self, section: str, field: str, line: Optional[int] = None) -> None:
        super().__init__(f"{_where(section, field, line)} has an invalid value")


class InvalidValue(ConfigError):
    def __init__(
        self, section: str, field: str, reason: str, line: Optional[int] = None
    ) -> None:
        super().__init__(f"{_where(section, field, line)}: {reason}")

        self.section = section
        self.field = field


@dataclass(frozen=True)
class _Section(ABC):
    pass


@dataclass(frozen=True)
class _OptionalSection(ABC):
    pass


@dataclass(frozen=True)
class Manifold(_Section):
    kind: ManifoldKind
    dimension: int


@dataclass(frozen=True)
class Model(_Section):
    kind: ModelKind
    center: Optional[Floats] = None
    radius: Optional[float] = None
    scale: Optional[float] = None
    scales: Optional[Floats] = None
    truncation: Optional[float] = None
    # tangent coordinates at the center, one point per ';'
    atoms: Optional[Points] = None
    weights: Optional[Floats] = None


@dataclass(frozen=True)
class Experiment(_Section):
    n_list: Ints
    replications: int
    seed: int
    horizon: float = 1.0
    stop_radius: float = 10.0
    epsilon0: Optional[float] = None
    mc_samples: int = 100_000
    moments: MomentMethod = MomentMethod.auto
    output: Optional[str] = None

    @property
    def anchor_time(self) -> float:
        return 0.05 * self.horizon if self.epsilon0 is None else self.epsilon0


@dataclass(frozen=True)
class Solver(_OptionalSection):
    tolerance: Optional[float] = None
    max_iterations: Optional[int] = None


@dataclass(frozen=True)
class Conditional(_OptionalSection):
    n: Optional[int] = None
    k: Optional[int] = None
    replications: Optional[int] = None


@dataclass(frozen=True)
class ThresholdSection(_OptionalSection):
    covariance: Optional[float] = None
    marginal: Optional[float] = None
    alpha: Optional[float] = None
    standard_errors: Optional[float] = None
    trend_reduction: Optional[float] = None
    stopped_fraction: Optional[float] = None
    permutations: Optional[int] = None
    epsilon_separation: Optional[float] = None
    residual_reduction: Optional[float] = None


@dataclass(frozen=True)
class Config:
    manifold: Manifold
    model: Model
    experiment: Experiment
    solver: Solver
    conditional: Conditional
    thresholds: ThresholdSection

    def solver_settings(self) -> SolverSettings:
        defaults = SolverSettings()

        return SolverSettings(
            defaults.tolerance if self.solver.tolerance is None else self.solver.tolerance,
            defaults.max_iterations
            if self.solver.max_iterations is None
            else self.solver.max_iterations,
        )

    def threshold_preset(self) -> Thresholds:
        return Thresholds(
            **{f.name: getattr(self.thresholds, f.name) for f in fields(self.thresholds)}
        )

    def population_model(self) -> PopulationModel:
        """Builds the sampling model; support-rule violations surface as
        ``ModelConfigurationError`` from the sampling layer."""
        manifold = make_manifold(self.manifold.kind, self.manifold.dimension)
        center = manifold.origin() if self.model.center is None else np.array(self.model.center)
        distribution = _distribution(self.model, manifold, center)

        return PopulationModel.build(manifold, distribution, center)


def _require(model: Model, name: str) -> Any:
    value = getattr(model, name)
    if value is None:
        raise InvalidValue("model", name, f"required for {model.kind.value} models")

    return value


def _distribution(model: Model, manifold, center) -> Distribution:
    match model.kind:
        case ModelKind.uniform_circle:
            return UniformCircle(_require(model, "radius"))
        case ModelKind.ball_uniform:
            return GeodesicBall(_require(model, "radius"))
        case ModelKind.gaussian:
            return GaussianPushforward(_require(model, "scale"), model.truncation)
        case ModelKind.anisotropic_gaussian:
            return AnisotropicGaussian(_require(model, "scales"), model.truncation)
        case ModelKind.discrete:
            coords = np.array(_require(model, "atoms"), dtype=np.float64)
            weights = _require(model, "weights")
            if coords.ndim != 2 or coords.shape[1] != manifold.dimension:
                raise InvalidValue(
                    "model", "atoms", f"each atom needs {manifold.dimension} tangent coordinates"
                )
            frame = manifold.frame(center)
            points = manifold.exp_map(center, frame.vector(coords))
            return PointMasses(tuple(tuple(float(c) for c in p) for p in points), weights)


def _locate(lines: list[str], section: str, field: str) -> Optional[int]:
    current = None
    for number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
        elif current == section and stripped.split("=", 1)[0].strip() == field:
            return number

    return None


def _convert(ftype: Any, raw: str) -> Any:
    if get_origin(ftype) is tuple:
        inner = get_args(ftype)[0]
        separator = ";" if get_origin(inner) is tuple else ","
        parts = [part.strip() for part in raw.split(separator)]
        if not all(parts):
            raise ValueError(f"empty item in {raw!r}")
        return tuple(_convert(inner, part) for part in parts)
    return ftype(raw.strip())


def _field_type(annotation: Any) -> Any:
    if get_origin(annotation) is Union:
        return next(t for t in get_args(annotation) if t is not type(None))

    return annotation


def _extract_section(
    section_proxy: SectionProxy, section: type[Any], lines: list[str]
) -> Any:
    kwargs = {}

    for field in fields(section):
        if field.name not in section_proxy:
            if field.default is not MISSING:
                continue
            raise MissingField(section_proxy.name, field.name)
        try:
            kwargs[field.name] = _convert(_field_type(field.type), section_proxy[field.name])
        except ValueError:
            raise InvalidField(
                section_proxy.name, field.name, _locate(lines, section_proxy.name, field.name)
            )

    return section(**kwargs)


def _extract_config(config_parser: ConfigParser, lines: list[str]) -> Config:
    kwargs = {}

    for field in fields(Config):
        section: type[Any] = field.type  # pyright: ignore reportAssignmentType
        if field.name not in config_parser:
            if issubclass(section, _OptionalSection):
                kwargs[field.name] = section()
                continue
            raise MissingSection(field.name)
        kwargs[field.name] = _extract_section(config_parser[field.name], section, lines)

    return Config(**kwargs)


def _check(condition: bool, section: str, field: str, reason: str, lines: list[str]) -> None:
    if not condition:
        raise InvalidValue(section, field, reason, _locate(lines, section, field))


def _validate(conf: Config, lines: list[str]) -> None:
    experiment = conf.experiment
    n_list = experiment.n_list

    _check(conf.manifold.dimension >= 1, "manifold", "dimension", "must be at least 1", lines)
    _check(len(n_list) > 0, "experiment", "n_list", "must not be empty", lines)
    _check(
        all(a < b for a, b in zip(n_list, n_list[1:])),
        "experiment",
        "n_list",
        "must be strictly ascending",
        lines,
    )
    _check(n_list[0] >= 1, "experiment", "n_list", "values must be positive", lines)
    _check(experiment.horizon > 0.0, "experiment", "horizon", "must be positive", lines)
    _check(experiment.stop_radius > 0.0, "experiment", "stop_radius", "must be positive", lines)
    _check(
        0.0 < experiment.anchor_time < experiment.horizon,
        "experiment",
        "epsilon0",
        "must lie strictly between 0 and the horizon",
        lines,
    )
    _check(experiment.replications >= 1, "experiment", "replications", "must be at least 1", lines)
    _check(
        0 <= experiment.seed < MAX_SEED,
        "experiment",
        "seed",
        "must be a 64-bit unsigned integer",
        lines,
    )
    _check(experiment.mc_samples >= 1, "experiment", "mc_samples", "must be at least 1", lines)

    solver = conf.solver
    _check(
        solver.tolerance is None or solver.tolerance > 0.0,
        "solver",
        "tolerance",
        "must be positive",
        lines,
    )
    _check(
        solver.max_iterations is None or solver.max_iterations >= 1,
        "solver",
        "max_iterations",
        "must be at least 1",
        lines,
    )

    conditional = conf.conditional
    for name in ("n", "k", "replications"):
        value = getattr(conditional, name)
        _check(value is None or value >= 1, "conditional", name, "must be at least 1", lines)

    try:
        conf.threshold_preset()
    except Exception as e:
        raise InvalidValue("thresholds", "*", str(e))
    try:
        conf.solver_settings()
    except Exception as e:
        raise InvalidValue("solver", "*", str(e))


def parse_text(text: str) -> Config:
    config_parser = ConfigParser()
    try:
        config_parser.read_string(text)
    except ParserError as e:
        raise ConfigError(f"malformed config: {e}")

    lines = text.splitlines()
    conf = _extract_config(config_parser, lines)
    _validate(conf, lines)

    return conf


def parse(path: Union[str, Path]) -> Config:
    with open(path, "r") as f:
        return parse_text(f.read())


def output_dir(conf: Config, override: Optional[str] = None) -> Path:
    """``--out`` first, then the config, the environment and the default."""
    for candidate in (override, conf.experiment.output, os.environ.get(OUTPUT_DIR_ENV)):
        if candidate:
            return Path(candidate)

    return Path(DEFAULT_OUTPUT_DIR)
