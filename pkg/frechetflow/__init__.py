import argparse
import dataclasses
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import uvloop

from . import config
from .experiment import Experiment, ReplicationFailed, describe_model
from .frechet import FrechetError, LimitParams
from .geometry import GeometryError
from .limitlaw import LimitLawError
from .logger import setup_logger
from .output import VERSION, ArtifactWriter, OutputError
from .sampling import MAX_SEED, PopulationModel, SamplingError

__all__ = ["__version__", "main"]

__version__ = VERSION

EXIT_OK = 0
EXIT_TEST_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

__log__ = logging.getLogger(__name__)


async def _launch(
    conf: config.Config, model: PopulationModel, workers: Optional[int], out: Path
) -> int:
    async with Experiment(conf, model, workers) as experiment:
        summary = await experiment.run()

    ArtifactWriter(out).write_all(summary)
    __log__.info("Run finished in %.2fs", summary.elapsed)

    return summary.exit_code


def _format_params(params: LimitParams) -> str:
    def block(name: str, value: np.ndarray) -> str:
        return f"{name} =\n{np.array2string(value, precision=6, suppress_small=True)}"

    return "\n".join(
        [
            f"provenance: {params.provenance.value}",
            block("mu", params.mu),
            block("EH", params.EH.entries),
            block("Gamma", params.Gamma.entries),
            block("A", params.A.entries),
            block("sqrtA", params.sqrtA.entries),
        ]
    )


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frechetflow",
        description="Fréchet-mean diffusion experiments on constant-curvature manifolds",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="output logs of third-party components",
    )
    parser.add_argument(
        "-d", "--debug", action="store_true", help="output debugging logs"
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )

    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="simulate the coupled chains and test them")
    run.add_argument("config", help="experiment config file path")
    run.add_argument(
        "--workers",
        type=int,
        default=None,
        help="worker processes (default: machine parallelism)",
    )
    run.add_argument(
        "--seed-override", type=int, default=None, help="replace the configured seed"
    )
    run.add_argument(
        "--out",
        default=None,
        help=f"output directory (default: config, then ${config.OUTPUT_DIR_ENV}, "
        f"then {config.DEFAULT_OUTPUT_DIR})",
    )

    describe = commands.add_parser("describe", help="print the limit parameters")
    describe.add_argument("config", help="experiment config file path")
    describe.add_argument(
        "--seed-override", type=int, default=None, help="replace the configured seed"
    )

    return parser


def _load(path: str, seed: Optional[int]) -> tuple[config.Config, PopulationModel]:
    conf = config.parse(path)
    if seed is not None:
        if not 0 <= seed < MAX_SEED:
            raise config.InvalidValue("experiment", "seed", "override must be a 64-bit unsigned integer")
        conf = dataclasses.replace(
            conf, experiment=dataclasses.replace(conf.experiment, seed=seed)
        )

    return conf, conf.population_model()


def _run(argv: Optional[Sequence[str]]) -> int:
    args = _parser().parse_args(argv)

    setup_logger(args.verbose, args.debug)

    try:
        conf, model = _load(args.config, args.seed_override)
    except OSError as e:
        __log__.error("Failed to read config: %s", e)
        return EXIT_CONFIG
    except (config.ConfigError, SamplingError, GeometryError) as e:
        __log__.error("Invalid config: %s", e)
        return EXIT_CONFIG

    try:
        if args.command == "describe":
            print(_format_params(describe_model(conf, model)))
            return EXIT_OK

        if args.workers is not None and args.workers < 1:
            __log__.error("--workers must be at least 1")
            return EXIT_CONFIG

        out = config.output_dir(conf, args.out)

        return uvloop.run(_launch(conf, model, args.workers, out))
    except ReplicationFailed as e:
        __log__.error("Numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (FrechetError, GeometryError, LimitLawError) as e:
        __log__.error("Numerical failure (seed %d): %s", conf.experiment.seed, e)
        return EXIT_NUMERICAL
    except SamplingError as e:
        __log__.error("Unsupported model: %s", e)
        return EXIT_CONFIG
    except OutputError as e:
        __log__.error("Failed to write artifacts: %s", e)
        return EXIT_CONFIG


def main(argv: Optional[Sequence[str]] = None) -> None:
    try:
        code = _run(argv)
    except KeyboardInterrupt:
        code = 130

    raise SystemExit(code)
