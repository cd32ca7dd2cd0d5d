import asyncio
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import frechetflow
from frechetflow import config
from frechetflow.chains import run_coupled
from frechetflow.experiment import (
    Experiment,
    ReplicationFailed,
    describe_model,
    evaluate,
    population_mean,
)
from frechetflow.model import StreamPurpose, TestStatus
from frechetflow.output import VERSION, jsonable, path_frame
from frechetflow.sampling import RngStream
from frechetflow.verify import calibrated_replications

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMOKE = CONFIGS / "euclidean_smoke.ini"

SPHERE = """\
[manifold]
kind = sphere
dimension = 2

[model]
kind = uniform_circle
radius = {radius}

[experiment]
n_list = 40, 80
replications = 4
seed = 3
{extra}
"""


def _main(*argv: str) -> int:
    with pytest.raises(SystemExit) as info:
        frechetflow.main(list(argv))

    return info.value.code


def _write(tmp_path: Path, radius: float = 0.5, extra: str = "") -> Path:
    path = tmp_path / "sphere.ini"
    path.write_text(SPHERE.format(radius=radius, extra=extra))

    return path


def test_smoke_run_writes_every_artifact(tmp_path):
    out = tmp_path / "out"

    assert _main("run", str(SMOKE), "--workers", "1", "--out", str(out)) == 0

    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "paths_100.csv",
        "plotdata_supdiff.csv",
        "reports.json",
        "summary.json",
        "timing.json",
    ]

    paths = pd.read_csv(out / "paths_100.csv")
    assert list(paths.columns) == ["replication", "t", "V_1", "V_2", "W_1", "W_2", "stopped"]
    assert len(paths) == 10 * 101
    np.testing.assert_allclose(paths["V_1"], paths["W_1"], atol=1e-10)

    summary = json.loads((out / "summary.json").read_text())
    assert summary["version"] == VERSION
    assert summary["files"]["paths_100.csv"] == len(paths)
    assert summary["limit_params"]["provenance"] == "analytic"
    assert summary["per_n"]["100"]["stopped_fraction"] == 0.0
    assert summary["reports"]["martingale_condcov"] == "pass"

    reports = {r["test_id"]: r for r in json.loads((out / "reports.json").read_text())}
    # ten replications are too few for the marginal and trend checks
    assert reports["marginal_T[n=100]"]["status"] == "inconclusive"
    assert reports["sup_diff_trend"]["status"] == "inconclusive"
    assert reports["second_moment_bound[n=100]"]["status"] == "pass"


def test_artifacts_do_not_depend_on_worker_count(tmp_path):
    one, two = tmp_path / "one", tmp_path / "two"

    assert _main("run", str(SMOKE), "--workers", "1", "--out", str(one)) == 0
    assert _main("run", str(SMOKE), "--workers", "2", "--out", str(two)) == 0

    for path in one.iterdir():
        if path.name != "timing.json":
            assert path.read_bytes() == (two / path.name).read_bytes(), path.name


def test_seed_override_changes_the_paths(tmp_path):
    base, other = tmp_path / "base", tmp_path / "other"

    _main("run", str(SMOKE), "--workers", "1", "--out", str(base))
    _main("run", str(SMOKE), "--workers", "1", "--out", str(other), "--seed-override", "5")

    assert (base / "paths_100.csv").read_bytes() != (other / "paths_100.csv").read_bytes()


def test_describe_prints_the_limit_parameters(tmp_path, capsys):
    assert _main("describe", str(_write(tmp_path))) == 0

    printed = capsys.readouterr().out
    assert "provenance: analytic" in printed
    assert "0.13630" in printed


def test_support_violation_is_a_config_error(tmp_path):
    assert _main("run", str(_write(tmp_path, radius=2.0)), "--out", str(tmp_path / "out")) == 2
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ("run", "missing.ini"),
        ("run", str(SMOKE), "--workers", "0"),
        ("describe", str(SMOKE), "--seed-override", "-4"),
    ],
    ids=["missing-file", "workers", "seed"],
)
def test_invalid_invocations_exit_with_config_error(argv):
    assert _main(*argv) == 2


def test_solver_failure_is_a_numerical_error(tmp_path):
    path = _write(tmp_path, extra="[solver]\ntolerance = 1e-300\nmax_iterations = 1\n")

    assert _main("run", str(path), "--workers", "1", "--out", str(tmp_path / "out")) == 3


def test_unwritable_output_is_reported(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")

    assert _main("run", str(SMOKE), "--workers", "1", "--out", str(blocker / "out")) == 2


def test_experiment_returns_replications_in_order(tmp_path):
    conf = config.parse(_write(tmp_path))
    model = conf.population_model()
    params = describe_model(conf, model)

    async def simulate():
        async with Experiment(conf, model, workers=2) as experiment:
            return await experiment.simulate(params, 40)

    records = asyncio.run(simulate())

    for replication, record in enumerate(records):
        expected = run_coupled(
            model, params, 40, 1.0, 10.0, 0.05, RngStream(3, replication, StreamPurpose.data)
        )
        np.testing.assert_array_equal(record.W_path, expected.W_path)


def test_failed_replications_name_their_seed(tmp_path):
    conf = config.parse(_write(tmp_path, extra="[solver]\ntolerance = 1e-300\nmax_iterations = 1\n"))
    model = conf.population_model()
    params = describe_model(conf, model)

    async def simulate():
        async with Experiment(conf, model, workers=1) as experiment:
            return await experiment.simulate(params, 40)

    with pytest.raises(ReplicationFailed) as info:
        asyncio.run(simulate())

    assert info.value.seed == 3
    assert info.value.replication == 0
    assert "SolverAbort" in str(info.value)


def test_evaluate_reports_every_check(tmp_path):
    conf = config.parse(_write(tmp_path))
    model = conf.population_model()
    params = describe_model(conf, model)
    records = {
        n: [
            run_coupled(model, params, n, 1.0, 10.0, 0.05, RngStream(3, i, StreamPurpose.data))
            for i in range(4)
        ]
        for n in (40, 80)
    }

    reports = evaluate(conf, model, params, records)

    assert [r.test_id for r in reports] == [
        "marginal_T[n=40]",
        "energy_gaussianity[n=40]",
        "marginal_epsilon0[n=40]",
        "epsilon0_scaling[n=40]",
        "second_moment_bound[n=40]",
        "marginal_T[n=80]",
        "energy_gaussianity[n=80]",
        "marginal_epsilon0[n=80]",
        "epsilon0_scaling[n=80]",
        "second_moment_bound[n=80]",
        "sup_diff_trend",
        "anchored_sup_diff_trend",
        "residual_trend",
        "martingale_condcov",
    ]
    assert reports[0].status is TestStatus.inconclusive
    assert "need 1135" in reports[0].metadata["reason"]
    assert "need 1135" in reports[2].metadata["reason"]


def test_population_mean_of_point_masses(pole_mass_model, circle_model):
    np.testing.assert_allclose(population_mean(pole_mass_model), [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(population_mean(circle_model), circle_model.center_point())


def test_path_frame_layout(circle_model, circle_params):
    record = run_coupled(circle_model, circle_params, 30, 1.0, 10.0, 0.1, RngStream(1))

    frame = path_frame([record, record], 2)

    assert len(frame) == 2 * len(record.times)
    assert frame["replication"].tolist() == [0] * len(record.times) + [1] * len(record.times)
    assert frame["stopped"].dtype.kind == "i"


def test_jsonable_drops_non_finite_values():
    assert jsonable({1: np.float64(np.inf), "a": (np.int64(2), np.bool_(True))}) == {
        "1": None,
        "a": [2, True],
    }


@pytest.mark.slow
@pytest.mark.parametrize("name", ["sphere_acceptance.ini", "sphere_epsilon.ini"])
def test_acceptance_runs_pass(tmp_path, name):
    assert _main("run", str(CONFIGS / name), "--out", str(tmp_path / "out")) == 0

    reports = json.loads((tmp_path / "out" / "reports.json").read_text())
    assert all(r["status"] != "fail" for r in reports)


@pytest.mark.slow
def test_anisotropic_run_uses_monte_carlo(tmp_path):
    path = CONFIGS / "sphere_anisotropic.ini"

    assert _main("run", str(path), "--out", str(tmp_path / "out")) in (0, 1)

    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["limit_params"]["provenance"] == "monte-carlo"


def test_epsilon_config_resolves_the_marginal_tolerance():
    conf = config.parse(CONFIGS / "sphere_epsilon.ini")
    params = describe_model(conf, conf.population_model())
    thresholds = conf.threshold_preset()

    for t in (conf.experiment.horizon, conf.experiment.anchor_time):
        target = params.A.scaled(t)
        assert calibrated_replications(target, thresholds.marginal, thresholds.alpha) <= (
            conf.experiment.replications
        )
