import json
import pytest
from typer.testing import CliRunner
import chanest_cli
from chanest.api.estimators import ConvergenceException
from chanest.api.presets import PRESETS
from chanest.schemas.estimators import EstimatorConfig
from chanest.schemas.experiments import ExperimentSpec
from chanest.schemas.ofdm import OfdmGrid


runner = CliRunner()


@pytest.fixture
def spec_file(tmp_path, small_channel) -> str:
    spec = ExperimentSpec(
        name="cli-small",
        kind="estimation",
        trials=2,
        snr_grid_db=[10.0],
        channel=small_channel,
        grid=OfdmGrid(K=64, M=16, N=32),
        estimators=[EstimatorConfig(label="ml-m", method="ml-m")],
    )
    path = tmp_path / "spec.json"
    path.write_text(spec.model_dump_json())
    return str(path)


def test_presets_lists_every_name():
    result = runner.invoke(chanest_cli.app, ["presets"])
    assert result.exit_code == 0
    for name in PRESETS:
        assert name in result.stdout


def test_validate(spec_file, tmp_path):
    assert runner.invoke(chanest_cli.app, ["validate", "--spec", spec_file]).exit_code == 0

    data = json.loads(open(spec_file).read())
    data["grid"]["M"] = 32
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert runner.invoke(chanest_cli.app, ["validate", "--spec", str(bad)]).exit_code == chanest_cli.SCHEMA_ERROR


def test_unknown_preset_is_a_schema_error():
    result = runner.invoke(chanest_cli.app, ["run", "--preset", "fig-nothing"])
    assert result.exit_code == chanest_cli.SCHEMA_ERROR


def test_run_needs_exactly_one_source(spec_file):
    assert runner.invoke(chanest_cli.app, ["run"]).exit_code == chanest_cli.SCHEMA_ERROR
    result = runner.invoke(chanest_cli.app, ["run", "--preset", "fig-mse", "--spec", spec_file])
    assert result.exit_code == chanest_cli.SCHEMA_ERROR


def test_run_writes_results(spec_file, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(chanest_cli.app, ["run", "--spec", spec_file, "--out", str(out), "--workers", "1"])
    assert result.exit_code == 0
    assert "Done!" in result.stdout
    assert (out / "cli-small.csv").exists()
    assert (out / "cli-small.meta.json").exists()


def test_run_trials_override(spec_file, tmp_path):
    out = tmp_path / "out"
    args = ["run", "--spec", spec_file, "--out", str(out), "--workers", "1", "--trials", "3", "--seed", "5"]
    assert runner.invoke(chanest_cli.app, args).exit_code == 0
    meta = json.loads((out / "cli-small.meta.json").read_text())
    assert meta["spec"]["trials"] == 3
    assert meta["seed"] == 5


def test_numerical_failure_exit_code(spec_file, tmp_path, monkeypatch):
    def fail(spec, workers=None):
        raise ConvergenceException("no feasible penalty", None)

    monkeypatch.setattr(chanest_cli, "run_sweep", fail)
    result = runner.invoke(chanest_cli.app, ["run", "--spec", spec_file, "--out", str(tmp_path)])
    assert result.exit_code == chanest_cli.NUMERIC_ERROR


@pytest.mark.parametrize("command", ["run", "validate"])
def test_missing_spec_file_is_a_schema_error(tmp_path, command):
    missing = str(tmp_path / "missing.json")
    result = runner.invoke(chanest_cli.app, [command, "--spec", missing])
    assert result.exit_code == chanest_cli.SCHEMA_ERROR
    assert not isinstance(result.exception, FileNotFoundError)
    assert "missing.json" in result.output
