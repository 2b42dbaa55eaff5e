import logging
import typer
from pydantic import ValidationError
from chanest.api.estimators import ConvergenceException, NumericalRankException
from chanest.api.harness import SweepIntegrityException, load_spec, run_sweep, smoke, write_result
from chanest.api.presets import PRESETS, PresetNotFoundException, preset

SCHEMA_ERROR = 2
NUMERIC_ERROR = 3

app = typer.Typer()


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _schema_error(error: Exception) -> None:
    if isinstance(error, ValidationError):
        for item in error.errors():
            location = ".".join(str(part) for part in item["loc"])
            typer.echo(f"{location}: {item['msg']}", err=True)
    else:
        typer.echo(str(error), err=True)
    raise typer.Exit(code=SCHEMA_ERROR)


@app.command()
def run(
        preset_name: str = typer.Option(None, "--preset", help="Name of a preset experiment"),
        spec_path: str = typer.Option(None, "--spec", help="Path to an experiment JSON file"),
        trials: int = typer.Option(None, "--trials", min=1, help="Override the number of trials"),
        seed: int = typer.Option(None, "--seed", min=0, help="Override the seed"),
        out: str = typer.Option(None, "--out", help="Output directory"),
        smoke_run: bool = typer.Option(False, "--smoke", help="Run 50 trials only"),
        workers: int = typer.Option(None, "--workers", min=1, help="Worker processes"),
        dump_raw: bool = typer.Option(False, "--dump-raw", help="Also write per-trial rows"),
        verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    _configure_logging(verbose)
    if (preset_name is None) == (spec_path is None):
        typer.echo("Give exactly one of --preset or --spec", err=True)
        raise typer.Exit(code=SCHEMA_ERROR)
    try:
        if preset_name:
            spec = preset(preset_name, trials=trials, seed=seed)
        else:
            spec = load_spec(spec_path, trials=trials, seed=seed)
    except (ValidationError, PresetNotFoundException, OSError) as e:
        _schema_error(e)
    if smoke_run:
        spec = smoke(spec)

    typer.echo("Starting calculations...")
    try:
        result = run_sweep(spec, workers=workers)
    except (ConvergenceException, NumericalRankException, SweepIntegrityException) as e:
        typer.echo(f"Numerical failure: {e}", err=True)
        raise typer.Exit(code=NUMERIC_ERROR)
    path = write_result(result, out, dump_raw=dump_raw)
    typer.echo(f"Saved {path}")
    typer.echo("Done!")


@app.command()
def presets() -> None:
    for name, (description, _) in PRESETS.items():
        typer.echo(f"{name:<18}{description}")


@app.command()
def validate(spec_path: str = typer.Option(..., "--spec", help="Path to an experiment JSON file")) -> None:
    try:
        spec = load_spec(spec_path)
    except (ValidationError, OSError) as e:
        _schema_error(e)
    typer.echo(f"{spec.name}: valid {spec.kind} experiment with {spec.trials} trials")


if __name__ == "__main__":
    app()
