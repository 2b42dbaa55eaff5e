import json
import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from chanest.api import harness
from chanest.api.harness import (
    SweepIntegrityException,
    load_spec,
    reduce_rows,
    run_sweep,
    run_trial,
    smoke,
    write_result,
)
from chanest.api.presets import BPDN_DIRECT, BPDN_LS, GENIE, ML_M, OMP, OMPBR, PRESETS, PresetNotFoundException, preset
from chanest.schemas.estimators import EstimatorConfig
from chanest.schemas.experiments import CSV_COLUMNS, SMOKE_TRIALS, ExperimentSpec, ModelVariant
from chanest.schemas.ofdm import OfdmGrid


@pytest.fixture
def small_spec(small_channel) -> ExperimentSpec:
    return ExperimentSpec(
        name="small",
        kind="estimation",
        seed=7,
        trials=2,
        snr_grid_db=[0.0, 20.0],
        channel=small_channel,
        grid=OfdmGrid(K=64, M=16, N=32),
        estimators=[
            EstimatorConfig(label="ml-m", method="ml-m"),
            EstimatorConfig(label="genie", method="genie-ls"),
            EstimatorConfig(label="omp", method="omp"),
        ],
    )


def test_presets_are_valid():
    for name in PRESETS:
        spec = preset(name)
        assert spec.name == name
        assert spec.grid.K == 512 and spec.grid.M == 128 and spec.grid.N == 128
        assert spec.trials == 1000


def test_preset_overrides():
    spec = preset("fig-mse", trials=3, seed=11)
    assert spec.trials == 3
    assert spec.seed == 11
    assert smoke(spec).trials == SMOKE_TRIALS


def test_load_spec_overrides(tmp_path, small_spec):
    path = tmp_path / "spec.json"
    path.write_text(small_spec.model_dump_json())
    assert load_spec(str(path)).model_dump_json() == small_spec.model_dump_json()
    spec = load_spec(str(path), trials=5, seed=3)
    assert (spec.trials, spec.seed) == (5, 3)
    assert small_spec.override() is small_spec
    assert small_spec.override(seed=9).trials == small_spec.trials
    with pytest.raises(ValidationError):
        small_spec.override(trials=0)


def test_unknown_preset_lists_valid_names():
    with pytest.raises(PresetNotFoundException, match="fig-mse"):
        preset("fig-nothing")


def test_spec_rejects_unsorted_snr_grid(small_spec):
    with pytest.raises(ValidationError):
        ExperimentSpec.model_validate({**small_spec.model_dump(), "snr_grid_db": [10.0, 0.0]})


def test_spec_rejects_gaussian_model_in_ber(small_spec):
    data = {
        **small_spec.model_dump(),
        "kind": "ber",
        "modulation": "qpsk",
        "estimators": [{"label": "ml-m", "method": "ml-m"}],
        "models": [{"name": "g", "gaussian": True}],
    }
    with pytest.raises(ValidationError):
        ExperimentSpec.model_validate(data)


def test_load_spec_reports_field(tmp_path, small_spec):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({**small_spec.model_dump(mode="json"), "trials": 0}))
    with pytest.raises(ValidationError) as info:
        load_spec(str(path))
    assert any("trials" in error["loc"] for error in info.value.errors())


def test_estimation_sweep_columns(small_spec):
    result = run_sweep(small_spec, workers=1)
    table = result.table
    assert list(table.columns) == CSV_COLUMNS["estimation"]
    assert len(table) == 2 * 3
    assert (table["trials"] == 2).all()
    ml = table[table["method"] == "ml-m"]
    assert (ml["lhat_mean"] == 16).all()
    assert ml["theory_mse"].to_numpy() == pytest.approx(16 * 10 ** (-ml["snr_db"].to_numpy() / 10) / (64 * 32))


def test_single_trial_single_row(small_spec):
    spec = small_spec.model_copy(update={
        "trials": 1,
        "snr_grid_db": [10.0],
        "estimators": [EstimatorConfig(label="ml-m", method="ml-m")],
    })
    table = run_sweep(spec, workers=1).table
    assert len(table) == 1
    assert table.loc[0, "trials"] == 1


def test_run_trial_is_deterministic(small_spec):
    assert run_trial(small_spec, 1) == run_trial(small_spec, 1)
    assert run_trial(small_spec, 0) != run_trial(small_spec, 1)


def test_written_csv_is_reproducible(tmp_path, small_spec):
    first = write_result(run_sweep(small_spec, workers=1), str(tmp_path / "a"))
    second = write_result(run_sweep(small_spec, workers=2), str(tmp_path / "b"))
    with open(first, "rb") as fa, open(second, "rb") as fb:
        assert fa.read() == fb.read()


def test_meta_sidecar(tmp_path, small_spec):
    write_result(run_sweep(small_spec, workers=1), str(tmp_path), dump_raw=True)
    meta = json.loads((tmp_path / "small.meta.json").read_text())
    assert meta["seed"] == 7
    assert meta["git_hash"]
    assert meta["columns"] == CSV_COLUMNS["estimation"]
    assert meta["spec"]["trials"] == 2
    assert (tmp_path / "small.raw.csv").exists()


def test_dropped_row_fails_integrity_check(small_spec):
    raw = pd.DataFrame([row for trial in range(2) for row in run_trial(small_spec, trial)])
    with pytest.raises(SweepIntegrityException):
        reduce_rows(small_spec, raw.iloc[1:])


def test_rho_bounds_sweep(small_channel):
    spec = ExperimentSpec(
        name="rho",
        kind="rho-bounds",
        trials=3,
        channel=small_channel,
        grid=OfdmGrid(K=64, M=16, N=32),
        models=[ModelVariant(name="mpc"), ModelVariant(name="gauss", gaussian=True)],
        d_max=8,
    )
    table = run_sweep(spec, workers=1).table
    assert list(table.columns) == CSV_COLUMNS["rho-bounds"]
    assert len(table) == 2 * 9
    assert (table["bound_product"] <= table["mean_rho_bar"] + 1e-12).all()
    assert table.loc[table["d"] == 0, "mean_rho_bar"].to_numpy() == pytest.approx(1.0)


def test_ci_hist_sweep(small_channel):
    spec = ExperimentSpec(
        name="hist",
        kind="ci-hist",
        trials=4,
        channel=small_channel,
        grid=OfdmGrid(K=64, M=16, N=32),
        d_max=5,
        hist_bins=10,
    )
    table = run_sweep(spec, workers=1).table
    assert list(table.columns) == CSV_COLUMNS["ci-hist"]
    assert len(table) == 5 * 10
    assert (table.groupby("d")["count"].sum() <= 4).all()


def test_ci_cdf_sweep(small_channel):
    spec = ExperimentSpec(
        name="cdf",
        kind="ci-cdf",
        trials=5,
        channel=small_channel,
        grid=OfdmGrid(K=64, M=16, N=32),
    )
    table = run_sweep(spec, workers=1).table
    assert list(table.columns) == CSV_COLUMNS["ci-cdf"]
    assert table["empirical_cdf"].iloc[-1] == pytest.approx(1.0)
    assert np.all(np.diff(table["adjusted_ci"].to_numpy()) >= 0)


def test_ber_sweep(small_channel):
    spec = ExperimentSpec(
        name="ber",
        kind="ber",
        trials=2,
        snr_grid_db=[10.0, 30.0],
        channel=small_channel,
        grid=OfdmGrid(K=64, M=16, N=16),
        estimators=[
            EstimatorConfig(label="perfect", method="perfect-csi"),
            EstimatorConfig(label="omp", method="omp"),
        ],
        modulation="qpsk",
        frames_per_block=3,
        calibration_trials=3,
    )
    table = run_sweep(spec, workers=1).table
    assert list(table.columns) == CSV_COLUMNS["ber"]
    assert len(table) == 4
    assert (table["symbols"] == 2 * 2 * 64).all()
    assert table["ber"].between(0, 1).all()


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(harness.WORKERS_ENV, "3")
    assert harness._workers() == 3


def cell(table: pd.DataFrame, method: str, snr_db: float, model: str | None = None) -> pd.Series:
    rows = table[(table["method"] == method) & (table["snr_db"] == snr_db)]
    if model is not None:
        rows = rows[rows["model"] == model]
    assert len(rows) == 1
    return rows.iloc[0]


def snr_at_ber(table: pd.DataFrame, method: str, ber: float) -> float:
    rows = table[table["method"] == method].sort_values("snr_db")
    log_ber = np.log10(np.maximum(rows["ber"].to_numpy(), 1e-12))
    return float(np.interp(np.log10(ber), log_ber[::-1], rows["snr_db"].to_numpy()[::-1]))


@pytest.mark.slow
def test_ml_and_genie_follow_closed_forms():
    spec = preset("fig-mse", trials=200).model_copy(update={"snr_grid_db": [0.0, 10.0, 20.0], "estimators": [ML_M, GENIE]})
    table = run_sweep(spec).table
    for snr_db in (0.0, 10.0, 20.0):
        ml, genie = cell(table, "ml-m", snr_db), cell(table, "genie-ls", snr_db)
        assert 0.95 <= ml["mse_mean"] / ml["theory_mse"] <= 1.05
        assert 0.95 <= genie["mse_mean"] / genie["theory_mse"] <= 1.05
        gain = ml["mse_db"] - genie["mse_db"]
        assert gain == pytest.approx(6.0, abs=0.5)
        assert gain == pytest.approx(10 * np.log10(spec.grid.M / genie["l_mean"]), abs=0.5)


@pytest.mark.slow
def test_omp_mse_approaches_twice_the_genie_bound():
    spec = preset("fig-mse", trials=150).model_copy(update={"snr_grid_db": [20.0, 30.0], "estimators": [OMP]})
    table = run_sweep(spec).table
    ratios = [cell(table, "omp", s)["mse_mean"] / cell(table, "omp", s)["theory_mse"] for s in (20.0, 30.0)]
    assert all(1.0 <= r <= 1.6 for r in ratios)
    assert ratios[1] < ratios[0]


@pytest.mark.slow
def test_recovered_delay_counts_of_omp_variants():
    spec = preset("fig-lhat", trials=100).model_copy(update={"snr_grid_db": [0.0, 30.0]})
    table = run_sweep(spec).table
    assert cell(table, "omp", 0.0)["lhat_mean"] == pytest.approx(8, abs=2)
    assert cell(table, "omp-4M", 0.0)["lhat_mean"] == pytest.approx(5, abs=2)
    assert cell(table, "ompbr", 0.0)["lhat_mean"] == pytest.approx(5, abs=2)
    high = cell(table, "omp", 30.0)["lhat_mean"]
    for method in ("omp-4M", "ompbr"):
        assert high >= 1.4 * cell(table, method, 30.0)["lhat_mean"]
    for method in ("omp", "omp-4M", "ompbr"):
        assert cell(table, method, 30.0)["lhat_mean"] > cell(table, method, 0.0)["lhat_mean"]


@pytest.mark.slow
def test_ompbr_mse_gap_between_amplitude_models():
    spec = preset("fig-model-mse", trials=150).model_copy(update={"snr_grid_db": [0.0], "estimators": [OMPBR]})
    table = run_sweep(spec).table
    reference = cell(table, "ompbr", 0.0, "lognormal-decay")["mse_db"]
    assert 2.0 <= cell(table, "ompbr", 0.0, "rayleigh-flat")["mse_db"] - reference <= 4.0
    for model in ("rayleigh-decay", "lognormal-flat"):
        assert 0.5 <= cell(table, "ompbr", 0.0, model)["mse_db"] - reference <= 2.75


@pytest.mark.slow
def test_bpdn_gain_over_ompbr_is_smaller_on_compressible_channels():
    spec = preset("fig-omp-vs-bpdn", trials=40).model_copy(
        update={"snr_grid_db": [10.0], "estimators": [OMPBR, BPDN_DIRECT, BPDN_LS]}
    )
    table = run_sweep(spec).table
    gaps = {}
    for model in ("rayleigh-flat", "lognormal-decay"):
        bpdn = min(cell(table, m, 10.0, model)["mse_db"] for m in ("bpdn-direct", "bpdn-ls"))
        gaps[model] = cell(table, "ompbr", 10.0, model)["mse_db"] - bpdn
    assert all(gap >= 0 for gap in gaps.values())
    assert gaps["lognormal-decay"] < gaps["rayleigh-flat"]
    assert gaps["lognormal-decay"] == pytest.approx(0.86, abs=0.5)
    assert gaps["rayleigh-flat"] == pytest.approx(1.46, abs=0.5)


@pytest.mark.slow
def test_adjusted_ci_percentiles_per_amplitude_model():
    table = run_sweep(preset("fig-ci-cdf", trials=500)).table
    expected = {"rayleigh-flat": 0.5, "lognormal-flat": 0.2, "rayleigh-decay": 0.2, "lognormal-decay": 0.1}
    for model, value in expected.items():
        assert table.loc[table["model"] == model, "adjusted_ci"].quantile(0.85) == pytest.approx(value, abs=0.05)


@pytest.mark.slow
def test_ci_grows_by_at_most_one_in_most_steps():
    spec = preset("fig-ci-hist", trials=200).model_copy(update={"d_max": 20})
    raw = run_sweep(spec).raw
    ratios = raw.loc[~raw["degenerate"].astype(bool), "ratio"].to_numpy()
    assert ratios.size > 0
    assert np.mean(ratios <= 1.0) > 0.9


@pytest.mark.slow
def test_qpsk_ber_snr_shifts():
    spec = preset("fig-ber-qpsk", trials=150).model_copy(update={"snr_grid_db": [float(s) for s in range(5, 36, 5)]})
    table = run_sweep(spec).table
    perfect = snr_at_ber(table, "perfect-csi", 3e-3)
    assert snr_at_ber(table, "ml-m", 3e-3) - perfect == pytest.approx(3.0, abs=0.5)
    assert snr_at_ber(table, "genie-ls", 3e-3) - perfect == pytest.approx(0.9, abs=0.3)
    gain_low = snr_at_ber(table, "ml-m", 3e-2) - snr_at_ber(table, "ompbr", 3e-2)
    gain_high = snr_at_ber(table, "ml-m", 1e-3) - snr_at_ber(table, "ompbr", 1e-3)
    assert 1.5 <= gain_low <= 2.5
    assert 0.9 <= gain_high <= 1.9
    assert gain_low > gain_high
    ber = table[table["method"] == "perfect-csi"].set_index("snr_db")["ber"]
    assert -1.3 <= np.log10(ber[35.0] / ber[25.0]) <= -0.7
