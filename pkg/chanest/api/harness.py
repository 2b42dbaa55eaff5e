import json
import logging
import os
import subprocess
import tempfile
import time
import numpy as np
import pandas as pd
from concurrent.futures import ProcessPoolExecutor
from more_itertools import chunked
from chanest.api.compressibility import (
    adjusted_ci,
    ci_growth_check,
    compressibility_index,
    oracle_residual_profile,
    rho_bound_table,
)
from chanest.api.estimators import estimate
from chanest.api.multipath import build_time_channel, draw_mpc_set, gaussian_time_channel
from chanest.api.ofdm import f_km_apply, noise_variance, observe_pilots, qpsk_pilots
from chanest.api.receiver import calibrate_lhat, run_ber_trial, theory_nu2
from chanest.api.streams import CHANNEL_STREAM, DATA_STREAM, NOISE_STREAM, trial_rng
from chanest.schemas.channel import ChannelConfig, MpcSet
from chanest.schemas.experiments import CSV_COLUMNS, SMOKE_TRIALS, ExperimentSpec, ModelVariant, SweepResult
from chanest.schemas.receiver import ModulationScheme


logger = logging.getLogger(__name__)

ROOT_PATH = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))
WORKERS_ENV = "CHANEST_WORKERS"
CHUNK_SIZE = 25

LhatTable = dict[tuple[int, int, str], float]


class SweepIntegrityException(Exception):
    pass


def load_spec(path: str, trials: int | None = None, seed: int | None = None) -> ExperimentSpec:
    """
    Reads an experiment from a JSON file.

    :param path: Path of the JSON file.
    :type path: str
    :param trials: Overrides the number of trials.
    :type trials: int | None
    :param seed: Overrides the seed.
    :type seed: int | None
    :return: The experiment.
    :rtype: ExperimentSpec
    :raises pydantic.ValidationError: If the file does not match the schema.
    :raises OSError: If the file cannot be read.
    """
    with open(path, encoding="utf-8") as fh:
        return ExperimentSpec.model_validate_json(fh.read()).override(trials=trials, seed=seed)



def smoke(spec: ExperimentSpec) -> ExperimentSpec:
    """Returns a copy of the experiment reduced to the smoke-test trial count."""
    return spec.model_copy(update={"trials": SMOKE_TRIALS})


def _draw_channel(
        variant: ModelVariant,
        channel_cfg: ChannelConfig,
        rng: np.random.Generator
) -> tuple[MpcSet | None, np.ndarray]:
    if variant.gaussian:
        return None, gaussian_time_channel(channel_cfg.M, rng).h_M
    mpcs = draw_mpc_set(channel_cfg, rng)
    return mpcs, build_time_channel(mpcs, channel_cfg.pulse_shape()).h_M


def _estimation_rows(spec: ExperimentSpec, trial: int) -> list[dict]:
    grid = spec.grid
    rows = []
    for mi, (variant, channel_cfg) in enumerate(spec.variants()):
        pulse = channel_cfg.pulse_shape()
        mpcs, h_M = _draw_channel(variant, channel_cfg, trial_rng(spec.seed, trial, CHANNEL_STREAM, mi))
        h_K = f_km_apply(h_M, grid.K)
        for si, snr_db in enumerate(spec.snr_grid_db):
            rng = trial_rng(spec.seed, trial, NOISE_STREAM, mi, si)
            sigma2 = noise_variance(snr_db, grid.K)
            obs = observe_pilots(h_M, grid, qpsk_pilots(grid.N, rng), sigma2, rng)
            for est_cfg in spec.estimators:
                est = estimate(est_cfg, obs, grid, pulse, mpcs, h_M)
                error = h_K - est.h_K_hat
                rows.append({
                    "trial": trial,
                    "model": variant.name,
                    "snr_db": snr_db,
                    "method": est_cfg.label,
                    "mse": float(np.vdot(error, error).real) / grid.K,
                    "lhat": est.L_hat,
                    "l": mpcs.count if mpcs is not None else grid.M,
                })
    return rows


def _rho_bounds_rows(spec: ExperimentSpec, trial: int) -> list[dict]:
    rows = []
    for mi, (variant, channel_cfg) in enumerate(spec.variants()):
        mpcs, h_M = _draw_channel(variant, channel_cfg, trial_rng(spec.seed, trial, CHANNEL_STREAM, mi))
        profile = oracle_residual_profile(h_M, spec.grid.K)
        if mpcs is None:
            ci_alpha, L = compressibility_index(h_M).ci, len(h_M)
        else:
            ci_alpha, L = compressibility_index(mpcs.raw_amplitudes).ci, mpcs.count
        table = rho_bound_table(profile, ci_alpha, L, spec.d_max)
        table.insert(0, "model", variant.name)
        table.insert(0, "trial", trial)
        rows.extend(table.to_dict("records"))
    return rows


def _ci_hist_rows(spec: ExperimentSpec, trial: int) -> list[dict]:
    variant, channel_cfg = spec.variants()[0]
    _, h_M = _draw_channel(variant, channel_cfg, trial_rng(spec.seed, trial, CHANNEL_STREAM, 0))
    growth = ci_growth_check(h_M, spec.d_max)
    return [
        {"trial": trial, "d": d + 1, "ratio": float(ratio), "degenerate": bool(flag)}
        for d, (ratio, flag) in enumerate(zip(growth.ratios, growth.degenerate))
    ]


def _ci_cdf_rows(spec: ExperimentSpec, trial: int) -> list[dict]:
    rows = []
    for mi, (variant, channel_cfg) in enumerate(spec.variants()):
        mpcs, h_M = _draw_channel(variant, channel_cfg, trial_rng(spec.seed, trial, CHANNEL_STREAM, mi))
        L = mpcs.count if mpcs is not None else len(h_M)
        rows.append({"trial": trial, "model": variant.name, "adjusted_ci": adjusted_ci(h_M, L)})
    return rows


def _ber_rows(spec: ExperimentSpec, trial: int, lhat_table: LhatTable) -> list[dict]:
    grid = spec.grid
    scheme = ModulationScheme(kind=spec.modulation)
    rows = []
    for mi, (variant, channel_cfg) in enumerate(spec.variants()):
        pulse = channel_cfg.pulse_shape()
        mpcs = draw_mpc_set(channel_cfg, trial_rng(spec.seed, trial, CHANNEL_STREAM, mi))
        for si, snr_db in enumerate(spec.snr_grid_db):
            sigma2 = noise_variance(snr_db, grid.K)
            for est_cfg in spec.estimators:
                nu2 = theory_nu2(est_cfg.method, grid, sigma2, mpcs.count, lhat_table.get((mi, si, est_cfg.label)))
                # same pilots, noise and data for every estimator
                rng = trial_rng(spec.seed, trial, DATA_STREAM, mi, si)
                count = run_ber_trial(mpcs, pulse, grid, est_cfg, scheme, sigma2, nu2, spec.frames_per_block, rng)
                rows.append({
                    "trial": trial,
                    "model": variant.name,
                    "snr_db": snr_db,
                    "method": est_cfg.label,
                    "modulation": spec.modulation,
                    "bit_errors": count.bit_errors,
                    "bits": count.bits,
                    "symbols": count.symbols,
                })
    return rows


def calibration_table(spec: ExperimentSpec) -> LhatTable:
    """E[L_hat] of every OMP-type estimator per (model, SNR), used for the receiver's error variance."""
    table: LhatTable = {}
    if spec.kind != "ber":
        return table
    for mi, (_, channel_cfg) in enumerate(spec.variants()):
        for si, snr_db in enumerate(spec.snr_grid_db):
            sigma2 = noise_variance(snr_db, spec.grid.K)
            for est_cfg in spec.estimators:
                if est_cfg.method in ("omp", "ompbr"):
                    table[(mi, si, est_cfg.label)] = calibrate_lhat(
                        channel_cfg,
                        spec.grid,
                        est_cfg,
                        sigma2,
                        spec.seed,
                        trials=spec.calibration_trials,
                        snr_index=mi * len(spec.snr_grid_db) + si,
                    )
    return table


def run_trial(spec: ExperimentSpec, trial_index: int, lhat_table: LhatTable | None = None) -> list[dict]:
    """
    Runs one Monte Carlo trial of the experiment.

    Every random draw comes from ``trial_rng(spec.seed, trial_index, ...)``, so
    the rows depend only on the spec and the trial index.

    :param spec: Experiment.
    :type spec: ExperimentSpec
    :param trial_index: Trial number.
    :type trial_index: int
    :param lhat_table: Calibrated E[L_hat] for BER experiments, computed when missing.
    :type lhat_table: LhatTable | None
    :return: Raw per-trial rows.
    :rtype: list[dict]
    """
    match spec.kind:
        case "estimation":
            return _estimation_rows(spec, trial_index)
        case "rho-bounds":
            return _rho_bounds_rows(spec, trial_index)
        case "ci-hist":
            return _ci_hist_rows(spec, trial_index)
        case "ci-cdf":
            return _ci_cdf_rows(spec, trial_index)
        case "ber":
            return _ber_rows(spec, trial_index, calibration_table(spec) if lhat_table is None else lhat_table)


def _run_chunk(spec: ExperimentSpec, trials: list[int], lhat_table: LhatTable) -> list[dict]:
    return [row for trial in trials for row in run_trial(spec, trial, lhat_table)]


def _db(values: pd.Series) -> pd.Series:
    positive = values.where(values > 0)
    return 10 * np.log10(positive)


def _theory_mse(method: str, spec: ExperimentSpec, snr_db: float, l_mean: float, lhat_mean: float) -> float:
    sigma2 = noise_variance(snr_db, spec.grid.K)
    match method:
        case "bpdn-ls":
            return theory_nu2("omp", spec.grid, sigma2, lhat_mean=lhat_mean)
        case "bpdn-direct":
            return float("nan")
        case _:
            return theory_nu2(method, spec.grid, sigma2, L=l_mean, lhat_mean=lhat_mean)


def _check_counts(counts: pd.Series, trials: int) -> None:
    bad = counts[counts != trials]
    if not bad.empty:
        raise SweepIntegrityException(f"{len(bad)} result cells do not hold {trials} samples: {bad.to_dict()}")


def reduce_rows(spec: ExperimentSpec, raw: pd.DataFrame) -> pd.DataFrame:
    """
    Reduces per-trial rows to the result table of the experiment kind.

    :raises SweepIntegrityException: If a result cell does not hold exactly ``spec.trials`` samples.
    """
    match spec.kind:
        case "estimation":
            methods = {e.label: e.method for e in spec.estimators}
            table = raw.groupby(["model", "snr_db", "method"], sort=False).agg(
                trials=("mse", "size"),
                mse_mean=("mse", "mean"),
                mse_std=("mse", "std"),
                lhat_mean=("lhat", "mean"),
                lhat_std=("lhat", "std"),
                l_mean=("l", "mean"),
            ).reset_index()
            _check_counts(table["trials"], spec.trials)
            table["mse_db"] = _db(table["mse_mean"])
            table["theory_mse"] = [
                _theory_mse(methods[row.method], spec, row.snr_db, row.l_mean, row.lhat_mean)
                for row in table.itertuples()
            ]
            table["theory_mse_db"] = _db(table["theory_mse"])
        case "rho-bounds":
            grouped = raw.groupby(["model", "d"], sort=False)
            _check_counts(grouped.size(), spec.trials)
            table = grouped.agg(
                mean_rho_bar=("rho_bar", "mean"),
                bound_product=("bound_product", "mean"),
                bound_geometric_h=("bound_geometric_h", "mean"),
                bound_geometric_alpha=("bound_geometric_alpha", "mean"),
            ).reset_index()
        case "ci-hist":
            _check_counts(raw.groupby("d").size(), spec.trials)
            edges = np.linspace(*spec.hist_range, spec.hist_bins + 1)
            frames = []
            for d, group in raw.groupby("d"):
                ratios = group.loc[~group["degenerate"], "ratio"].to_numpy()
                counts, _ = np.histogram(np.clip(ratios, edges[0], edges[-1]), bins=edges)
                frames.append(pd.DataFrame({
                    "d": d,
                    "bin_left": edges[:-1],
                    "bin_right": edges[1:],
                    "count": counts,
                    "fraction_le_one": np.mean(ratios <= 1.0) if ratios.size else np.nan,
                }))
            table = pd.concat(frames, ignore_index=True)
        case "ci-cdf":
            _check_counts(raw.groupby("model", sort=False).size(), spec.trials)
            table = raw.sort_values(["model", "adjusted_ci"], kind="stable")[["model", "adjusted_ci"]]
            table["empirical_cdf"] = table.groupby("model").cumcount().add(1) / spec.trials
            order = {v.name: i for i, (v, _) in enumerate(spec.variants())}
            table = table.sort_values("model", key=lambda s: s.map(order), kind="stable").reset_index(drop=True)
        case "ber":
            grouped = raw.groupby(["model", "snr_db", "method", "modulation"], sort=False)
            _check_counts(grouped.size(), spec.trials)
            table = grouped.agg(
                bit_errors=("bit_errors", "sum"),
                bits=("bits", "sum"),
                symbols=("symbols", "sum"),
            ).reset_index()
            table["ber"] = table["bit_errors"] / table["bits"]
    return table[CSV_COLUMNS[spec.kind]]


def _workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, os.cpu_count() or 1)))


def run_sweep(spec: ExperimentSpec, workers: int | None = None) -> SweepResult:
    """
    Runs all trials of an experiment and reduces them.

    Trials are split into chunks and fanned out over a process pool; rows are
    put back in trial order before the reduction, so the result does not
    depend on the number of workers (``CHANEST_WORKERS`` or the CPU count by
    default).

    :param spec: Experiment.
    :type spec: ExperimentSpec
    :param workers: Number of worker processes, 1 runs in-process.
    :type workers: int | None
    :return: The reduced result with the raw rows.
    :rtype: SweepResult
    :raises SweepIntegrityException: If a result cell misses samples.
    """
    workers = workers or _workers()
    t0 = time.perf_counter()
    logger.info(f"Running {spec.name} ({spec.kind}) with {spec.trials} trials on {workers} worker(s)...")

    lhat_table = calibration_table(spec)
    chunks = list(chunked(range(spec.trials), CHUNK_SIZE))
    if workers == 1:
        results = [_run_chunk(spec, chunk, lhat_table) for chunk in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(
                _run_chunk,
                [spec] * len(chunks),
                chunks,
                [lhat_table] * len(chunks),
            ))
    raw = pd.DataFrame([row for rows in results for row in rows])
    raw = raw.sort_values("trial", kind="stable").reset_index(drop=True)
    table = reduce_rows(spec, raw)

    t = time.perf_counter() - t0
    logger.info(f"Finished {spec.name}, total time: {t:.2f}s")
    return SweepResult(spec=spec, table=table, raw=raw, elapsed_s=t)


def git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=ROOT_PATH,
            capture_output=True,
            text=True,
            check=True,
        )
    except (OSError, subprocess.CalledProcessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_result(result: SweepResult, out_dir: str | None = None, dump_raw: bool = False) -> str:
    """
    Writes the result table as ``<name>.csv`` next to a ``<name>.meta.json`` sidecar.

    Both files are written to a temporary file first and moved into place, so
    readers never see a partial file. The sidecar echoes the spec, the seed
    and the git hash of the code.

    :param result: Sweep result.
    :type result: SweepResult
    :param out_dir: Output directory, defaults to ``spec.outputs``.
    :type out_dir: str | None
    :param dump_raw: Also write the per-trial rows as ``<name>.raw.csv``.
    :type dump_raw: bool
    :return: Path of the CSV file.
    :rtype: str
    """
    spec = result.spec
    out_dir = out_dir or spec.outputs
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{spec.name}.csv")
    _atomic_write(csv_path, result.table.to_csv(index=False, float_format="%.10g"))
    if dump_raw:
        _atomic_write(os.path.join(out_dir, f"{spec.name}.raw.csv"), result.raw.to_csv(index=False))
    meta = {
        "spec": spec.model_dump(mode="json"),
        "seed": spec.seed,
        "git_hash": git_hash(),
        "columns": list(result.table.columns),
    }
    _atomic_write(os.path.join(out_dir, f"{spec.name}.meta.json"), json.dumps(meta, indent=2))
    logger.info(f"Saved {csv_path}")
    return csv_path
