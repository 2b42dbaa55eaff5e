import numpy as np
from typing import Callable
from chanest.api.multipath import load_channel_config
from chanest.schemas.channel import AmplitudeConfig, AmplitudeKind, DelayConfig
from chanest.schemas.estimators import EstimatorConfig
from chanest.schemas.experiments import DEFAULT_TRIALS, ExperimentSpec, ModelVariant
from chanest.schemas.ofdm import OfdmGrid


SNR_GRID_DB = [float(s) for s in np.arange(-10, 31, 5)]
BER_SNR_GRID_DB = [float(s) for s in np.arange(0, 41, 4)]
AMPLITUDE_KINDS: tuple[AmplitudeKind, ...] = ("rayleigh-flat", "rayleigh-decay", "lognormal-flat", "lognormal-decay")
GRID = OfdmGrid(K=512, M=128, N=128)

OMP = EstimatorConfig(label="omp", method="omp")
OMP_4M = EstimatorConfig(label="omp-4M", method="omp", n_t_factor=4)
OMPBR = EstimatorConfig(label="ompbr", method="ompbr", delta_mu=1e-2)
ML_M = EstimatorConfig(label="ml-m", method="ml-m")
GENIE = EstimatorConfig(label="genie-ls", method="genie-ls")
PERFECT = EstimatorConfig(label="perfect-csi", method="perfect-csi")
BPDN_DIRECT = EstimatorConfig(label="bpdn-direct", method="bpdn-direct", n_t_factor=4)
BPDN_LS = EstimatorConfig(label="bpdn-ls", method="bpdn-ls", n_t_factor=4)


class PresetNotFoundException(Exception):
    pass


def _amplitude_models(kinds: tuple[AmplitudeKind, ...] = AMPLITUDE_KINDS) -> list[ModelVariant]:
    return [ModelVariant(name=kind, amplitude=AmplitudeConfig(kind=kind)) for kind in kinds]


def _base(name: str, **fields) -> ExperimentSpec:
    return ExperimentSpec(
        name=name,
        description=PRESETS[name][0],
        channel=load_channel_config(),
        grid=GRID,
        trials=DEFAULT_TRIALS,
        outputs="results",
        **fields,
    )


def _fig_lhat() -> ExperimentSpec:
    return _base("fig-lhat", kind="estimation", snr_grid_db=SNR_GRID_DB, estimators=[OMP, OMP_4M, OMPBR])


def _fig_mse() -> ExperimentSpec:
    return _base(
        "fig-mse",
        kind="estimation",
        snr_grid_db=SNR_GRID_DB,
        estimators=[ML_M, GENIE, OMP, OMP_4M, OMPBR],
    )


def _fig_rho_bounds() -> ExperimentSpec:
    models = [
        ModelVariant(name="lognormal-decay"),
        ModelVariant(name="on-grid", delay=DelayConfig(kind="on-grid")),
        ModelVariant(name="iid-gaussian", gaussian=True),
    ]
    return _base("fig-rho-bounds", kind="rho-bounds", models=models, d_max=40)


def _fig_ci_hist() -> ExperimentSpec:
    return _base("fig-ci-hist", kind="ci-hist", d_max=40)


def _fig_ci_cdf() -> ExperimentSpec:
    return _base("fig-ci-cdf", kind="ci-cdf", models=_amplitude_models())


def _fig_model_mse() -> ExperimentSpec:
    return _base(
        "fig-model-mse",
        kind="estimation",
        snr_grid_db=SNR_GRID_DB,
        models=_amplitude_models(),
        estimators=[ML_M, OMPBR],
    )


def _fig_omp_vs_bpdn() -> ExperimentSpec:
    return _base(
        "fig-omp-vs-bpdn",
        kind="estimation",
        snr_grid_db=SNR_GRID_DB,
        models=_amplitude_models(("rayleigh-flat", "lognormal-decay")),
        estimators=[OMPBR, BPDN_DIRECT, BPDN_LS],
    )


def _fig_ber(name: str, modulation: str) -> ExperimentSpec:
    return _base(
        name,
        kind="ber",
        snr_grid_db=BER_SNR_GRID_DB,
        estimators=[PERFECT, ML_M, GENIE, OMPBR],
        modulation=modulation,
        frames_per_block=10,
    )


PRESETS: dict[str, tuple[str, Callable[[], ExperimentSpec]]] = {
    "fig-lhat": ("Mean number of recovered delays of OMP variants vs SNR", _fig_lhat),
    "fig-mse": ("MSE of ML, genie-aided and OMP estimators vs SNR with closed forms", _fig_mse),
    "fig-rho-bounds": ("Oracle residual and its lower bounds vs number of recovered taps", _fig_rho_bounds),
    "fig-ci-hist": ("Histogram of the CI growth ratios per step", _fig_ci_hist),
    "fig-ci-cdf": ("Empirical CDF of the adjusted CI under four amplitude models", _fig_ci_cdf),
    "fig-model-mse": ("OMPBR MSE under four amplitude models", _fig_model_mse),
    "fig-omp-vs-bpdn": ("OMPBR against BPDN on flat Rayleigh and lognormal-decay channels", _fig_omp_vs_bpdn),
    "fig-ber-qpsk": ("BER with QPSK data and MMSE equalization", lambda: _fig_ber("fig-ber-qpsk", "qpsk")),
    "fig-ber-16qam": ("BER with 16QAM data and MMSE equalization", lambda: _fig_ber("fig-ber-16qam", "qam16")),
}


def preset(name: str, trials: int | None = None, seed: int | None = None) -> ExperimentSpec:
    """
    Builds the experiment of a named preset.

    All presets share T = 2.5 ns, M = N = 128, K = 512, a sinc pulse and the
    shipped channel defaults.

    :param name: Preset name.
    :type name: str
    :param trials: Overrides the number of trials.
    :type trials: int | None
    :param seed: Overrides the seed.
    :type seed: int | None
    :return: The experiment.
    :rtype: ExperimentSpec
    :raises PresetNotFoundException: If the name is unknown; the message lists the valid names.
    """
    if name not in PRESETS:
        raise PresetNotFoundException(f"Preset {name} not found, valid presets: {', '.join(PRESETS)}")
    return PRESETS[name][1]().override(trials=trials, seed=seed)
