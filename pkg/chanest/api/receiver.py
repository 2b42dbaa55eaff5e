import logging
import numpy as np
import scipy.linalg
from chanest.api.estimators import estimate
from chanest.api.multipath import build_time_channel, draw_mpc_set
from chanest.api.ofdm import f_km_apply, observe_pilots, qpsk_pilots
from chanest.api.streams import CALIBRATION_STREAM, trial_rng
from chanest.schemas.channel import ChannelConfig, MpcSet, PulseShape
from chanest.schemas.estimators import ErrorCovModel, EstimationMethod, EstimatorConfig
from chanest.schemas.ofdm import OfdmGrid
from chanest.schemas.receiver import BerCount, EqualizerInput, MmseSolution, ModulationScheme


logger = logging.getLogger(__name__)

BER_METHODS = ("perfect-csi", "ml-m", "genie-ls", "omp", "ompbr")
RIDGE = 1e-12


class UnsupportedEstimatorException(Exception):
    pass


def modulate(bits: np.ndarray, scheme: ModulationScheme) -> np.ndarray:
    """
    Maps a bit array to Gray-coded symbols, most significant bit first.

    :param bits: 0/1 array whose length is a multiple of the bits per symbol.
    :type bits: np.ndarray
    :param scheme: Constellation.
    :type scheme: ModulationScheme
    :return: Complex symbols.
    :rtype: np.ndarray
    """
    width = scheme.bits_per_symbol
    groups = np.asarray(bits, dtype=int).reshape(-1, width)
    labels = groups @ (1 << np.arange(width - 1, -1, -1))
    return scheme.constellation[labels]


def demodulate(symbols: np.ndarray, scheme: ModulationScheme) -> np.ndarray:
    """Minimum-distance hard decisions, returned as the flat bit array of the chosen labels."""
    symbols = np.asarray(symbols).ravel()
    labels = np.argmin(np.abs(symbols[:, None] - scheme.constellation[None, :]), axis=1)
    width = scheme.bits_per_symbol
    return (labels[:, None] >> np.arange(width - 1, -1, -1)[None, :] & 1).ravel()


def mmse_scalar(h_hat: np.ndarray | complex, nu2: float, sigma2: float, y: np.ndarray | complex) -> np.ndarray:
    """
    Per-subcarrier MMSE equalization b y with b = conj(h_hat) / (|h_hat|^2 + nu^2 + sigma^2).

    The estimation error is treated as additional noise of variance nu^2.
    """
    h_hat = np.asarray(h_hat)
    return h_hat.conj() / (np.abs(h_hat) ** 2 + nu2 + sigma2) * np.asarray(y)


def mmse_full(eq: EqualizerInput, err_cov: ErrorCovModel | np.ndarray) -> MmseSolution:
    """
    Full linear MMSE equalizer under imperfect CSI.

    For y = D(h) x + z with h = h_hat + e, E[e] = 0, Cov(e) = Sigma_e and
    Cov(x) = Sigma_x, minimizing E||B y - x||^2 gives
    B = Sigma_x D(h_hat)^H (Sigma_x o (h_hat h_hat^H + Sigma_e) + sigma^2 I)^{-1},
    with o the elementwise product. With i.i.d. inputs and diagonal Sigma_e it
    reduces to the per-subcarrier form.

    :param eq: Channel estimate, noise and input statistics.
    :type eq: EqualizerInput
    :param err_cov: Error covariance model, or the K x K covariance itself.
    :type err_cov: ErrorCovModel | np.ndarray
    :return: The equalizer and whether a ridge had to be added.
    :rtype: MmseSolution
    """
    sigma_e = err_cov.covariance() if isinstance(err_cov, ErrorCovModel) else np.asarray(err_cov)
    if sigma_e.shape != (eq.K, eq.K):
        raise ValueError(f"Error covariance must be {eq.K} x {eq.K}, got {sigma_e.shape}")
    sigma_x = eq.sigma_x()
    h = eq.h_K_hat
    gram = sigma_x * (np.outer(h, h.conj()) + sigma_e) + eq.sigma2 * np.eye(eq.K)
    cross = sigma_x * h.conj()[None, :]
    regularized = False
    try:
        B_H = scipy.linalg.solve(gram, cross.conj().T, assume_a="her")
    except (scipy.linalg.LinAlgError, ValueError):
        ridge = RIDGE * max(float(np.trace(gram).real) / eq.K, 1.0)
        logger.warning(f"Singular MMSE system, solving with ridge {ridge:.1e}")
        B_H = scipy.linalg.solve(gram + ridge * np.eye(eq.K), cross.conj().T, assume_a="her")
        regularized = True
    return MmseSolution(B=B_H.conj().T, regularized=regularized)


def theory_nu2(
        method: EstimationMethod,
        grid: OfdmGrid,
        sigma2: float,
        L: int | None = None,
        lhat_mean: float | None = None
) -> float:
    """
    Per-coefficient error variance the receiver assumes for an estimator.

    :param method: Estimation method.
    :type method: EstimationMethod
    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :param sigma2: Noise variance.
    :type sigma2: float
    :param L: True number of MPCs (genie-ls).
    :type L: int | None
    :param lhat_mean: Calibrated E[L_hat] (omp, ompbr).
    :type lhat_mean: float | None
    :return: (M/N) sigma^2 for ml-m, (L/N) sigma^2 for genie-ls, 2 E[L_hat] sigma^2 / N for OMP, 0 for perfect CSI.
    :rtype: float
    :raises UnsupportedEstimatorException: If the method has no closed form.
    """
    match method:
        case "perfect-csi":
            return 0.0
        case "ml-m":
            return grid.M * sigma2 / grid.N
        case "genie-ls":
            return L * sigma2 / grid.N
        case "omp" | "ompbr":
            return 2 * lhat_mean * sigma2 / grid.N
        case _:
            raise UnsupportedEstimatorException(f"No error variance model for {method}")


def calibrate_lhat(
        channel_cfg: ChannelConfig,
        grid: OfdmGrid,
        est_cfg: EstimatorConfig,
        sigma2: float,
        seed: int,
        trials: int = 50,
        snr_index: int = 0
) -> float:
    """
    Short Monte Carlo pass estimating E[L_hat] of a CS estimator at one noise level.

    Runs on its own substream so that it never perturbs the draws of the sweep.
    """
    pulse = channel_cfg.pulse_shape()
    counts = []
    for trial in range(trials):
        rng = trial_rng(seed, trial, CALIBRATION_STREAM, snr_index)
        mpcs = draw_mpc_set(channel_cfg, rng)
        h_M = build_time_channel(mpcs, pulse).h_M
        obs = observe_pilots(h_M, grid, qpsk_pilots(grid.N, rng), sigma2, rng)
        counts.append(estimate(est_cfg, obs, grid, pulse, mpcs, h_M).L_hat)
    lhat = float(np.mean(counts))
    logger.debug(f"Calibrated E[L_hat] = {lhat:.2f} for {est_cfg.label} at sigma2 = {sigma2:.3e}")
    return lhat


def run_ber_trial(
        mpcs: MpcSet,
        pulse: PulseShape,
        grid: OfdmGrid,
        est_cfg: EstimatorConfig,
        scheme: ModulationScheme,
        sigma2: float,
        nu2: float,
        frames_per_block: int,
        rng: np.random.Generator
) -> BerCount:
    """
    Simulates one block: a pilot frame followed by ``frames_per_block - 1`` data frames.

    The channel is estimated on the pilot frame and kept for the whole block.
    Every data frame carries i.i.d. symbols on all K subcarriers, is equalized
    with the per-subcarrier MMSE rule using ``nu2`` and demodulated with
    minimum-distance decisions.

    :param mpcs: Channel of the block.
    :type mpcs: MpcSet
    :param pulse: Pulse shape.
    :type pulse: PulseShape
    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :param est_cfg: Estimator used on the pilot frame.
    :type est_cfg: EstimatorConfig
    :param scheme: Constellation of the data frames.
    :type scheme: ModulationScheme
    :param sigma2: Noise variance per subcarrier.
    :type sigma2: float
    :param nu2: Error variance assumed by the equalizer.
    :type nu2: float
    :param frames_per_block: Frames per block, pilot frame included.
    :type frames_per_block: int
    :param rng: Generator for pilots, noise and data.
    :type rng: np.random.Generator
    :return: Bit error and symbol counts of the block.
    :rtype: BerCount
    :raises UnsupportedEstimatorException: For estimators outside the BER set.
    """
    if est_cfg.method not in BER_METHODS:
        raise UnsupportedEstimatorException(f"{est_cfg.method} is not supported in BER runs, use one of {BER_METHODS}")
    h_M = build_time_channel(mpcs, pulse).h_M
    obs = observe_pilots(h_M, grid, qpsk_pilots(grid.N, rng), sigma2, rng)
    h_K_hat = estimate(est_cfg, obs, grid, pulse, mpcs, h_M).h_K_hat
    h_K = f_km_apply(h_M, grid.K)

    frames = frames_per_block - 1
    bits = rng.integers(0, 2, size=frames * grid.K * scheme.bits_per_symbol)
    x = modulate(bits, scheme).reshape(frames, grid.K)
    noise = np.sqrt(sigma2 / 2) * (rng.normal(size=x.shape) + 1j * rng.normal(size=x.shape))
    y = h_K[None, :] * x + noise
    decided = demodulate(mmse_scalar(h_K_hat[None, :], nu2, sigma2, y), scheme)
    return BerCount(bit_errors=int(np.sum(decided != bits)), bits=bits.size, symbols=x.size)
