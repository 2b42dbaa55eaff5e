import numpy as np
import pandas as pd
from chanest.schemas.ofdm import FreqChannel, OfdmGrid, PilotObservation


class InvalidPilotException(Exception):
    pass


def noise_variance(snr_db: float, K: int, power: float = 1.0) -> float:
    """
    Noise variance per subcarrier for a per-subcarrier SNR.

    With the normalized DFT a channel of power ``power`` puts ``power / K`` on
    every subcarrier on average, so SNR = power / (K sigma^2).
    """
    return power / (K * 10 ** (snr_db / 10))


def f_km_apply(h_M: np.ndarray, K: int) -> np.ndarray:
    """
    Applies F_{K,M}, the first M columns of the normalized size-K DFT.

    :param h_M: Time-domain vector of length M <= K.
    :type h_M: np.ndarray
    :param K: DFT size.
    :type K: int
    :return: Frequency-domain vector of length K.
    :rtype: np.ndarray
    """
    return np.fft.fft(h_M, n=K) / np.sqrt(K)


def f_nkm_apply(h_M: np.ndarray, grid: OfdmGrid) -> np.ndarray:
    """
    Applies F_{N/K,M}: the rows of F_{K,M} at the N pilot subcarriers.

    Pilot k = nK/N has phase exp(-j 2 pi n m / N), so the product is a size-N
    FFT of the zero-padded vector scaled by 1/sqrt(K). ``h_M`` may also be an
    (M, L) matrix, transformed column by column.
    """
    return np.fft.fft(h_M, n=grid.N, axis=0) / np.sqrt(grid.K)


def f_nkm_adjoint(v: np.ndarray, grid: OfdmGrid) -> np.ndarray:
    """Applies F_{N/K,M}^H, mapping a length-N pilot vector to length M."""
    return (np.fft.ifft(v, n=grid.N, axis=0) * grid.N / np.sqrt(grid.K))[:grid.M]


def reconstruct_hK_from_pilot_image(h_NK: np.ndarray, grid: OfdmGrid) -> np.ndarray:
    """h_K = F_{K,M} F_{N/K,M}^H (K/N) h_{N/K}; exact when h_NK comes from a length-M channel."""
    return f_km_apply(grid.K / grid.N * f_nkm_adjoint(h_NK, grid), grid.K)


def freq_channel(h_M: np.ndarray, grid: OfdmGrid) -> FreqChannel:
    return FreqChannel(h_K=f_km_apply(h_M, grid.K), h_NK=f_nkm_apply(h_M, grid))


def unit_pilots(N: int) -> np.ndarray:
    return np.ones(N, dtype=complex)


def qpsk_pilots(N: int, rng: np.random.Generator) -> np.ndarray:
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=N)))


def observe_pilots(
        h_M: np.ndarray,
        grid: OfdmGrid,
        pilots: np.ndarray,
        sigma2: float,
        rng: np.random.Generator
) -> PilotObservation:
    """
    Synthesizes the pilot frame y_N = D(x_N) F_{N/K,M} h_M + z_N.

    The noise is circular complex Gaussian with variance ``sigma2`` per entry.
    The returned observation also carries the de-rotated image D(x_N)^H y_N.

    :param h_M: Time-domain channel of length M.
    :type h_M: np.ndarray
    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :param pilots: Unit-modulus pilot symbols of length N.
    :type pilots: np.ndarray
    :param sigma2: Noise variance per pilot subcarrier.
    :type sigma2: float
    :param rng: Seeded generator for the noise.
    :type rng: np.random.Generator
    :return: The pilot observation.
    :rtype: PilotObservation
    :raises InvalidPilotException: If a pilot does not have unit modulus.
    """
    pilots = np.asarray(pilots, dtype=complex)
    if pilots.shape != (grid.N,) or not np.allclose(np.abs(pilots), 1.0, atol=1e-12):
        raise InvalidPilotException("Pilots must be N unit-modulus symbols")
    noise = np.sqrt(sigma2 / 2) * (rng.normal(size=grid.N) + 1j * rng.normal(size=grid.N))
    y = pilots * f_nkm_apply(h_M, grid) + noise
    return PilotObservation(
        y_N=y,
        x_N=pilots,
        noise_var_sigma2=sigma2,
        y_derotated=pilots.conj() * y,
    )


def dump_observation_csv(obs: PilotObservation, path: str) -> None:
    """Writes the pilot observation as CSV with columns subcarrier_index, re(y), im(y)."""
    pd.DataFrame({
        "subcarrier_index": np.arange(len(obs.y_N)),
        "re(y)": obs.y_N.real,
        "im(y)": obs.y_N.imag,
    }).to_csv(path, index=False)
