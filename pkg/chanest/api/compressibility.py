import logging
import numpy as np
import pandas as pd
from typing import Sequence
from chanest.schemas.channel import MpcSet
from chanest.schemas.compressibility import BoundValue, CiGrowth, CiStats, KurtosisBridge, ResidualProfile


logger = logging.getLogger(__name__)

D_MAX = 40


class ZeroVectorException(Exception):
    pass


def _powers(v: np.ndarray) -> np.ndarray:
    power = np.abs(np.asarray(v)) ** 2
    if power.size == 0 or not np.any(power > 0):
        raise ZeroVectorException("Compressibility is undefined for an all-zero vector")
    return power


def compressibility_index(v: np.ndarray, L: int | None = None) -> CiStats:
    """
    Computes the Compressibility Index CI = (sum |v|^2)^2 / (M sum |v|^4).

    The CI is Jain's fairness index of the power shares: 1 for equal powers,
    L/M for L equal nonzero entries and 1/M for a single spike. It is invariant
    to scaling of ``v``.

    :param v: Real or complex vector.
    :type v: np.ndarray
    :param L: Number of MPCs, used for the adjusted CI (M/L) CI.
    :type L: int | None
    :return: The CI statistics.
    :rtype: CiStats
    :raises ZeroVectorException: If ``v`` is all zero.
    """
    power = _powers(v)
    # scale-free evaluation
    shares = power / power.max()
    ci = float(np.sum(shares) ** 2 / (shares.size * np.sum(shares ** 2)))
    return CiStats(
        ci=ci,
        adjusted_ci=ci * shares.size / L if L else ci,
        kurtosis_estimate=1.0 / ci,
        M=shares.size,
    )


def adjusted_ci(h_M: np.ndarray, L: int) -> float:
    return compressibility_index(h_M, L).adjusted_ci


def kurtosis(values: np.ndarray) -> float:
    """Normalized fourth moment E|v|^4 / (E|v|^2)^2."""
    power = _powers(values)
    return float(np.mean(power ** 2) / np.mean(power) ** 2)


def lognormal_kurtosis(values: np.ndarray) -> float:
    """
    Kurtosis of a lognormal amplitude law from the variance of the log-amplitudes.

    For log a ~ N(mu, s^2) the kurtosis is exp(4 s^2); estimating s^2 is far
    less noisy than the fourth moment itself.
    """
    magnitude = np.abs(np.asarray(values))
    if not np.all(magnitude > 0):
        raise ZeroVectorException("Log-amplitudes require strictly positive values")
    return float(np.exp(4.0 * np.var(np.log(magnitude))))


def oracle_residual_profile(h_M: np.ndarray, K: int) -> ResidualProfile:
    """
    Oracle residual of the orthogonal dictionary case.

    With N_T = M and a Nyquist pulse the best d-atom support holds the d
    strongest taps, so rho_bar(d) = (||h_M||^2 - sum_{i<=d} m_i) / K with m the
    tap powers in descending order. Tails are accumulated from the weakest tap
    so that rho_bar(M) is exactly 0.

    :param h_M: Time-domain channel.
    :type h_M: np.ndarray
    :param K: Normalization constant.
    :type K: int
    :return: The residual profile.
    :rtype: ResidualProfile
    :raises ZeroVectorException: If ``h_M`` is all zero.
    """
    m = np.sort(_powers(h_M))[::-1]
    tails = np.append(np.cumsum(m[::-1])[::-1], 0.0)
    square_tails = np.cumsum((m ** 2)[::-1])[::-1]
    remaining = np.arange(m.size, 0, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ci = np.where(square_tails > 0, tails[:-1] ** 2 / (remaining * square_tails), 0.0)
    return ResidualProfile(sorted_powers_m=m, rho_bar=tails / K, ci_Rd=ci, K=K)


def rho_lower_bound_product(profile: ResidualProfile, d: int) -> BoundValue:
    """
    Product lower bound prod_{i<d} (1 - 1/sqrt((M-i) CI(R_i))) on K rho_bar(d) / ||h_M||^2.

    Factors that would be negative (empty or single-spike remainders) are
    clamped at 0 and the result is flagged degenerate.

    :param profile: Residual profile of the channel.
    :type profile: ResidualProfile
    :param d: Number of recovered taps, 0 <= d <= M.
    :type d: int
    :return: The bound.
    :rtype: BoundValue
    """
    if not 0 <= d <= profile.M:
        raise ValueError(f"d must lie in [0, {profile.M}], got {d}")
    scaled = (profile.M - np.arange(d)) * profile.ci_Rd[:d]
    with np.errstate(divide="ignore"):
        factors = 1.0 - 1.0 / np.sqrt(scaled)
    degenerate = bool(np.any(factors < 0))
    return BoundValue(value=float(np.prod(np.clip(factors, 0.0, None))), degenerate=degenerate)


def _geometric(ci: float, size: int, d: int) -> BoundValue:
    if not 0 < ci <= 1 + 1e-12:
        raise ValueError(f"CI must lie in (0, 1], got {ci}")
    product = size * ci
    if product < 1:
        return BoundValue(value=0.0, degenerate=True)
    return BoundValue(value=float((1.0 - 1.0 / np.sqrt(product)) ** d))


def rho_lower_bound_geometric(ci_h: float, M: int, d: int) -> BoundValue:
    """Geometric approximation (1 - 1/sqrt(M CI(h_M)))^d."""
    return _geometric(ci_h, M, d)


def rho_lower_bound_amplitude(ci_alpha: float, L: int, d: int) -> BoundValue:
    """Geometric approximation from the amplitudes, (1 - 1/sqrt(L CI(alpha)))^d."""
    return _geometric(ci_alpha, L, d)


def ci_growth_check(h_M: np.ndarray, d_max: int | None = None) -> CiGrowth:
    """
    Ratios r_d = ((M-d+1)/(M-d)) CI(R_{d-1}) / CI(R_d) for d = 1..d_max.

    The geometric approximation of the residual assumes r_d <= 1, i.e. that
    removing the strongest tap raises the CI of the rest at least by
    (M-d+1)/(M-d).

    :param h_M: Time-domain channel.
    :type h_M: np.ndarray
    :param d_max: Last step, defaults to min(40, M/2).
    :type d_max: int | None
    :return: The ratios with degenerate steps flagged.
    :rtype: CiGrowth
    """
    profile = oracle_residual_profile(h_M, 1)
    M = profile.M
    d_max = min(D_MAX, M // 2) if d_max is None else min(d_max, M - 1)
    d = np.arange(1, d_max + 1)
    current = profile.ci_Rd[d]
    degenerate = current <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = (M - d + 1) / (M - d) * profile.ci_Rd[d - 1] / np.where(degenerate, 1.0, current)
    return CiGrowth(ratios=np.where(degenerate, np.nan, ratios), degenerate=degenerate)


def rho_bound_table(profile: ResidualProfile, ci_alpha: float, L: int, d_max: int = D_MAX) -> pd.DataFrame:
    """
    Tabulates the normalized oracle residual and its three lower bounds for d = 0..d_max.

    :param profile: Residual profile of the channel.
    :type profile: ResidualProfile
    :param ci_alpha: CI of the unnormalized MPC amplitudes.
    :type ci_alpha: float
    :param L: Number of MPCs.
    :type L: int
    :param d_max: Last row.
    :type d_max: int
    :return: Columns d, rho_bar, bound_product, bound_geometric_h, bound_geometric_alpha.
    :rtype: pd.DataFrame
    """
    d_max = min(d_max, profile.M)
    ci_h = float(profile.ci_Rd[0])
    normalized = profile.normalized()
    rows = [
        {
            "d": d,
            "rho_bar": normalized[d],
            "bound_product": rho_lower_bound_product(profile, d).value,
            "bound_geometric_h": rho_lower_bound_geometric(ci_h, profile.M, d).value,
            "bound_geometric_alpha": rho_lower_bound_amplitude(ci_alpha, L, d).value,
        }
        for d in range(d_max + 1)
    ]
    return pd.DataFrame(rows)


def amplitude_kurtosis_bridge(mpc_sets: Sequence[MpcSet]) -> KurtosisBridge:
    """
    Relates the amplitude CI to the kurtosis of the unnormalized amplitudes.

    For i.i.d. amplitudes 1/CI({a}) approaches the kurtosis, so
    (1 - 1/sqrt(L CI))^d behaves like (1 - sqrt(kappa / L))^d.

    :param mpc_sets: Channel draws, at least 100 recommended.
    :type mpc_sets: Sequence[MpcSet]
    :return: Ensemble CI and kurtosis estimates.
    :rtype: KurtosisBridge
    """
    if not mpc_sets:
        raise ZeroVectorException("The ensemble is empty")
    if len(mpc_sets) < 100:
        logger.warning(f"Kurtosis bridge over {len(mpc_sets)} draws, estimates are noisy below 100")
    ci = np.array([compressibility_index(mpcs.raw_amplitudes).ci for mpcs in mpc_sets])
    pooled = np.concatenate([mpcs.raw_amplitudes for mpcs in mpc_sets])
    return KurtosisBridge(
        draws=len(mpc_sets),
        ci_alpha_mean=float(ci.mean()),
        inverse_ci_mean=float(np.mean(1.0 / ci)),
        kappa_estimate=kurtosis(pooled),
        lognormal_kappa_estimate=lognormal_kurtosis(pooled),
    )
