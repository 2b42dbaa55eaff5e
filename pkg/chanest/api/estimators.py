import logging
import numpy as np
from functools import lru_cache
from typing import Callable, Iterable
from chanest.api.linalg import projector, rank_revealing_lstsq
from chanest.api.multipath import pulse_delay_matrix, pulse_delay_vector
from chanest.api.ofdm import f_km_apply, f_nkm_adjoint, f_nkm_apply
from chanest.schemas.channel import MpcSet, PulseShape
from chanest.schemas.estimators import (
    BpdnConfig,
    ChannelEstimate,
    DictionaryConfig,
    ErrorCovModel,
    EstimatorConfig,
    OmpErrorProbe,
)
from chanest.schemas.ofdm import OfdmGrid, PilotObservation


logger = logging.getLogger(__name__)

# refined delays closer than this many sampling periods to the support are rejected
DEGENERATE_ATOM_GAP = 1e-3
# feasibility slack of the l1 solver on ||y - Phi b||^2 <= xi
FEASIBILITY_SLACK = 1e-3


class NumericalRankException(Exception):
    pass


class ConvergenceException(Exception):
    def __init__(self, message: str, last_iterate: np.ndarray | None = None):
        super().__init__(message, last_iterate)
        self.last_iterate = last_iterate

    def __str__(self) -> str:
        return str(self.args[0])


class EmptyAccumulatorException(Exception):
    pass


@lru_cache(maxsize=16)
def delay_dictionary(grid: OfdmGrid, pulse: PulseShape, n_t: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Builds the delay dictionary {n D_s / N_T} and its pilot-domain atoms.

    D_s is the CP duration M T, so with N_T = M the dictionary is the sampling
    grid and with N_T a multiple of M it contains that grid. Atoms past the
    FIR window (M-1) T are dropped, leaving (M-1) N_T // M + 1 of them.

    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :param pulse: Pulse shape.
    :type pulse: PulseShape
    :param n_t: Dictionary size N_T >= M.
    :type n_t: int
    :return: Atom delays and the atom matrix Phi with one column per delay, both read-only.
    :rtype: tuple[np.ndarray, np.ndarray]
    """
    step = grid.M * pulse.sample_period_T / n_t
    delays = np.arange((grid.M - 1) * n_t // grid.M + 1) * step
    phi = f_nkm_apply(pulse_delay_matrix(pulse, delays), grid)
    delays.flags.writeable = False
    phi.flags.writeable = False
    return delays, phi


def _time_estimate(pulse: PulseShape, support: np.ndarray, b_hat: np.ndarray) -> np.ndarray:
    if len(support) == 0:
        return np.zeros(pulse.fir_length_M, dtype=complex)
    return pulse_delay_matrix(pulse, support) @ b_hat


def estimate_ml_m(obs: PilotObservation, grid: OfdmGrid) -> ChannelEstimate:
    """
    Non-sparse ML estimator: LS estimate of h_M followed by F_{K,M}.

    For unit-modulus pilots the pseudo-inverse of D(x_N) F_{N/K,M} reduces to
    (K/N) F_{N/K,M}^H D(x_N)^H.

    :param obs: Pilot observation.
    :type obs: PilotObservation
    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :return: The estimate, with an empty support and L_hat = M.
    :rtype: ChannelEstimate
    """
    h_M_hat = grid.K / grid.N * f_nkm_adjoint(obs.y_derotated, grid)
    residual = obs.y_derotated - f_nkm_apply(h_M_hat, grid)
    return ChannelEstimate(
        h_K_hat=f_km_apply(h_M_hat, grid.K),
        method="ml-m",
        L_hat=grid.M,
        residual_power=float(np.vdot(residual, residual).real),
    )


def estimate_genie_ls(obs: PilotObservation, grid: OfdmGrid, mpcs: MpcSet, pulse: PulseShape) -> ChannelEstimate:
    """
    Genie-aided sparse LS estimator on the true delays.

    :param obs: Pilot observation.
    :type obs: PilotObservation
    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :param mpcs: The true channel, only its delays are used.
    :type mpcs: MpcSet
    :param pulse: Pulse shape.
    :type pulse: PulseShape
    :return: The estimate on the true support.
    :rtype: ChannelEstimate
    :raises NumericalRankException: If the pulse-delay matrix is numerically rank deficient.
    """
    P = pulse_delay_matrix(pulse, mpcs.delays_tau)
    phi = f_nkm_apply(P, grid)
    a_hat, rank = rank_revealing_lstsq(phi, obs.y_derotated)
    if rank < mpcs.count:
        raise NumericalRankException(f"Pulse-delay matrix has rank {rank} for {mpcs.count} delays")
    residual = obs.y_derotated - phi @ a_hat
    return ChannelEstimate(
        h_K_hat=f_km_apply(P @ a_hat, grid.K),
        method="genie-ls",
        support_tau_hat=np.array(mpcs.delays_tau),
        b_hat=a_hat,
        L_hat=mpcs.count,
        residual_power=float(np.vdot(residual, residual).real),
    )


def refine_delay(
        corr_fn: Callable[[float], float],
        delta_mu: float,
        mu_min: float = -0.5,
        mu_max: float = 0.5
) -> float:
    """
    Binary-search local maximum refinement.

    Halves [mu_min, mu_max] towards the endpoint with the larger value until the
    interval is at most 2 delta_mu wide and returns its midpoint. If the target
    has a single maximum in the interval and is symmetric around it, the result
    lies within delta_mu of the maximizer; otherwise it is only guaranteed to
    lie inside the interval.

    :param corr_fn: Function to maximize.
    :type corr_fn: Callable[[float], float]
    :param delta_mu: Desired resolution.
    :type delta_mu: float
    :param mu_min: Left end of the search interval.
    :type mu_min: float
    :param mu_max: Right end of the search interval.
    :type mu_max: float
    :return: The refined point.
    :rtype: float
    """
    mu0, mu1 = mu_min, mu_max
    f0, f1 = corr_fn(mu0), corr_fn(mu1)
    while abs(mu1 - mu0) > 2 * delta_mu:
        mid = (mu0 + mu1) / 2
        if f0 < f1:
            mu0, f0 = mid, corr_fn(mid)
        else:
            mu1, f1 = mid, corr_fn(mid)
    return (mu0 + mu1) / 2


def run_omp(obs: PilotObservation, grid: OfdmGrid, pulse: PulseShape, cfg: DictionaryConfig) -> ChannelEstimate:
    """
    Orthogonal matching pursuit with optional binary-search refinement (OMPBR).

    Every iteration picks the not yet chosen dictionary bin with the largest
    correlation |phi_n^H r|, optionally refines the delay inside the bin,
    re-projects the observation on all selected atoms by LS and updates the
    residual. Iterations stop when ||r||^2 <= xi or after ``max_iters`` atoms.

    :param obs: Pilot observation, the de-rotated image is used.
    :type obs: PilotObservation
    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :param pulse: Pulse shape.
    :type pulse: PulseShape
    :param cfg: Dictionary and stopping rule.
    :type cfg: DictionaryConfig
    :return: The estimate with support, LS coefficients and residual history.
    :rtype: ChannelEstimate
    """
    atom_delays, phi = delay_dictionary(grid, pulse, cfg.N_T)
    step = grid.M * pulse.sample_period_T / cfg.N_T
    refine = cfg.refine == "binary-search"
    sample_times = np.arange(grid.M) * pulse.sample_period_T
    min_gap = DEGENERATE_ATOM_GAP * pulse.sample_period_T

    y = obs.y_derotated
    r = y.copy()
    history = [float(np.vdot(r, r).real)]
    excluded = np.zeros(len(atom_delays), dtype=bool)
    support: list[float] = []
    atoms: list[np.ndarray] = []
    b_hat = np.zeros(0, dtype=complex)

    while history[-1] > cfg.xi and len(support) < cfg.max_iters and not excluded.all():
        corr = np.abs(phi.conj().T @ r)
        corr[excluded] = -1.0
        n = int(np.argmax(corr))
        excluded[n] = True
        tau = float(atom_delays[n])
        atom = phi[:, n]

        if refine:
            g = f_nkm_adjoint(r, grid)
            tau_bar = tau

            def corr_fn(mu: float) -> float:
                return float(np.abs(pulse.evaluate(sample_times - (tau_bar + mu * step)) @ g))

            mu_min = max(-0.5, -tau_bar / step)
            mu_max = min(0.5, (pulse.max_delay - tau_bar) / step)
            mu = refine_delay(corr_fn, cfg.delta_mu, mu_min, mu_max)
            # never worse than the bin-center decision
            if corr_fn(mu) < corr_fn(0.0):
                mu = 0.0
            tau = tau_bar + mu * step
            if support and np.min(np.abs(np.asarray(support) - tau)) < min_gap:
                continue
            if mu != 0.0:
                atom = f_nkm_apply(pulse_delay_vector(pulse, tau), grid)

        support.append(tau)
        atoms.append(atom)
        A = np.column_stack(atoms)
        b_hat, _ = rank_revealing_lstsq(A, y)
        r = y - A @ b_hat
        history.append(float(np.vdot(r, r).real))

    support_arr = np.asarray(support, dtype=float)
    return ChannelEstimate(
        h_K_hat=f_km_apply(_time_estimate(pulse, support_arr, b_hat), grid.K),
        method="ompbr" if refine else "omp",
        support_tau_hat=support_arr,
        b_hat=b_hat,
        L_hat=len(support),
        residual_power=history[-1],
        residual_history=history,
    )


def _soft_threshold(v: np.ndarray, threshold: float) -> np.ndarray:
    magnitude = np.abs(v)
    scale = np.maximum(0.0, 1.0 - threshold / np.maximum(magnitude, np.finfo(float).tiny))
    return v * scale


def _fista(
        phi: np.ndarray,
        y: np.ndarray,
        lam: float,
        b0: np.ndarray,
        lipschitz: float,
        tol: float,
        max_iter: int
) -> tuple[np.ndarray, bool]:
    """Accelerated proximal gradient on 0.5 ||y - Phi b||^2 + lam ||b||_1."""
    x = b0.copy()
    z = x.copy()
    t = 1.0
    residual = y - phi @ x
    obj_prev = 0.5 * np.vdot(residual, residual).real + lam * np.sum(np.abs(x))
    for _ in range(max_iter):
        grad = phi.conj().T @ (phi @ z - y)
        x_new = _soft_threshold(z - grad / lipschitz, lam / lipschitz)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        residual = y - phi @ x
        obj = 0.5 * np.vdot(residual, residual).real + lam * np.sum(np.abs(x))
        if abs(obj_prev - obj) <= tol * max(obj, np.finfo(float).tiny):
            return x, True
        obj_prev = obj
    return x, False


def solve_bpdn(phi: np.ndarray, y: np.ndarray, xi: float, cfg: BpdnConfig) -> np.ndarray:
    """
    Solves min ||b||_1 subject to ||y - Phi b||^2 <= xi.

    The penalized problem is solved with FISTA while the penalty is bisected
    (geometrically) until the residual power lands in
    [xi (1 - window_frac), xi (1 + 1e-3)].

    :param phi: Dictionary matrix.
    :type phi: np.ndarray
    :param y: Observation.
    :type y: np.ndarray
    :param xi: Residual power bound.
    :type xi: float
    :param cfg: Solver settings.
    :type cfg: BpdnConfig
    :return: The sparse coefficient vector.
    :rtype: np.ndarray
    :raises ConvergenceException: If no feasible iterate is found, carrying the last one.
    """
    b = np.zeros(phi.shape[1], dtype=complex)
    if np.vdot(y, y).real <= xi:
        return b
    lipschitz = np.linalg.norm(phi, 2) ** 2
    lam_hi = float(np.max(np.abs(phi.conj().T @ y)))
    lam_lo = lam_hi * 1e-10
    upper = xi * (1 + FEASIBILITY_SLACK)
    lower = xi * (1 - cfg.window_frac)
    feasible = None
    for _ in range(cfg.max_outer):
        lam = np.sqrt(lam_lo * lam_hi)
        b, converged = _fista(phi, y, lam, b, lipschitz, cfg.inner_tol, cfg.max_inner)
        if not converged:
            logger.warning(f"BPDN inner solver hit {cfg.max_inner} iterations at penalty {lam:.3e}")
        residual = y - phi @ b
        power = np.vdot(residual, residual).real
        if power > upper:
            lam_hi = lam
            continue
        feasible = b
        if power >= lower:
            break
        lam_lo = lam
    if feasible is None:
        raise ConvergenceException(f"BPDN found no iterate with residual power <= {xi:.3e}", last_iterate=b)
    return feasible


def run_bpdn(
        obs: PilotObservation,
        grid: OfdmGrid,
        pulse: PulseShape,
        cfg: DictionaryConfig,
        bpdn: BpdnConfig | None = None,
        debias: bool = False
) -> ChannelEstimate:
    """
    Basis pursuit denoising on the delay dictionary.

    With ``debias`` the atoms above max(threshold_frac max|b|, sigma/sqrt(N))
    form the support of a final LS step ("bpdn-ls"); otherwise the l1
    solution itself is the estimate ("bpdn-direct").

    :param obs: Pilot observation.
    :type obs: PilotObservation
    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :param pulse: Pulse shape.
    :type pulse: PulseShape
    :param cfg: Dictionary size and xi; refinement settings are ignored.
    :type cfg: DictionaryConfig
    :param bpdn: Solver settings.
    :type bpdn: BpdnConfig | None
    :param debias: Apply the support threshold and LS step.
    :type debias: bool
    :return: The estimate.
    :rtype: ChannelEstimate
    :raises ConvergenceException: If the l1 solver finds no feasible point.
    """
    bpdn = bpdn or BpdnConfig()
    atom_delays, phi = delay_dictionary(grid, pulse, cfg.N_T)
    y = obs.y_derotated
    b = solve_bpdn(phi, y, cfg.xi, bpdn)

    magnitude = np.abs(b)
    if debias:
        threshold = max(bpdn.threshold_frac * magnitude.max(initial=0.0), np.sqrt(obs.noise_var_sigma2 / grid.N))
        keep = np.flatnonzero(magnitude > threshold)
        b_hat, _ = rank_revealing_lstsq(phi[:, keep], y)
    else:
        keep = np.flatnonzero(magnitude > 0)
        b_hat = b[keep]
    support = np.asarray(atom_delays[keep], dtype=float)
    residual = y - phi[:, keep] @ b_hat
    return ChannelEstimate(
        h_K_hat=f_km_apply(_time_estimate(pulse, support, b_hat), grid.K),
        method="bpdn-ls" if debias else "bpdn-direct",
        support_tau_hat=support,
        b_hat=b_hat,
        L_hat=len(keep),
        residual_power=float(np.vdot(residual, residual).real),
    )


def estimate(
        cfg: EstimatorConfig,
        obs: PilotObservation,
        grid: OfdmGrid,
        pulse: PulseShape,
        mpcs: MpcSet | None = None,
        h_M: np.ndarray | None = None
) -> ChannelEstimate:
    """
    Runs the estimator named by ``cfg``.

    ``mpcs`` is required by genie-ls and ``h_M`` by perfect-csi.
    """
    match cfg.method:
        case "perfect-csi":
            return ChannelEstimate(h_K_hat=f_km_apply(h_M, grid.K), method="perfect-csi", L_hat=0)
        case "ml-m":
            return estimate_ml_m(obs, grid)
        case "genie-ls":
            return estimate_genie_ls(obs, grid, mpcs, pulse)
        case "omp" | "ompbr":
            return run_omp(obs, grid, pulse, cfg.dictionary_config(grid.M, grid.N, obs.noise_var_sigma2))
        case "bpdn-direct" | "bpdn-ls":
            return run_bpdn(
                obs,
                grid,
                pulse,
                cfg.dictionary_config(grid.M, grid.N, obs.noise_var_sigma2),
                cfg.bpdn,
                debias=cfg.method == "bpdn-ls",
            )


def residual_of_support(h_M: np.ndarray, support_tau: np.ndarray, pulse: PulseShape, K: int) -> float:
    """
    Residual rho(T) = ||(I - P_T P_T^+) h_M||^2 / K of a delay support.

    :param h_M: Time-domain channel.
    :type h_M: np.ndarray
    :param support_tau: Delays of the support.
    :type support_tau: np.ndarray
    :param pulse: Pulse shape.
    :type pulse: PulseShape
    :param K: DFT size.
    :type K: int
    :return: The residual.
    :rtype: float
    """
    P = pulse_delay_matrix(pulse, support_tau)
    outside = h_M - projector(P) @ h_M
    return float(np.vdot(outside, outside).real) / K


def two_step_error_split(
        h_M: np.ndarray,
        est: ChannelEstimate,
        pulse: PulseShape,
        K: int
) -> tuple[float, float, float]:
    """
    Splits the error of a support-based estimate into its orthogonal parts.

    :return: (K rho(T_hat), ||F P (b - b_hat)||^2, ||h_K - h_K_hat||^2).
    :rtype: tuple[float, float, float]
    """
    P = pulse_delay_matrix(pulse, est.support_tau_hat)
    b, _ = rank_revealing_lstsq(P, h_M)
    outside = h_M - P @ b
    noise = P @ (b - est.b_hat)
    error = f_km_apply(h_M, K) - est.h_K_hat
    return (
        float(np.vdot(outside, outside).real),
        float(np.vdot(noise, noise).real),
        float(np.vdot(error, error).real),
    )


def periodic_sinc_kernel(K: int, M: int) -> np.ndarray:
    """
    Closed form of F_{K,M} F_{K,M}^H, a periodic-sinc (Dirichlet) kernel:
    (1/K) exp(-j pi (M-1) d / K) sin(pi M d / K) / sin(pi d / K) with d = i - j.
    """
    d = np.subtract.outer(np.arange(K), np.arange(K))
    denominator = np.sin(np.pi * d / K)
    on_diagonal = np.isclose(denominator, 0.0)
    ratio = np.where(on_diagonal, M, np.sin(np.pi * M * d / K) / np.where(on_diagonal, 1.0, denominator))
    return ratio * np.exp(-1j * np.pi * (M - 1) * d / K) / K


def error_cov_ml_m(grid: OfdmGrid, sigma2: float) -> ErrorCovModel:
    """
    Error covariance of the non-sparse ML estimator, inner = (K/N) sigma^2 I_M.

    The per-coefficient MSE is nu^2 = (M/N) sigma^2 and Sigma equals
    (K/M) nu^2 times the periodic-sinc kernel.
    """
    inner = grid.K / grid.N * sigma2 * np.eye(grid.M, dtype=complex)
    return ErrorCovModel(kind="ml-m-closed-form", nu2=grid.M * sigma2 / grid.N, inner=inner, K=grid.K)


def error_cov_genie(grid: OfdmGrid, mpcs: MpcSet, pulse: PulseShape, sigma2: float) -> ErrorCovModel:
    """Error covariance of the genie-aided estimator, inner = (K/N) sigma^2 P P^+ (rank L)."""
    inner = grid.K / grid.N * sigma2 * projector(pulse_delay_matrix(pulse, mpcs.delays_tau))
    return ErrorCovModel(kind="genie-closed-form", nu2=float(np.trace(inner).real) / grid.K, inner=inner, K=grid.K)


class ErrorCovAccumulator:
    """
    Accumulates the empirical inner covariance of two-step CS estimates.

    Each trial contributes P z_b z_b^H P^H + Y a a^H Y^H, where z_b = b_hat - b is
    the noise projection and Y a = (I - P P^+) h_M the part of the channel
    outside the recovered subspace. Partial accumulators computed on disjoint
    trials can be merged.
    """

    def __init__(self, M: int, K: int):
        self.M = M
        self.K = K
        self.total = np.zeros((M, M), dtype=complex)
        self.count = 0

    def add(self, h_M: np.ndarray, est: ChannelEstimate, pulse: PulseShape) -> None:
        P = pulse_delay_matrix(pulse, est.support_tau_hat)
        b, _ = rank_revealing_lstsq(P, h_M)
        noise = P @ (est.b_hat - b)
        outside = h_M - P @ b
        self.total += np.outer(noise, noise.conj()) + np.outer(outside, outside.conj())
        self.count += 1

    def merge(self, other: "ErrorCovAccumulator") -> "ErrorCovAccumulator":
        merged = ErrorCovAccumulator(self.M, self.K)
        merged.total = self.total + other.total
        merged.count = self.count + other.count
        return merged

    def finalize(self) -> ErrorCovModel:
        if self.count == 0:
            raise EmptyAccumulatorException("No trials were accumulated")
        inner = self.total / self.count
        return ErrorCovModel(
            kind="cs-empirical",
            nu2=float(np.trace(inner).real) / self.K,
            inner=inner,
            K=self.K,
            sample_count=self.count,
        )


def error_cov_cs_empirical(
        trials: Iterable[tuple[np.ndarray, ChannelEstimate]],
        pulse: PulseShape,
        K: int
) -> ErrorCovModel:
    """Empirical covariance model from (h_M, estimate) pairs."""
    accumulator = ErrorCovAccumulator(pulse.fir_length_M, K)
    for h_M, est in trials:
        accumulator.add(h_M, est, pulse)
    return accumulator.finalize()


def omp_error_probe(
        trials: Iterable[tuple[np.ndarray, ChannelEstimate]],
        pulse: PulseShape,
        grid: OfdmGrid,
        sigma2: float
) -> OmpErrorProbe:
    """
    Averages the two error terms of CS estimates at one noise level.

    :param trials: (h_M, estimate) pairs drawn at noise variance ``sigma2``.
    :type trials: Iterable[tuple[np.ndarray, ChannelEstimate]]
    :param pulse: Pulse shape.
    :type pulse: PulseShape
    :param grid: OFDM grid.
    :type grid: OfdmGrid
    :param sigma2: Noise variance of the observations.
    :type sigma2: float
    :return: E[L_hat], the MSE and the two error terms, each per coefficient.
    :rtype: OmpErrorProbe
    """
    lhat, residual_terms, noise_terms, totals = [], [], [], []
    for h_M, est in trials:
        outside, noise, total = two_step_error_split(h_M, est, pulse, grid.K)
        lhat.append(est.L_hat)
        residual_terms.append(outside / grid.K)
        noise_terms.append(noise / grid.K)
        totals.append(total / grid.K)
    if not lhat:
        raise EmptyAccumulatorException("No trials were probed")
    if len(lhat) < 100:
        logger.warning(f"OMP error probe over {len(lhat)} trials, averages are noisy below 100")
    return OmpErrorProbe(
        trials=len(lhat),
        E_Lhat=float(np.mean(lhat)),
        mse=float(np.mean(totals)),
        term_noise=float(np.mean(noise_terms)),
        term_residual=float(np.mean(residual_terms)),
        sigma2=sigma2,
        N=grid.N,
    )
