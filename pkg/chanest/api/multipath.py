import numpy as np
import os
from typing import Sequence
from chanest.schemas.channel import (
    AmplitudeModel,
    ChannelConfig,
    DelayProcessConfig,
    MpcSet,
    PulseShape,
    TimeChannel,
)


ROOT_PATH = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
DEFAULTS_PATH = os.path.join(ROOT_PATH, "config/channel_defaults.json")
# relative slack on range checks, absorbs round-off of tau = n*T
RANGE_SLACK = 1e-9


class DelayOutOfRangeException(Exception):
    pass


class InvalidChannelException(Exception):
    pass


def load_channel_config(path: str | None = None) -> ChannelConfig:
    """
    Loads the keyed channel-model block from a JSON file.

    :param path: Path to the JSON file. Defaults to the calibrated defaults
        shipped in ``chanest/config/channel_defaults.json``.
    :type path: str | None
    :return: The validated channel configuration.
    :rtype: ChannelConfig
    :raises pydantic.ValidationError: If the file does not match the schema.
    """
    with open(path or DEFAULTS_PATH, encoding="utf-8") as fh:
        return ChannelConfig.model_validate_json(fh.read())


def _check_delays(pulse: PulseShape, delays: np.ndarray) -> None:
    slack = RANGE_SLACK * pulse.sample_period_T
    if np.any(delays < -slack) or np.any(delays > pulse.max_delay + slack):
        raise DelayOutOfRangeException(
            f"Delays must lie in [0, {pulse.max_delay:.4g}] s, got [{delays.min():.4g}, {delays.max():.4g}]"
        )


def pulse_delay_vector(pulse: PulseShape, tau: float) -> np.ndarray:
    """
    Builds the size-M pulse-delay vector with entries p(nT - tau).

    :param pulse: Pulse shape and sampling grid.
    :type pulse: PulseShape
    :param tau: Delay in seconds, inside [0, (M-1)T].
    :type tau: float
    :return: Complex vector of length M.
    :rtype: np.ndarray
    :raises DelayOutOfRangeException: If tau falls outside the FIR window.
    """
    _check_delays(pulse, np.atleast_1d(float(tau)))
    n = np.arange(pulse.fir_length_M)
    return pulse.evaluate(n * pulse.sample_period_T - tau).astype(complex)


def pulse_delay_matrix(pulse: PulseShape, delays: Sequence[float]) -> np.ndarray:
    """
    Stacks the pulse-delay vectors of ``delays`` as the columns of an M x L matrix.

    :param pulse: Pulse shape and sampling grid.
    :type pulse: PulseShape
    :param delays: Distinct delays in seconds.
    :type delays: Sequence[float]
    :return: Complex matrix of shape (M, L).
    :rtype: np.ndarray
    :raises InvalidChannelException: If two delays coincide.
    :raises DelayOutOfRangeException: If a delay falls outside the FIR window.
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size == 0:
        return np.zeros((pulse.fir_length_M, 0), dtype=complex)
    _check_delays(pulse, delays)
    if np.unique(delays).size != delays.size:
        raise InvalidChannelException("Duplicate delays make the pulse-delay matrix rank deficient")
    n = np.arange(pulse.fir_length_M)[:, None]
    return pulse.evaluate(n * pulse.sample_period_T - delays[None, :]).astype(complex)


def merge_close_delays(
        delays: np.ndarray,
        amplitudes: np.ndarray,
        phases: np.ndarray,
        tol: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Merges sorted delays that lie closer than ``tol`` to the first delay of their group.

    Merged components keep the first delay, the total power of the group and the
    phase of its strongest member.

    :return: Merged delays, amplitudes and phases.
    :rtype: tuple[np.ndarray, np.ndarray, np.ndarray]
    """
    order = np.argsort(delays, kind="stable")
    delays, amplitudes, phases = delays[order], amplitudes[order], phases[order]
    out_delays, out_amplitudes, out_phases = [], [], []
    start = 0
    for i in range(1, len(delays) + 1):
        if i < len(delays) and delays[i] - delays[start] < tol:
            continue
        group = slice(start, i)
        strongest = start + int(np.argmax(amplitudes[group]))
        out_delays.append(delays[start])
        out_amplitudes.append(np.sqrt(np.sum(amplitudes[group] ** 2)))
        out_phases.append(phases[strongest])
        start = i
    return np.array(out_delays), np.array(out_amplitudes), np.array(out_phases)


def mpc_set_from_components(
        delays: Sequence[float],
        amplitudes: Sequence[float],
        phases: Sequence[float],
        Precv: float = 1.0,
        tol: float = 2.5e-15
) -> MpcSet:
    """
    Builds an ``MpcSet`` from explicit components, merging near-duplicate delays
    and normalizing the amplitudes to ``Precv``.
    """
    delays, amplitudes, phases = merge_close_delays(
        np.asarray(delays, dtype=float),
        np.asarray(amplitudes, dtype=float),
        np.mod(np.asarray(phases, dtype=float), 2 * np.pi),
        tol,
    )
    if delays.size == 0 or np.sum(amplitudes ** 2) == 0:
        raise InvalidChannelException("A channel needs at least one component with nonzero power")
    normalized = amplitudes * np.sqrt(Precv / np.sum(amplitudes ** 2))
    return MpcSet(
        delays_tau=delays,
        amplitudes_alpha=normalized,
        phases_phi=phases,
        raw_amplitudes=amplitudes,
        cluster_ids=np.zeros(delays.size, dtype=int),
        total_power_Precv=Precv,
    )


def _cluster_delays(cfg: DelayProcessConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_clusters = max(1, int(rng.poisson(cfg.mean_cluster_count)))
    if cfg.cluster_rate > 0:
        gaps = rng.exponential(1.0 / cfg.cluster_rate, size=n_clusters - 1)
        origins = np.concatenate(([0.0], np.cumsum(gaps)))
    else:
        origins = np.zeros(1)
    delays, clusters = [], []
    for c, origin in enumerate(origins):
        n_sub = 1 + int(rng.poisson(cfg.mean_subpaths_per_cluster - 1.0))
        offsets = np.concatenate(([0.0], np.cumsum(rng.exponential(1.0 / cfg.intra_cluster_rate, size=n_sub - 1))))
        delays.append(origin + offsets)
        clusters.append(np.full(n_sub, c))
    return np.concatenate(delays), np.concatenate(clusters)


def _sample_delays_with_clusters(cfg: DelayProcessConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    match cfg.kind:
        case "uniform-poisson":
            count = int(rng.poisson(cfg.cluster_rate * cfg.max_delay_spread_Ds))
            delays = np.concatenate(([0.0], rng.uniform(0.0, cfg.max_delay_spread_Ds, size=count)))
            clusters = np.zeros(delays.size, dtype=int)
        case "clustered":
            delays, clusters = _cluster_delays(cfg, rng)
        case "on-grid":
            n_taps = int(np.floor(cfg.max_delay_spread_Ds / cfg.on_grid_period + RANGE_SLACK))
            active = np.flatnonzero(rng.random(n_taps) < cfg.on_grid_probability) + 1
            delays = np.concatenate(([0], active)) * cfg.on_grid_period
            clusters = np.zeros(delays.size, dtype=int)
        case _:
            raise InvalidChannelException(f"Delay process {cfg.kind} not recognized.")

    keep = delays <= cfg.max_delay_spread_Ds
    delays, clusters = delays[keep], clusters[keep]
    order = np.argsort(delays, kind="stable")
    delays, clusters = delays[order], clusters[order]
    # drop near-duplicates, the first arrival of a group stays
    distinct = np.concatenate(([True], np.diff(delays) >= cfg.merge_tol_s))
    delays, clusters = delays[distinct], clusters[distinct]
    return delays[:cfg.max_mpc_count], clusters[:cfg.max_mpc_count]


def sample_delays(cfg: DelayProcessConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Draws a sorted delay list with first element 0 from the configured arrival process.

    The clustered kind draws Poisson(mean_cluster_count) clusters (at least one)
    whose origins follow a Poisson process at ``cluster_rate``; each cluster
    holds 1 + Poisson(mean_subpaths_per_cluster - 1) subpaths with exponential
    inter-arrivals at ``intra_cluster_rate``. Arrivals beyond D_s are dropped,
    near-duplicates merged and the earliest ``max_mpc_count`` kept.

    :param cfg: Delay process configuration.
    :type cfg: DelayProcessConfig
    :param rng: Seeded generator.
    :type rng: np.random.Generator
    :return: Delays in seconds.
    :rtype: np.ndarray
    """
    delays, _ = _sample_delays_with_clusters(cfg, rng)
    return delays


def _raw_draws(model: AmplitudeModel, delays: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    sigma = np.sqrt(model.shadow_var_sigma_alpha2)
    match model.kind:
        case "lognormal-decay":
            return np.exp(-delays / model.decay_Gamma + rng.normal(0.0, sigma, size=delays.size))
        case "lognormal-flat":
            return np.exp(rng.normal(0.0, sigma, size=delays.size))
        case "rayleigh-decay":
            return rng.rayleigh(scale=np.exp(-delays / model.decay_Gamma))
        case "rayleigh-flat":
            return rng.rayleigh(scale=1.0, size=delays.size)
        case _:
            raise InvalidChannelException(f"Amplitude model {model.kind} not recognized.")


def _cluster_split_draws(
        model: AmplitudeModel,
        delays: np.ndarray,
        cluster_ids: np.ndarray,
        rng: np.random.Generator
) -> np.ndarray:
    clusters = np.unique(cluster_ids)
    origins = np.array([delays[cluster_ids == c].min() for c in clusters])
    log_power = 2.0 * rng.normal(0.0, np.sqrt(model.shadow_var_sigma_alpha2), size=clusters.size)
    if model.kind.endswith("-decay"):
        log_power -= 2.0 * origins / model.decay_Gamma
    shares = np.exp(log_power - log_power.max())
    shares /= shares.sum()
    raw = np.empty(delays.size)
    for c, origin, share in zip(clusters, origins, shares):
        members = cluster_ids == c
        inner = _raw_draws(model, delays[members] - origin, rng)
        raw[members] = inner * np.sqrt(share / np.sum(inner ** 2))
    return raw


def sample_amplitudes(
        model: AmplitudeModel,
        delays: np.ndarray,
        Precv: float,
        rng: np.random.Generator,
        cluster_ids: np.ndarray | None = None
) -> MpcSet:
    """
    Draws amplitudes and phases for the given delays and normalizes the power.

    Unnormalized amplitudes follow the model kind (log a = -tau/Gamma + zeta for
    lognormal-decay, log a = zeta for lognormal-flat, Rayleigh with scale
    exp(-tau/Gamma) or unit scale for the Rayleigh kinds). With
    ``cluster_split`` the power is first split across clusters by a normalized
    lognormal and then across the MPCs of every cluster. Phases are i.i.d.
    uniform in [0, 2pi).

    :param model: Amplitude model.
    :type model: AmplitudeModel
    :param delays: Sorted delays in seconds with first element 0.
    :type delays: np.ndarray
    :param Precv: Total received power the amplitudes are normalized to.
    :type Precv: float
    :param rng: Seeded generator.
    :type rng: np.random.Generator
    :param cluster_ids: Cluster index of each delay, defaults to a single cluster.
    :type cluster_ids: np.ndarray | None
    :return: The multipath component set.
    :rtype: MpcSet
    :raises InvalidChannelException: If ``delays`` is empty.
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size == 0:
        raise InvalidChannelException("Cannot draw amplitudes for an empty delay list")
    if cluster_ids is None:
        cluster_ids = np.zeros(delays.size, dtype=int)

    if model.cluster_split:
        raw = _cluster_split_draws(model, delays, cluster_ids, rng)
    else:
        raw = _raw_draws(model, delays, rng)
    amplitudes = raw * np.sqrt(Precv / np.sum(raw ** 2))
    phases = rng.uniform(0.0, 2 * np.pi, size=delays.size)
    return MpcSet(
        delays_tau=delays,
        amplitudes_alpha=amplitudes,
        phases_phi=phases,
        raw_amplitudes=raw,
        cluster_ids=np.asarray(cluster_ids),
        total_power_Precv=Precv,
    )


def draw_mpc_set(cfg: ChannelConfig, rng: np.random.Generator) -> MpcSet:
    """Draws delays and amplitudes of one channel realization from a channel block."""
    delays, clusters = _sample_delays_with_clusters(cfg.delay_process(), rng)
    return sample_amplitudes(cfg.amplitude_model(), delays, cfg.precv, rng, cluster_ids=clusters)


def build_time_channel(mpcs: MpcSet, pulse: PulseShape) -> TimeChannel:
    """
    Computes h_M = P_{tau} a, the FIR equivalent of the multipath channel.

    :param mpcs: Multipath components.
    :type mpcs: MpcSet
    :param pulse: Pulse shape and sampling grid.
    :type pulse: PulseShape
    :return: The discrete-time channel.
    :rtype: TimeChannel
    :raises DelayOutOfRangeException: If a delay falls outside the FIR window.
    """
    P = pulse_delay_matrix(pulse, mpcs.delays_tau)
    return TimeChannel(h_M=P @ mpcs.gains)


def gaussian_time_channel(M: int, rng: np.random.Generator) -> TimeChannel:
    # non-sparse i.i.d. reference, unit power
    h = (rng.normal(size=M) + 1j * rng.normal(size=M)) / np.sqrt(2)
    return TimeChannel(h_M=h / np.linalg.norm(h))
