import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Literal


PulseKind = Literal["sinc", "raised-cosine"]
AmplitudeKind = Literal["lognormal-decay", "lognormal-flat", "rayleigh-decay", "rayleigh-flat"]
DelayKind = Literal["uniform-poisson", "clustered", "on-grid"]

NS = 1e-9
# truncation tolerance on ||p(tau)||^2 for 2T <= tau <= (M-3)T and on E||h_M||^2
PULSE_TOLERANCE = 0.05


class PulseShape(BaseModel):
    """
    Represents the transmit/receive pulse p(t) together with the sampling grid.

    The pulse is sampled at the instants nT for n = 0..M-1 to build the
    pulse-delay vectors of the discrete-time equivalent channel.

    :ivar kind: Pulse family, either "sinc" or "raised-cosine".
    :type kind: PulseKind
    :ivar roll_off: Raised-cosine roll-off factor in [0, 1], ignored for sinc.
    :type roll_off: float
    :ivar sample_period_T: Sampling period T in seconds.
    :type sample_period_T: float
    :ivar fir_length_M: Length M of the FIR channel (also the CP length).
    :type fir_length_M: int
    """
    model_config = ConfigDict(frozen=True)

    kind: PulseKind = Field("sinc", description="Pulse family")
    roll_off: float = Field(0.0, ge=0.0, le=1.0, description="Raised-cosine roll-off factor")
    sample_period_T: float = Field(2.5 * NS, gt=0, description="Sampling period T in seconds")
    fir_length_M: int = Field(128, gt=0, description="FIR length M")

    @property
    def max_delay(self) -> float:
        return (self.fir_length_M - 1) * self.sample_period_T

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        """
        Evaluates p(t) elementwise, with p(0) = 1.

        :param t: Time instants in seconds.
        :type t: np.ndarray
        :return: Real pulse samples.
        :rtype: np.ndarray
        """
        x = np.asarray(t, dtype=float) / self.sample_period_T
        base = np.sinc(x)
        if self.kind == "sinc" or self.roll_off == 0.0:
            return base
        beta = self.roll_off
        denominator = 1.0 - (2.0 * beta * x) ** 2
        singular = np.isclose(denominator, 0.0)
        safe = np.where(singular, 1.0, denominator)
        shaped = base * np.cos(np.pi * beta * x) / safe
        # limit value at |t| = T/(2 beta)
        limit = np.pi / 4.0 * np.sinc(1.0 / (2.0 * beta))
        return np.where(singular, limit, shaped)


class AmplitudeModel(BaseModel):
    """
    Represents the distribution of the MPC amplitudes.

    :ivar kind: One of the four supported amplitude models.
    :type kind: AmplitudeKind
    :ivar decay_Gamma: Mean power decay constant in seconds (decay kinds).
    :type decay_Gamma: float
    :ivar shadow_var_sigma_alpha2: Variance of the lognormal shadowing term.
    :type shadow_var_sigma_alpha2: float
    :ivar cluster_split: Split the power across clusters first, then across MPCs.
    :type cluster_split: bool
    """
    model_config = ConfigDict(frozen=True)

    kind: AmplitudeKind = Field("lognormal-decay", description="Amplitude model")
    decay_Gamma: float = Field(60 * NS, gt=0, description="Mean power decay in seconds")
    shadow_var_sigma_alpha2: float = Field(
        float(np.log(10) / 4), ge=0, description="Lognormal log-variance of the amplitudes"
    )
    cluster_split: bool = Field(False, description="Two-level normalized-lognormal power split")


class DelayProcessConfig(BaseModel):
    """
    Represents the delay arrival process of the MPCs.

    :ivar kind: "uniform-poisson", "clustered" or "on-grid".
    :ivar mean_cluster_count: Mean of the Poisson cluster count (minimum 1).
    :ivar cluster_rate: Cluster arrival rate in arrivals/second; for
        "uniform-poisson" this is the arrival rate of single MPCs.
    :ivar intra_cluster_rate: Subpath arrival rate inside a cluster.
    :ivar mean_subpaths_per_cluster: Mean subpath count per cluster.
    :ivar max_delay_spread_Ds: Largest admissible delay in seconds.
    :ivar max_mpc_count: Cap on the number of MPCs.
    :ivar on_grid_probability: Activation probability of each tap (on-grid kind).
    :ivar on_grid_period: Tap spacing of the on-grid kind in seconds.
    :ivar merge_tol_s: Delays closer than this are merged.
    """
    model_config = ConfigDict(frozen=True)

    kind: DelayKind = Field("clustered", description="Delay process")
    mean_cluster_count: float = Field(3.2, gt=0, description="Mean number of clusters")
    cluster_rate: float = Field(1 / (50 * NS), ge=0, description="Cluster arrival rate, 1/s")
    intra_cluster_rate: float = Field(1 / (3 * NS), gt=0, description="Intra-cluster arrival rate, 1/s")
    mean_subpaths_per_cluster: float = Field(10.0, ge=1, description="Mean subpaths per cluster")
    max_delay_spread_Ds: float = Field(317.5 * NS, gt=0, description="Maximum delay in seconds")
    max_mpc_count: int = Field(128, gt=0, description="Cap on the number of MPCs")
    on_grid_probability: float = Field(0.25, gt=0, le=1, description="Tap activation probability")
    on_grid_period: float = Field(2.5 * NS, gt=0, description="Tap spacing of the on-grid kind")
    merge_tol_s: float = Field(2.5e-15, gt=0, description="Delay merge tolerance in seconds")


class MpcSet(BaseModel):
    """
    Represents the physical channel as L multipath components.

    :ivar delays_tau: Sorted delays in seconds, the first one is 0.
    :type delays_tau: np.ndarray
    :ivar amplitudes_alpha: Normalized amplitudes, sum of squares equals P_recv.
    :type amplitudes_alpha: np.ndarray
    :ivar phases_phi: Phases in [0, 2pi).
    :type phases_phi: np.ndarray
    :ivar raw_amplitudes: Amplitude draws before normalization.
    :type raw_amplitudes: np.ndarray
    :ivar cluster_ids: Cluster index of every MPC.
    :type cluster_ids: np.ndarray
    :ivar total_power_Precv: Received power P_recv.
    :type total_power_Precv: float
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    delays_tau: np.ndarray = Field(..., description="MPC delays in seconds")
    amplitudes_alpha: np.ndarray = Field(..., description="Normalized MPC amplitudes")
    phases_phi: np.ndarray = Field(..., description="MPC phases in radians")
    raw_amplitudes: np.ndarray = Field(..., description="Unnormalized amplitude draws")
    cluster_ids: np.ndarray = Field(..., description="Cluster index per MPC")
    total_power_Precv: float = Field(1.0, gt=0, description="Received power")

    @model_validator(mode="after")
    def check_components(self) -> "MpcSet":
        lengths = {
            len(self.delays_tau),
            len(self.amplitudes_alpha),
            len(self.phases_phi),
            len(self.raw_amplitudes),
            len(self.cluster_ids),
        }
        if len(lengths) != 1 or len(self.delays_tau) == 0:
            raise ValueError("MPC fields must be non-empty and of equal length")
        if self.delays_tau[0] != 0.0:
            raise ValueError("First delay must be 0")
        if np.any(np.diff(self.delays_tau) <= 0):
            raise ValueError("Delays must be strictly increasing")
        if np.any(self.amplitudes_alpha < 0):
            raise ValueError("Amplitudes must be nonnegative")
        if not np.isclose(np.sum(self.amplitudes_alpha ** 2), self.total_power_Precv, rtol=1e-12):
            raise ValueError("Amplitudes must be normalized to the received power")
        return self

    @property
    def count(self) -> int:
        return len(self.delays_tau)

    @property
    def gains(self) -> np.ndarray:
        """Complex gains a = alpha * exp(j phi)."""
        return self.amplitudes_alpha * np.exp(1j * self.phases_phi)


class TimeChannel(BaseModel):
    """
    Represents the discrete-time FIR equivalent channel h_M.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    h_M: np.ndarray = Field(..., description="Complex FIR taps, length M")

    @property
    def M(self) -> int:
        return len(self.h_M)

    @property
    def power(self) -> float:
        return float(np.vdot(self.h_M, self.h_M).real)


class PulseConfig(BaseModel):
    kind: PulseKind = Field("sinc", description="Pulse family")
    T_ns: float = Field(2.5, gt=0, description="Sampling period in nanoseconds")
    roll_off: float = Field(0.0, ge=0.0, le=1.0, description="Raised-cosine roll-off")


class DelayConfig(BaseModel):
    # cluster count and intra-cluster rate defaults are calibrated stand-ins, not measured values
    kind: DelayKind = Field("clustered", description="Delay process")
    mean_cluster_count: float = Field(3.2, gt=0)
    cluster_rate_per_ns: float = Field(0.02, ge=0)
    intra_cluster_rate_per_ns: float = Field(1 / 3, gt=0)
    mean_subpaths_per_cluster: float = Field(10.0, ge=1)
    max_delay_spread_ns: float = Field(317.5, gt=0)
    max_mpc_count: int = Field(128, gt=0)
    on_grid_probability: float = Field(0.25, gt=0, le=1)


class AmplitudeConfig(BaseModel):
    kind: AmplitudeKind = Field("lognormal-decay", description="Amplitude model")
    gamma_ns: float = Field(60.0, gt=0, description="Mean power decay in nanoseconds")
    sigma_alpha2: float = Field(float(np.log(10) / 4), ge=0, description="Lognormal log-variance")
    cluster_split: bool = Field(False, description="Two-level power split")


class ChannelConfig(BaseModel):
    """
    Represents the keyed channel-model block of configuration files.

    Key names mirror the JSON file: pulse.kind, pulse.T_ns, M, delay.kind,
    delay.<params>, amplitude.kind, amplitude.gamma_ns, amplitude.sigma_alpha2,
    precv. Durations are given in nanoseconds and rates in arrivals per
    nanosecond; the domain models built from it use seconds.
    """
    version: int = Field(1, description="Version of the defaults file")
    pulse: PulseConfig = Field(default_factory=PulseConfig)
    M: int = Field(128, gt=0, description="FIR length")
    delay: DelayConfig = Field(default_factory=DelayConfig)
    amplitude: AmplitudeConfig = Field(default_factory=AmplitudeConfig)
    precv: float = Field(1.0, gt=0, description="Received power")

    @model_validator(mode="after")
    def check_cap(self) -> "ChannelConfig":
        if self.delay.max_mpc_count > self.M:
            raise ValueError("delay.max_mpc_count must not exceed M")
        if self.delay.max_delay_spread_ns > (self.M - 1) * self.pulse.T_ns:
            raise ValueError("delay.max_delay_spread_ns must fit in the FIR window")
        return self

    def pulse_shape(self) -> PulseShape:
        return PulseShape(
            kind=self.pulse.kind,
            roll_off=self.pulse.roll_off,
            sample_period_T=self.pulse.T_ns * NS,
            fir_length_M=self.M,
        )

    def delay_process(self) -> DelayProcessConfig:
        d = self.delay
        return DelayProcessConfig(
            kind=d.kind,
            mean_cluster_count=d.mean_cluster_count,
            cluster_rate=d.cluster_rate_per_ns / NS,
            intra_cluster_rate=d.intra_cluster_rate_per_ns / NS,
            mean_subpaths_per_cluster=d.mean_subpaths_per_cluster,
            max_delay_spread_Ds=d.max_delay_spread_ns * NS,
            max_mpc_count=d.max_mpc_count,
            on_grid_probability=d.on_grid_probability,
            on_grid_period=self.pulse.T_ns * NS,
            merge_tol_s=1e-6 * self.pulse.T_ns * NS,
        )

    def amplitude_model(self) -> AmplitudeModel:
        a = self.amplitude
        return AmplitudeModel(
            kind=a.kind,
            decay_Gamma=a.gamma_ns * NS,
            shadow_var_sigma_alpha2=a.sigma_alpha2,
            cluster_split=a.cluster_split,
        )
