import numpy as np
import pytest
from chanest.schemas.channel import NS, ChannelConfig, DelayConfig, MpcSet, PulseShape
from chanest.schemas.ofdm import OfdmGrid


T = 2.5 * NS


def make_mpc_set(delays, gains) -> MpcSet:
    """MpcSet from explicit delays and complex gains, without merging."""
    gains = np.asarray(gains, dtype=complex)
    amplitudes = np.abs(gains)
    return MpcSet(
        delays_tau=np.asarray(delays, dtype=float),
        amplitudes_alpha=amplitudes,
        phases_phi=np.mod(np.angle(gains), 2 * np.pi),
        raw_amplitudes=amplitudes,
        cluster_ids=np.zeros(len(gains), dtype=int),
        total_power_Precv=float(np.sum(amplitudes ** 2)),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def pulse() -> PulseShape:
    return PulseShape(kind="sinc", sample_period_T=T, fir_length_M=16)


@pytest.fixture
def grid() -> OfdmGrid:
    return OfdmGrid(K=64, M=16, N=32)


@pytest.fixture
def square_grid() -> OfdmGrid:
    return OfdmGrid(K=64, M=16, N=16)


@pytest.fixture
def small_channel() -> ChannelConfig:
    return ChannelConfig(
        M=16,
        delay=DelayConfig(max_delay_spread_ns=30.0, max_mpc_count=16, mean_subpaths_per_cluster=3.0),
    )
