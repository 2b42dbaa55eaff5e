import numpy as np
import pytest
from numpy.testing import assert_allclose
from chanest.api.compressibility import (
    ZeroVectorException,
    adjusted_ci,
    amplitude_kurtosis_bridge,
    ci_growth_check,
    compressibility_index,
    kurtosis,
    lognormal_kurtosis,
    oracle_residual_profile,
    rho_bound_table,
    rho_lower_bound_amplitude,
    rho_lower_bound_geometric,
    rho_lower_bound_product,
)
from chanest.api.multipath import build_time_channel, draw_mpc_set, mpc_set_from_components
from chanest.schemas.channel import AmplitudeConfig, ChannelConfig, DelayConfig


FOUR_TAPS = np.sqrt([0.5, 0.3, 0.2, 0.0])


def equal_power(L: int, M: int) -> np.ndarray:
    v = np.zeros(M, dtype=complex)
    v[:L] = np.exp(1j * np.linspace(0, 3, L))
    return v


def test_ci_of_equal_nonzero_entries_is_sparsity_ratio():
    assert compressibility_index(np.array([1.0, 1.0, 0.0, 0.0])).ci == pytest.approx(0.5)


def test_ci_is_scale_invariant(rng):
    v = rng.normal(size=64) + 1j * rng.normal(size=64)
    assert compressibility_index(-3.7j * v).ci == pytest.approx(compressibility_index(v).ci, rel=1e-12)


def test_ci_of_gaussian_vector_is_inverse_rayleigh_kurtosis(rng):
    v = rng.normal(size=10_000) + 1j * rng.normal(size=10_000)
    stats = compressibility_index(v)
    assert stats.ci == pytest.approx(0.5, abs=0.05)
    assert stats.kurtosis_estimate == pytest.approx(1 / stats.ci)


def test_ci_rejects_zero_vector():
    with pytest.raises(ZeroVectorException):
        compressibility_index(np.zeros(8))


def test_ci_bounds_for_spike_and_flat_vectors():
    spike = np.zeros(16)
    spike[3] = 2.0
    assert compressibility_index(spike).ci == pytest.approx(1 / 16)
    assert compressibility_index(np.ones(16)).ci == pytest.approx(1.0)


def test_adjusted_ci_of_on_grid_channel_equals_amplitude_ci():
    cfg = ChannelConfig(
        M=32,
        delay=DelayConfig(kind="on-grid", max_delay_spread_ns=77.5, max_mpc_count=32, on_grid_probability=0.4),
        amplitude=AmplitudeConfig(kind="rayleigh-flat"),
    )
    for seed in range(10):
        mpcs = draw_mpc_set(cfg, np.random.default_rng(seed))
        h = build_time_channel(mpcs, cfg.pulse_shape()).h_M
        ci_a = compressibility_index(mpcs.amplitudes_alpha).ci
        assert compressibility_index(h).ci == pytest.approx(mpcs.count / cfg.M * ci_a, rel=1e-10)
        assert adjusted_ci(h, mpcs.count) == pytest.approx(ci_a, rel=1e-10)


def test_residual_profile_of_four_taps():
    profile = oracle_residual_profile(FOUR_TAPS, 4)
    assert_allclose(profile.rho_bar, [0.25, 0.125, 0.05, 0.0, 0.0], atol=1e-15)
    assert_allclose(profile.sorted_powers_m, [0.5, 0.3, 0.2, 0.0], atol=1e-15)
    assert profile.ci_Rd[0] == pytest.approx(1 / (4 * 0.38))
    assert profile.ci_Rd[3] == 0.0


def test_residual_profile_recursion(rng):
    h = rng.normal(size=32) + 1j * rng.normal(size=32)
    profile = oracle_residual_profile(h, 128)
    m = profile.sorted_powers_m
    assert profile.rho_bar[0] == pytest.approx(np.linalg.norm(h) ** 2 / 128)
    assert profile.rho_bar[-1] == 0.0
    for d in range(1, 32):
        tail = np.sum(m[d - 1:])
        assert profile.rho_bar[d] == pytest.approx(profile.rho_bar[d - 1] * (1 - m[d - 1] / tail), abs=1e-10)


def test_product_bound_of_four_taps():
    profile = oracle_residual_profile(FOUR_TAPS, 4)
    assert rho_lower_bound_product(profile, 0).value == 1.0
    bound = rho_lower_bound_product(profile, 1)
    assert bound.value == pytest.approx(0.3835, abs=1e-3)
    assert bound.value <= profile.normalized()[1]


def test_product_bound_flags_empty_remainder():
    profile = oracle_residual_profile(FOUR_TAPS, 4)
    bound = rho_lower_bound_product(profile, 4)
    assert bound.degenerate
    assert bound.value == 0.0


@pytest.mark.parametrize("L", [3, 6, 10])
def test_product_bound_of_equal_power_vector(L):
    profile = oracle_residual_profile(equal_power(L, 16), 16)
    for d in range(L):
        assert rho_lower_bound_product(profile, d).value <= 1 - d / L + 1e-12
        assert profile.normalized()[d] == pytest.approx(1 - d / L)


def test_residual_chain_and_share_bounds_hold_per_realization(rng):
    for _ in range(50):
        M = 24
        h = (rng.normal(size=M) + 1j * rng.normal(size=M)) * np.exp(-np.arange(M) / rng.uniform(1, 10))
        profile = oracle_residual_profile(h, 64)
        normalized = profile.normalized()
        for d in range(M):
            assert rho_lower_bound_product(profile, d).value <= normalized[d] + 1e-12
            tail = np.sum(profile.sorted_powers_m[d:])
            if tail <= 0:
                continue
            share = profile.sorted_powers_m[d] / tail
            ci = profile.ci_Rd[d]
            assert 1 / ((M - d) * np.sqrt(ci)) <= share + 1e-12
            assert share <= 1 / np.sqrt((M - d) * ci) + 1e-12


def test_geometric_bounds():
    assert rho_lower_bound_geometric(1.0, 64, 5).value == pytest.approx((1 - 1 / 8) ** 5)
    assert rho_lower_bound_geometric(1 / 64, 64, 3).value == pytest.approx(0.0)
    assert rho_lower_bound_geometric(0.5, 64, 0).value == 1.0
    degenerate = rho_lower_bound_amplitude(0.1, 5, 2)
    assert degenerate.degenerate and degenerate.value == 0.0


def test_ci_growth_of_equal_power_vector():
    L, M = 8, 16
    growth = ci_growth_check(equal_power(L, M))
    d = np.arange(1, L)
    assert len(growth.ratios) == M // 2
    assert_allclose(growth.ratios[:L - 1], (L - d + 1) / (L - d), rtol=1e-12)
    assert growth.degenerate[L - 1]
    assert np.isnan(growth.ratios[L - 1])


def test_ci_growth_of_single_spike_is_degenerate():
    spike = np.zeros(16)
    spike[0] = 1.0
    growth = ci_growth_check(spike)
    assert growth.degenerate[0]
    assert np.isnan(growth.fraction_le())


def test_rho_bound_table_columns(rng):
    h = rng.normal(size=32) + 1j * rng.normal(size=32)
    table = rho_bound_table(oracle_residual_profile(h, 64), 0.5, 20, d_max=10)
    assert list(table.columns) == ["d", "rho_bar", "bound_product", "bound_geometric_h", "bound_geometric_alpha"]
    assert len(table) == 11
    assert (table["bound_product"] <= table["rho_bar"] + 1e-12).all()


def test_kurtosis_of_constant_amplitudes():
    assert kurtosis(np.full(20, 0.3)) == pytest.approx(1.0)
    sets = [mpc_set_from_components([0.0, 1e-9, 2e-9], [1.0, 1.0, 1.0], [0.0, 1.0, 2.0]) for _ in range(100)]
    bridge = amplitude_kurtosis_bridge(sets)
    assert bridge.ci_alpha_mean == pytest.approx(1.0)
    assert bridge.kappa_estimate == pytest.approx(1.0)


def test_lognormal_kurtosis_estimator(rng):
    sigma2 = np.log(10) / 4
    amplitudes = np.exp(rng.normal(0.0, np.sqrt(sigma2), size=20_000))
    assert lognormal_kurtosis(amplitudes) == pytest.approx(10.0, rel=0.15)


def test_rayleigh_kurtosis(rng):
    assert kurtosis(rng.rayleigh(size=200_000)) == pytest.approx(2.0, rel=0.1)


@pytest.mark.slow
@pytest.mark.parametrize("kind, kappa", [("rayleigh-flat", 2.0), ("lognormal-flat", 10.0)])
def test_amplitude_kurtosis_bridge_on_flat_ensembles(kind, kappa):
    cfg = ChannelConfig(amplitude=AmplitudeConfig(kind=kind))
    rng = np.random.default_rng(21)
    bridge = amplitude_kurtosis_bridge([draw_mpc_set(cfg, rng) for _ in range(300)])
    estimate = bridge.kappa_estimate if kind == "rayleigh-flat" else bridge.lognormal_kappa_estimate
    assert estimate == pytest.approx(kappa, rel=0.15)
    assert bridge.inverse_ci_mean > 1.0
