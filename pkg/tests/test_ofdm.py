import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError
from chanest.api.ofdm import (
    InvalidPilotException,
    dump_observation_csv,
    f_km_apply,
    f_nkm_adjoint,
    f_nkm_apply,
    freq_channel,
    noise_variance,
    observe_pilots,
    qpsk_pilots,
    reconstruct_hK_from_pilot_image,
    unit_pilots,
)
from chanest.schemas.ofdm import OfdmGrid


def dense_f_km(K: int, M: int) -> np.ndarray:
    k, m = np.meshgrid(np.arange(K), np.arange(M), indexing="ij")
    return np.exp(-2j * np.pi * k * m / K) / np.sqrt(K)


def random_vector(rng, size) -> np.ndarray:
    return rng.normal(size=size) + 1j * rng.normal(size=size)


def test_grid_validation():
    with pytest.raises(ValidationError):
        OfdmGrid(K=64, M=32, N=16)
    with pytest.raises(ValidationError):
        OfdmGrid(K=60, M=16, N=32)
    assert OfdmGrid(K=64, M=16, N=32).spacing == 2


def test_f_km_matches_dense_operator(rng):
    h = random_vector(rng, 16)
    assert_allclose(f_km_apply(h, 64), dense_f_km(64, 16) @ h, atol=1e-10)


def test_f_nkm_matches_pilot_rows_of_dense_operator(rng, grid):
    F_nkm = dense_f_km(grid.K, grid.M)[grid.pilot_indices]
    h = random_vector(rng, grid.M)
    H = random_vector(rng, (grid.M, 3))
    assert_allclose(f_nkm_apply(h, grid), F_nkm @ h, atol=1e-10)
    assert_allclose(f_nkm_apply(H, grid), F_nkm @ H, atol=1e-10)
    v = random_vector(rng, grid.N)
    assert_allclose(f_nkm_adjoint(v, grid), F_nkm.conj().T @ v, atol=1e-10)


def test_pilot_image_reconstructs_full_channel(rng, grid):
    h = random_vector(rng, grid.M)
    channel = freq_channel(h, grid)
    assert_allclose(reconstruct_hK_from_pilot_image(channel.h_NK, grid), channel.h_K, atol=1e-10)
    assert_allclose(channel.h_NK, channel.h_K[grid.pilot_indices], atol=1e-12)


def test_noise_variance_is_per_subcarrier():
    assert noise_variance(0.0, 512) == pytest.approx(1 / 512)
    assert noise_variance(10.0, 512) == pytest.approx(1 / 5120)


def test_noiseless_observation_is_the_pilot_image(rng, grid):
    h = random_vector(rng, grid.M)
    pilots = qpsk_pilots(grid.N, rng)
    obs = observe_pilots(h, grid, pilots, 0.0, rng)
    assert_allclose(obs.y_N, pilots * f_nkm_apply(h, grid), atol=1e-12)
    assert_allclose(obs.y_derotated, f_nkm_apply(h, grid), atol=1e-12)


def test_observation_rejects_non_unit_pilots(rng, grid):
    with pytest.raises(InvalidPilotException):
        observe_pilots(np.zeros(grid.M), grid, 2 * unit_pilots(grid.N), 0.1, rng)


def test_qpsk_pilots_have_unit_modulus(rng):
    pilots = qpsk_pilots(256, rng)
    assert_allclose(np.abs(pilots), 1.0)
    assert_allclose(np.sort(np.unique(np.round(np.angle(pilots), 6))), np.round(np.pi * np.array([-3, -1, 1, 3]) / 4, 6))


def test_observation_noise_variance(rng):
    grid = OfdmGrid(K=4096, M=16, N=4096)
    obs = observe_pilots(np.zeros(grid.M), grid, unit_pilots(grid.N), 0.3, rng)
    assert np.mean(np.abs(obs.y_N) ** 2) == pytest.approx(0.3, rel=0.1)


def test_dump_observation_csv(tmp_path, rng, grid):
    obs = observe_pilots(random_vector(rng, grid.M), grid, unit_pilots(grid.N), 0.1, rng)
    path = tmp_path / "obs.csv"
    dump_observation_csv(obs, str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["subcarrier_index", "re(y)", "im(y)"]
    assert_allclose(frame["re(y)"] + 1j * frame["im(y)"], obs.y_N)
