import numpy as np
import pytest

from mbisac.array import ArrayModel, SteeringDictionary, sample_impairment, steering_matrix, \
    steering_vector, uniform_angle_grid
from mbisac.beamforming import desired_beampattern, isac_combine, synthesize, \
    synthesize_batch, transmit_response

LAM = 3e8 / 60e9
GRID = uniform_angle_grid(181)


def test_desired_beampattern_values():
    b = desired_beampattern(GRID, (-0.2, 0.3), 8)
    assert set(np.unique(b.response)) == {0.0, 8.0}
    inside = (GRID >= -0.2) & (GRID <= 0.3)
    assert np.array_equal(b.response == 8, inside)


def test_single_antenna_is_mean_of_pattern():
    sd = SteeringDictionary(np.ones((1, GRID.size), dtype=complex), GRID)
    f = synthesize(sd, (0.1, 0.6)).f
    b = desired_beampattern(GRID, (0.1, 0.6), 1).response
    assert np.allclose(f, b.sum() / GRID.size)


def test_ls_optimality():
    rng = np.random.default_rng(0)
    sd = steering_matrix(ArrayModel.nominal(8, LAM), GRID)
    f = synthesize(sd, (-0.5, -0.1)).f
    b = desired_beampattern(GRID, (-0.5, -0.1), 8).response
    best = np.linalg.norm(b - sd.matrix.T @ f)
    for _ in range(20):
        f0 = f + 0.1 * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
        assert best <= np.linalg.norm(b - sd.matrix.T @ f0) + 1e-6


def test_full_grid_gives_broad_beam():
    sd = steering_matrix(ArrayModel.nominal(8, LAM), GRID)
    f = synthesize(sd, (GRID[0], GRID[-1])).f
    resp = transmit_response(ArrayModel.nominal(8, LAM), f, GRID)
    assert np.all(resp >= 0)
    central = np.abs(GRID) < np.deg2rad(60)
    assert resp[central].min() > 0.1 * resp.max()


def test_empty_interval_rejected():
    sd = steering_matrix(ArrayModel.nominal(4, LAM), uniform_angle_grid(10))
    with pytest.raises(ValueError, match="empty beampattern"):
        synthesize(sd, (0.01, 0.02))
    with pytest.raises(ValueError, match="empty beampattern"):
        synthesize_batch(sd, [(0.01, 0.02)])


def test_batch_matches_single():
    sd = steering_matrix(ArrayModel.nominal(6, LAM), GRID)
    iv = [(-0.5, -0.2), (0.0, 0.4)]
    F = synthesize_batch(sd, iv)
    for k, i in enumerate(iv):
        assert np.allclose(F[k], synthesize(sd, i).f)


def test_isac_combine_corners_and_power():
    rng = np.random.default_rng(2)
    f_r = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    f_c = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    P = 2.5
    assert np.allclose(isac_combine(f_r, f_c, 1.0, 0.3, P).f,
                       np.sqrt(P) * f_r / np.linalg.norm(f_r))
    assert np.allclose(isac_combine(f_r, f_c, 0.0, 0.0, P).f,
                       np.sqrt(P) * f_c / np.linalg.norm(f_c))
    for eta in np.linspace(0, 1, 7):
        for phi in (0, 1.0, np.pi, 5.0):
            f = isac_combine(f_r, f_c, eta, phi, P).f
            assert abs(np.vdot(f, f).real - P) < 1e-9 * P


def test_isac_combine_errors_and_continuity():
    f = np.ones(4, dtype=complex)
    with pytest.raises(ValueError):
        isac_combine(f, -f, 0.5, 0.0, 1.0)
    with pytest.raises(ValueError):
        isac_combine(f, f, 1.5, 0.0, 1.0)
    rng = np.random.default_rng(3)
    f_r = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    f_c = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    a = isac_combine(f_r, f_c, 0.5, 0.2, 1.0).f
    b = isac_combine(f_r, f_c, 0.5 + 1e-7, 0.2, 1.0).f
    assert np.linalg.norm(a - b) < 1e-5


def test_transmit_response():
    arr = ArrayModel.nominal(8, LAM)
    th0 = 0.4
    P = 3.0
    f = np.conj(steering_vector(arr, th0)) * np.sqrt(P / 8)
    assert np.isclose(transmit_response(arr, f, [th0])[0], P * 8)
    assert np.allclose(transmit_response(arr, f, GRID),
                       transmit_response(arr, f * np.exp(1.3j), GRID))


def test_impaired_array_spreads_power_out_of_sector():
    # LS beam designed on the nominal array, radiated by impaired ones
    nominal = ArrayModel.nominal(16, LAM)
    sector = (np.deg2rad(-40), np.deg2rad(-20))
    f = synthesize(steering_matrix(nominal, GRID), sector).f
    f = f / np.linalg.norm(f)
    outside = (GRID < sector[0]) | (GRID > sector[1])
    clean = transmit_response(nominal, f, GRID)[outside].mean()
    for seed in range(8):
        impaired = ArrayModel(16, LAM, sample_impairment(16, LAM / 15, LAM,
                                                         np.random.default_rng(seed)))
        assert transmit_response(impaired, f, GRID)[outside].mean() > clean
