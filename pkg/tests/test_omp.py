import numpy as np
import pytest

from mbisac.array import ArrayModel, steering_matrix, steering_vector, uniform_angle_grid
from mbisac.channel import OfdmConfig, delay_response
from mbisac.omp import DetectionResult, angle_delay_map, angle_delay_map_fast, \
    build_delay_dictionary, discrete_resolutions, omp_baseline, omp_batch, \
    omp_differentiable, sector_columns, to_positions

CFG = OfdmConfig(num_subcarriers=32)
LAM = CFG.wavelength
K = 8
GRID = uniform_angle_grid(90)
DELAYS = build_delay_dictionary(CFG, 10, 43.75, 25)
SD = steering_matrix(ArrayModel.nominal(K, LAM), GRID)


def observation(targets, noise=0.0, rng=None):
    """Noiseless matched-filtered Y for (grid row, delay col, gain) triples."""
    Y = np.zeros((K, CFG.num_subcarriers), dtype=complex)
    for i, j, g in targets:
        Y += g * np.outer(SD.matrix[:, i], DELAYS.matrix[:, j])
    if noise:
        Y += noise * (rng.standard_normal(Y.shape) + 1j * rng.standard_normal(Y.shape))
    return Y


def test_delay_dictionary():
    d = build_delay_dictionary(CFG, 0.0, 30.0, 11)
    assert np.allclose(d.matrix[:, 0], 1)
    assert np.all(np.diff(d.delay_grid) > 0)
    assert np.allclose(np.abs(d.matrix), 1)
    assert np.allclose(np.linalg.norm(d.matrix, axis=0), np.sqrt(CFG.num_subcarriers))
    rho = delay_response(np.array([1 / (4 * 240e3)]), 4, 240e3)[0]
    assert np.isclose(rho[1], -1j)
    with pytest.raises(ValueError):
        build_delay_dictionary(CFG, 30, 10, 5)
    with pytest.raises(ValueError):
        build_delay_dictionary(CFG, 10, 30, 1)


def test_discrete_resolutions():
    assert discrete_resolutions(64, 256, 240e3, 720, 200, -np.pi / 2, np.pi / 2, 10, 43.75) \
        == (7, 14)
    assert np.isclose(2 / 64, 0.03125)
    assert np.isclose(3e8 / (2 * 256 * 240e3), 2.44140625)
    with pytest.raises(ValueError):
        discrete_resolutions(8, 32, 240e3, 90, 25, 0.1, 0.1, 10, 40)


def test_map_basics():
    assert np.array_equal(angle_delay_map(np.zeros((K, CFG.num_subcarriers)), SD, DELAYS),
                          np.zeros((90, 25)))
    Y = observation([(30, 7, 1.0 - 0.5j)])
    L = angle_delay_map(Y, SD, DELAYS)
    assert np.unravel_index(L.argmax(), L.shape) == (30, 7)
    assert np.allclose(L, angle_delay_map(Y * np.exp(0.7j), SD, DELAYS))
    assert np.all(L >= 0)


def test_fast_map_matches_direct():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((K, 32)) + 1j * rng.standard_normal((K, 32))
    direct = angle_delay_map(Y, SD, DELAYS)
    fast = angle_delay_map_fast(Y, SD, DELAYS, CFG)
    assert np.allclose(fast, direct, rtol=1e-9, atol=1e-9 * direct.max())


def test_baseline_pure_noise_threshold():
    rng = np.random.default_rng(1)
    Y = observation([], noise=1.0, rng=rng)
    L = angle_delay_map(Y, SD, DELAYS)
    res = omp_baseline(Y, SD, DELAYS, threshold=2 * L.max())
    assert res.iterations == 0


def test_baseline_single_target_exact():
    Y = observation([(20, 11, 0.3 + 0.8j)])
    res = omp_baseline(Y, SD, DELAYS, threshold=1e-6, max_iter=1)
    assert res.atoms == [(20, 11)]
    assert res.angles[0] == GRID[20] and res.delays[0] == DELAYS.delay_grid[11]
    assert abs(res.gains[0] - (0.3 + 0.8j)) < 1e-6 * abs(0.3 + 0.8j)


def test_baseline_two_targets_and_invariants():
    it, ir = discrete_resolutions(K, 32, 240e3, 90, 25, GRID[0], GRID[-1], 10, 43.75)
    # angular separation three times the resolution, same delay bin
    Y = observation([(20, 5, 1.0), (20 + 3 * it, 5, 0.7j)])
    res = omp_baseline(Y, SD, DELAYS, threshold=1e-3, max_iter=6)
    assert set(res.atoms[:2]) == {(20, 5), (20 + 3 * it, 5)}
    assert np.allclose(res.gains[:2][np.argsort([a[0] for a in res.atoms[:2]])], [1.0, 0.7j])
    assert len(set(res.atoms)) == len(res.atoms)
    # residual energy is non-increasing
    energies = [np.linalg.norm(Y)]
    for n in range(1, res.iterations + 1):
        sub = omp_baseline(Y, SD, DELAYS, 1e-3, max_iter=n)
        A = np.stack([np.outer(SD.matrix[:, i], DELAYS.matrix[:, j]).ravel()
                      for i, j in sub.atoms], axis=1)
        energies.append(np.linalg.norm(Y.ravel() - A @ sub.gains))
    assert np.all(np.diff(energies) <= 1e-9)


def test_baseline_argument_checks():
    Y = observation([(1, 1, 1.0)])
    with pytest.raises(ValueError):
        omp_baseline(Y, SD, DELAYS, threshold=0.0)
    with pytest.raises(ValueError):
        omp_baseline(Y, SD, DELAYS, threshold=1.0, max_iter=0)


def test_batch_engine_matches_baseline():
    rng = np.random.default_rng(2)
    obs = [observation([(rng.integers(90), rng.integers(25), 1.0),
                        (rng.integers(90), rng.integers(25), 0.5j)], 0.05, rng)
           for _ in range(6)]
    Z = np.stack([Y @ np.conj(DELAYS.matrix) for Y in obs])
    trace = omp_batch(Z, SD.matrix, DELAYS.gram(), 3)
    for b, Y in enumerate(obs):
        res = omp_baseline(Y, SD, DELAYS, threshold=1e-12, max_iter=3)
        assert res.atoms == list(zip(trace.rows[b], trace.cols[b]))
        assert np.allclose(res.gains, trace.gains[b])
        assert np.allclose(res.peaks, trace.peaks[b])


def test_sector_restriction():
    Y = observation([(10, 5, 2.0), (60, 20, 1.0)])
    Z = (Y @ np.conj(DELAYS.matrix))[None]
    assert omp_batch(Z, SD.matrix, DELAYS.gram(), 1).rows[0, 0] == 10
    lo, hi = sector_columns(GRID, [(GRID[55], GRID[65])])
    trace = omp_batch(Z, SD.matrix, DELAYS.gram(), 1, lo, hi)
    assert trace.rows[0, 0] == 60
    lo, hi = sector_columns(GRID, [(GRID[10] + 1e-4, GRID[10] + 2e-4)])
    assert lo[0] == hi[0] == 10


def test_differentiable_on_grid_target():
    it, ir = discrete_resolutions(K, 32, 240e3, 90, 25, GRID[0], GRID[-1], 10, 43.75)
    ir = min(ir, 5)      # keep the delay window inside the grid
    # peak map value of order one, so the softmax is not one-hot
    Y = observation([(45, 12, 2.0 / (K * CFG.num_subcarriers))])
    res = omp_differentiable(Y, SD, DELAYS, 1, it, ir)
    step = GRID[1] - GRID[0]
    assert abs(res.angles[0] - GRID[45]) <= step
    assert GRID[45 - it] <= res.angles[0] <= GRID[45 + it]
    assert DELAYS.delay_grid[12 - ir] <= res.delays[0] <= DELAYS.delay_grid[12 + ir]
    zero = omp_differentiable(Y, SD, DELAYS, 1, 0, 0)
    assert zero.angles[0] == GRID[45] and zero.delays[0] == DELAYS.delay_grid[12]


def test_differentiable_off_grid_lies_between_neighbours():
    mid = 0.5 * (GRID[40] + GRID[41])
    a = steering_vector(ArrayModel.nominal(K, LAM), mid)
    Y = 2.0 / (K * CFG.num_subcarriers) * np.outer(a, DELAYS.matrix[:, 10])
    res = omp_differentiable(Y, SD, DELAYS, 1, 1, 0)
    assert GRID[40] < res.angles[0] < GRID[41]


def test_differentiable_checks():
    Y = observation([(5, 5, 1.0)])
    with pytest.raises(ValueError):
        omp_differentiable(Y, SD, DELAYS, 0, 1, 1)
    with pytest.raises(ValueError):
        omp_differentiable(Y, SD, DELAYS, 90 * 25 + 1, 1, 1)


def test_to_positions():
    pos, flag = to_positions(DetectionResult(np.array([0.0, np.pi / 2]),
                                             np.array([2 * 10 / 3e8, 2 * 5 / 3e8])))
    assert np.allclose(pos, [[10, 0], [0, 5]], atol=1e-12) and not flag
    rng = np.random.default_rng(3)
    th, r = rng.uniform(-1.5, 1.5, 20), rng.uniform(1, 50, 20)
    pos, _ = to_positions(DetectionResult(th, 2 * r / 3e8))
    assert np.allclose(np.hypot(pos[:, 0], pos[:, 1]), r, atol=1e-12)
    assert np.allclose(np.arctan2(pos[:, 1], pos[:, 0]), th, atol=1e-12)
    pos, flag = to_positions(DetectionResult(np.array([0.3]), np.array([-1e-9])))
    assert flag and np.allclose(pos, 0)
