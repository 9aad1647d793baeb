import numpy as np
import pytest

from mbisac import autodiff as ad
from mbisac.array import steering_matrix
from mbisac.config import load_config
from mbisac.omp import soft_estimates
from mbisac.scenario import build_scenario
from mbisac.training import AdamState, LearnableParams, TrainConfig, adam_init, adam_step, \
    evaluate_loss_and_gradient, load_checkpoint, sample_training_batch, save_checkpoint, \
    train, write_loss_trace

SMALL = {"array": {"num_antennas": 8}, "ofdm": {"num_subcarriers": 32},
         "grid": {"n_theta": 90, "n_tau": 25}}


@pytest.fixture(scope="module")
def scn():
    return build_scenario(load_config(preset="desk").replace(**SMALL))


def test_parameter_counts_and_init(scn):
    imp = LearnableParams.initial("impairment", 8, scn.wavelength, scn.angle_grid)
    dic = LearnableParams.initial("dictionary", 8, scn.wavelength, scn.angle_grid)
    assert imp.num_real_parameters == 7 and np.allclose(imp.values, scn.wavelength / 2)
    assert dic.num_real_parameters == 2 * 8 * 90
    assert np.allclose(dic.values, steering_matrix(scn.nominal_array, scn.angle_grid).matrix)
    assert np.allclose(imp.steering(), dic.steering())
    assert np.allclose(imp.tape_steering(ad.param(imp.values)).value, imp.steering())
    with pytest.raises(ValueError):
        LearnableParams("impairment", np.ones(3), 8, scn.wavelength, scn.angle_grid)
    with pytest.raises(ValueError):
        LearnableParams("other", np.ones(7), 8, scn.wavelength, scn.angle_grid)


def test_adam_zero_gradient():
    x = np.array([1.0, -2.0])
    new, st = adam_step(x, np.zeros(2), adam_init(x), 0.1)
    assert np.array_equal(new, x) and st.step == 1


def test_adam_constant_gradient_limit():
    x = np.zeros(3)
    st = adam_init(x)
    g = np.array([2.0, -0.5, 1e-3])
    for _ in range(200):
        prev = x
        x, st = adam_step(x, g, st, 0.01)
    assert np.allclose(x - prev, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_complex_parameters():
    x = np.array([1 + 1j])
    new, _ = adam_step(x, np.array([1 - 2j]), adam_init(x), 0.1)
    assert np.allclose(new, [0.9 + 1.1j])


def test_batch_has_targets_and_is_reproducible(scn):
    a = sample_training_batch(scn, 16, np.random.default_rng(3))
    b = sample_training_batch(scn, 16, np.random.default_rng(3))
    assert a.sensing.batch.counts.min() >= 1
    assert np.array_equal(a.sensing.noise, b.sensing.noise)
    assert np.array_equal(a.comm.noise, b.comm.noise)


def test_comm_only_gradient_ignores_sensing_noise(scn):
    p = LearnableParams.initial("impairment", 8, scn.wavelength, scn.angle_grid)
    batch = sample_training_batch(scn, 8, np.random.default_rng(4))
    r1 = evaluate_loss_and_gradient(p, batch, scn, omega_r=0.0, eta=0.0)
    batch.sensing.noise_z[:] = 0
    r2 = evaluate_loss_and_gradient(p, batch, scn, omega_r=0.0, eta=0.0)
    assert np.array_equal(r1.grad, r2.grad) and np.isfinite(r1.cce)
    assert np.any(r1.grad != 0)


@pytest.mark.parametrize("beta", [None, 10.0])
def test_gradient_matches_finite_differences(scn, beta):
    power = 1.0 if beta else 1e5        # raw logits need map values of order one
    s = build_scenario(load_config(preset="desk").replace(**SMALL).replace(
        ofdm={"power": power}, channel={"t_max": 1}))
    rng = np.random.default_rng(5)
    batch = sample_training_batch(s, 16, rng, need_comm=False)
    p = LearnableParams.initial("impairment", 8, s.wavelength, s.angle_grid)
    p.values = s.true_array.spacing + 0.01 * s.wavelength * rng.standard_normal(7)
    rep = evaluate_loss_and_gradient(p, batch, s, beta=beta)
    h = 1e-6 * s.wavelength
    fd = np.zeros(7)
    for i in range(7):
        for sign in (1, -1):
            q = p.copy()
            q.values[i] += sign * h
            fd[i] += sign * evaluate_loss_and_gradient(q, batch, s, beta=beta).loss / (2 * h)
    assert np.abs(rep.grad - fd).max() / np.abs(fd).max() < 1e-4


def test_dictionary_gradient_matches_finite_differences(scn):
    s = build_scenario(load_config(preset="desk").replace(**SMALL, channel={"t_max": 1}))
    batch = sample_training_batch(s, 8, np.random.default_rng(6), need_comm=False)
    p = LearnableParams.initial("dictionary", 8, s.wavelength, s.angle_grid)
    rep = evaluate_loss_and_gradient(p, batch, s, beta=10.0)
    rng = np.random.default_rng(7)
    d = rng.standard_normal(p.values.shape) + 1j * rng.standard_normal(p.values.shape)
    h = 1e-7
    q1, q2 = p.copy(), p.copy()
    q1.values = p.values + h * d
    q2.values = p.values - h * d
    fd = (evaluate_loss_and_gradient(q1, batch, s, beta=10.0).loss
          - evaluate_loss_and_gradient(q2, batch, s, beta=10.0).loss) / (2 * h)
    # directional derivative: Re(conj(G) . d) in the complex convention
    an = np.real(np.vdot(rep.grad, d))
    assert abs(an - fd) < 1e-4 * max(abs(fd), 1e-12)


def test_soft_estimates_identical_with_and_without_tape(scn):
    rng = np.random.default_rng(8)
    B, K = 4, 8
    res = rng.standard_normal((B, K, 3)) + 1j * rng.standard_normal((B, K, 3))
    rows = np.tile(np.arange(10, 15), (B, 1))
    cols = np.tile(np.arange(4, 7), (B, 1))
    valid_r, valid_c = np.ones_like(rows, bool), np.ones_like(cols, bool)
    phi = steering_matrix(scn.nominal_array, scn.angle_grid).matrix
    args = (rows, valid_r, cols, valid_c, scn.angle_grid, scn.delays.delay_grid)
    a = soft_estimates(ad.const(phi), ad.const(res), *args)
    b = soft_estimates(ad.param(phi), ad.param(res), *args)
    assert np.array_equal(a[0].value, b[0].value) and np.array_equal(a[1].value, b[1].value)


def test_non_finite_loss_reports_seed(scn):
    p = LearnableParams.initial("impairment", 8, scn.wavelength, scn.angle_grid)
    batch = sample_training_batch(scn, 4, np.random.default_rng(9), seed=1234, need_comm=False)
    batch.sensing.noise_z[:] = np.nan
    with pytest.raises(FloatingPointError, match="1234"):
        evaluate_loss_and_gradient(p, batch, scn)


def test_training_is_deterministic_and_checkpoints(scn, tmp_path):
    tc = TrainConfig(batch_size=4, iterations=3, lr=1e-5, seed=11, softmax_beta=10.0)
    p = LearnableParams.initial("impairment", 8, scn.wavelength, scn.angle_grid)
    r1, r2 = train(p, scn, tc), train(p, scn, tc)
    assert np.array_equal(r1.params.values, r2.params.values) and r1.trace == r2.trace
    assert np.array_equal(p.values, np.full(7, scn.wavelength / 2))     # input untouched
    path = tmp_path / "ck.npz"
    save_checkpoint(path, r1.params, r1.state, 3)
    params, state, it = load_checkpoint(path)
    assert it == 3 and state.step == 3
    assert np.array_equal(params.values, r1.params.values)
    assert np.array_equal(state.m, r1.state.m)
    write_loss_trace(tmp_path / "trace.csv", r1.trace)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,gospa,cce,isac" and len(lines) == 4


def test_resume_continues_optimizer_state(scn):
    p = LearnableParams.initial("impairment", 8, scn.wavelength, scn.angle_grid)
    tc = TrainConfig(batch_size=4, iterations=2, lr=1e-5, seed=12, softmax_beta=10.0)
    half = train(p, scn, tc)
    again = train(half.params, scn, tc, state=half.state)
    assert again.state.step == 4 and isinstance(again.state, AdamState)


def test_spacings_stay_positive(scn):
    tc = TrainConfig(batch_size=4, iterations=3, lr=1.0, seed=13, softmax_beta=10.0)
    p = LearnableParams.initial("impairment", 8, scn.wavelength, scn.angle_grid)
    out = train(p, scn, tc).params.values
    assert np.all(out >= 0.05 * scn.wavelength)
