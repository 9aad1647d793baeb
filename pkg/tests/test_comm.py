import numpy as np

from mbisac.comm import ml_detect, qpsk, qpsk_ser, soft_posterior


def test_constellation():
    pts = qpsk().points
    assert np.isclose(np.mean(np.abs(pts) ** 2), 1)
    assert set(np.round(pts * np.sqrt(2), 12)) == {1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j}
    # Gray: neighbours at distance sqrt(2) differ in one index bit
    for a in range(4):
        for b in range(4):
            if np.isclose(abs(pts[a] - pts[b]), np.sqrt(2)):
                assert bin(a ^ b).count("1") == 1


def test_ml_noiseless_and_ties():
    rng = np.random.default_rng(0)
    m = rng.integers(0, 4, 64)
    kappa = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    assert np.array_equal(ml_detect(kappa * qpsk().modulate(m), kappa), m)
    assert np.array_equal(ml_detect(rng.standard_normal(8), np.zeros(8)), np.zeros(8))


def test_soft_posterior():
    rng = np.random.default_rng(1)
    assert np.allclose(soft_posterior(np.ones(3), np.zeros(3)), 0.25)
    y = rng.standard_normal(10000) + 1j * rng.standard_normal(10000)
    k = rng.standard_normal(10000) + 1j * rng.standard_normal(10000)
    p = soft_posterior(y, k)
    assert np.all(p > 0) and np.allclose(p.sum(axis=-1), 1, atol=1e-12)
    assert np.array_equal(p.argmax(axis=-1), ml_detect(y, k))
    m = rng.integers(0, 4, 50)
    p0 = soft_posterior(k[:50] * qpsk().modulate(m), k[:50])
    assert np.array_equal(p0.argmax(axis=-1), m)
    assert np.allclose(p0.max(axis=-1), 1)


def test_analytic_ser_limits():
    assert np.isclose(qpsk_ser(0.0), 0.75)
    assert qpsk_ser(1e4) < 1e-12
    assert np.all(np.diff(qpsk_ser(np.linspace(0, 20, 30))) < 0)
