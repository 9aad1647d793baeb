import numpy as np
import pytest

from mbisac import autodiff as ad


def numeric_grad(fn, x, h=1e-6):
    """Central differences in the dL/dRe + j dL/dIm convention."""
    x = np.array(x)
    g = np.zeros(x.shape, dtype=x.dtype)
    dirs = [1.0, 1j] if np.iscomplexobj(x) else [1.0]
    for idx in np.ndindex(x.shape):
        for d in dirs:
            xp, xm = x.copy(), x.copy()
            xp[idx] += h * d
            xm[idx] -= h * d
            g[idx] += d * (fn(xp) - fn(xm)) / (2 * h)
    return g


def check(build, x, tol=1e-6):
    node = ad.param(x)
    out = build(node)
    out.backward()
    num = numeric_grad(lambda v: float(build(ad.const(v)).value), x)
    assert np.allclose(node.grad, num, atol=tol, rtol=tol)


rng = np.random.default_rng(3)
Z = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
R = rng.standard_normal((3, 4))


def test_elementwise_ops():
    check(lambda z: ad.abs2(ad.exp(z * 0.3) * ad.conj(z) + 1.0 / (z + 3)).sum(), Z)
    check(lambda z: ad.real(ad.log(z + 4) * ad.sqrt(z + 5)).sum(), Z)
    check(lambda x: (ad.sin(x) * ad.cos(x * 2) - x).sum(), R)
    check(lambda z: ad.imag(z * z).sum(), Z)


def test_matmul_and_solve():
    A = Z + 3 * np.eye(3)
    B = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    check(lambda a: ad.abs2(ad.solve(a, ad.const(B))).sum(), A)
    check(lambda b: ad.abs2(ad.solve(ad.const(A), b)).sum(), B)
    check(lambda a: ad.abs2(a @ ad.swapaxes(ad.conj(a), 0, 1) @ B).sum(), Z)


def test_indexing_reductions_and_stack():
    idx = (np.array([0, 2, 2]), np.array([1, 0, 0]))
    check(lambda z: ad.abs2(z[idx]).sum(), Z)
    check(lambda x: ad.stack([x[0], x[1] * 2], axis=1).sum() + ad.mean(x * x), R)
    check(lambda x: ad.transpose(ad.reshape(x, 2, 2, 3), (2, 0, 1))[1].sum(), R)


def test_softmax_and_logsumexp():
    w = np.arange(12.0).reshape(3, 4)
    mask = np.ones((3, 4), dtype=bool)
    mask[0, 3] = False
    check(lambda x: (ad.softmax(x, axis=-1, mask=mask) * w).sum(), R)
    check(lambda x: ad.logsumexp(x * 3, axis=0).sum(), R)
    s = ad.softmax(ad.const(R), axis=-1, mask=mask).value
    assert s[0, 3] == 0
    assert np.allclose(s.sum(-1), 1)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        ad.param(R).backward()


def test_real_parameter_gets_real_gradient():
    x = ad.param(np.array([0.3, -0.2]))
    ad.abs2(ad.exp(ad.mul(x, 1j)) + 1).sum().backward()
    assert not np.iscomplexobj(x.grad)
    assert np.allclose(x.grad, -2 * np.sin([0.3, -0.2]))


def test_numpy_left_operand_defers_to_tape():
    x = ad.param(np.ones(3))
    y = np.arange(3.0) * x
    assert isinstance(y, ad.Var)
    y.sum().backward()
    assert np.allclose(x.grad, np.arange(3.0))
