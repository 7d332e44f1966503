import numpy as np
import pytest

from scenehgn import autodiff as ad


def numeric_grad(fn, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


@pytest.mark.parametrize(
    "name,fn,vfn",
    [
        ("sin", lambda x: ad.vsum(ad.sin(x)), lambda x: np.sum(np.sin(x))),
        ("cos", lambda x: ad.vsum(ad.cos(x)), lambda x: np.sum(np.cos(x))),
        ("exp", lambda x: ad.vsum(ad.exp(x)), lambda x: np.sum(np.exp(x))),
        ("tanh", lambda x: ad.vsum(ad.tanh(x)), lambda x: np.sum(np.tanh(x))),
        ("sigmoid", lambda x: ad.vsum(ad.sigmoid(x)), lambda x: np.sum(1 / (1 + np.exp(-x)))),
        ("softplus", lambda x: ad.vsum(ad.softplus(x)), lambda x: np.sum(np.logaddexp(0.0, x))),
        ("sqrt", lambda x: ad.vsum(ad.sqrt(ad.exp(x))), lambda x: np.sum(np.sqrt(np.exp(x)))),
        ("power", lambda x: ad.vsum(ad.power(ad.exp(x), 3)), lambda x: np.sum(np.exp(x) ** 3)),
        ("abs", lambda x: ad.vsum(ad.absolute(x)), lambda x: np.sum(np.abs(x))),
        ("leaky", lambda x: ad.vsum(ad.leaky_relu(x)), lambda x: np.sum(np.where(x > 0, x, 0.01 * x))),
    ],
)
def test_unary_gradients(rng, name, fn, vfn):
    x = rng.standard_normal(7) + 0.1
    var = ad.Var(x.copy())
    out = fn(var)
    assert np.isclose(out.value, vfn(x))
    ad.backward(out)
    fd = numeric_grad(lambda v: vfn(v), x.copy())
    assert np.allclose(var.grad, fd, atol=1e-6)


def test_binary_ops_and_broadcasting(rng):
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal(3) + 2.0

    def build(av, bv):
        return ad.vsum(ad.Var(av) * ad.Var(bv) + ad.Var(av) / ad.Var(bv) - 2.0)

    va, vb = ad.Var(a.copy()), ad.Var(b.copy())
    out = ad.vsum(va * vb + va / vb - 2.0)
    ad.backward(out)
    fa = numeric_grad(lambda v: np.sum(v * b + v / b - 2.0), a.copy())
    fb = numeric_grad(lambda v: np.sum(a * v + a / v - 2.0), b.copy())
    assert np.allclose(va.grad, fa, atol=1e-5)
    assert np.allclose(vb.grad, fb, atol=1e-5)


def test_matmul_gradients(rng):
    w = rng.standard_normal((4, 6))
    x = rng.standard_normal(6)
    vw, vx = ad.Var(w.copy()), ad.Var(x.copy())
    out = ad.vsum(ad.power(ad.matmul(vw, vx), 2))
    ad.backward(out)
    fw = numeric_grad(lambda v: np.sum((v @ x) ** 2), w.copy())
    fx = numeric_grad(lambda v: np.sum((w @ v) ** 2), x.copy())
    assert np.allclose(vw.grad, fw, atol=1e-5)
    assert np.allclose(vx.grad, fx, atol=1e-5)

    a = rng.standard_normal((3, 5))
    bmat = rng.standard_normal((5, 2))
    va, vbm = ad.Var(a.copy()), ad.Var(bmat.copy())
    out = ad.vsum(ad.matmul(va, vbm) * 1.5)
    ad.backward(out)
    assert np.allclose(va.grad, 1.5 * np.ones((3, 2)) @ bmat.T)
    assert np.allclose(vbm.grad, 1.5 * a.T @ np.ones((3, 2)))


def test_atan2_gradient(rng):
    y = rng.standard_normal(5)
    x = rng.standard_normal(5) + 2.0
    vy, vx = ad.Var(y.copy()), ad.Var(x.copy())
    out = ad.vsum(ad.atan2(vy, vx))
    ad.backward(out)
    fy = numeric_grad(lambda v: np.sum(np.arctan2(v, x)), y.copy())
    fx = numeric_grad(lambda v: np.sum(np.arctan2(y, v)), x.copy())
    assert np.allclose(vy.grad, fy, atol=1e-6)
    assert np.allclose(vx.grad, fx, atol=1e-6)


def test_take_rows_and_concat(rng):
    x = rng.standard_normal((5, 3))
    idx = np.array([0, 2, 2, 4])
    vx = ad.Var(x.copy())
    gathered = ad.take_rows(vx, idx)
    out = ad.vsum(gathered * gathered)
    ad.backward(out)
    expected = np.zeros_like(x)
    for i in idx:
        expected[i] += 2.0 * x[i]
    assert np.allclose(vx.grad, expected)

    a, b = ad.Var(rng.standard_normal((2, 3))), ad.Var(rng.standard_normal((4, 3)))
    out = ad.vsum(ad.concat([a, b], axis=0)[1:4])
    ad.backward(out)
    assert np.allclose(a.grad, [[0, 0, 0], [1, 1, 1]])
    assert np.allclose(b.grad, [[1, 1, 1], [1, 1, 1], [0, 0, 0], [0, 0, 0]])


def test_stack_mean_reshape(rng):
    parts = [ad.Var(rng.standard_normal(3)) for _ in range(4)]
    out = ad.vmean(ad.reshape(ad.stack(parts, axis=0), (12,)))
    ad.backward(out)
    for p in parts:
        assert np.allclose(p.grad, np.full(3, 1.0 / 12.0))


def test_diamond_graph_accumulates():
    x = ad.Var(2.0)
    y = x * x
    z = y + y * 3.0
    ad.backward(z)
    assert np.isclose(x.grad, 4.0 * 2.0 * 2.0)  # d/dx 4x^2


def test_shared_subgraph_reused_many_times():
    x = ad.Var(np.ones(3))
    s = ad.vsum(x)
    total = s
    for _ in range(50):
        total = total + s
    ad.backward(total)
    assert np.allclose(x.grad, np.full(3, 51.0))
