import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfpi import autodiff as ad
from cfpi.checks import gradient_errors
from cfpi.errors import DataError, DimensionError
from cfpi.nn import Adam, AdamState, Mlp, adam_step, forward, input_gradient, load_checkpoint, polyak_update, save_checkpoint

from _helpers import seeds


def test_zero_net_outputs_zero():
    net = Mlp([3, 8, 2])
    assert np.all(forward(net, np.ones((5, 3))).data == 0.0)


def test_identity_layer():
    net = Mlp([3, 3])
    net.weights[0].data = np.eye(3)
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(forward(net, x).data, x)


@given(seeds)
def test_forward_matches_matmul_oracle(seed):
    rng = np.random.default_rng(seed)
    net = Mlp([4, 16, 16, 2], rng)
    x = rng.normal(size=(7, 4))
    h = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.data + b.data
        if i < 2:
            h = np.where(h > 0, h, 0.0)
    np.testing.assert_allclose(forward(net, x).data, h, atol=1e-12)
    np.testing.assert_array_equal(net.numpy_forward(x), forward(net, x).data)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        forward(Mlp([3, 2]), np.ones((1, 4)))


def test_sum_of_params_gives_unit_grads():
    a = ad.Tensor(np.ones((2, 3)), requires_grad=True)
    b = ad.Tensor(np.ones(4), requires_grad=True)
    ad.backward(a.sum() + b.sum())
    assert np.all(a.grad == 1.0) and np.all(b.grad == 1.0)


def test_backward_accumulates():
    a = ad.Tensor([2.0], requires_grad=True)
    ad.backward((a * a).sum())
    ad.backward((a * a).sum())
    assert a.grad[0] == 8.0


def test_disconnected_parameter():
    net = Mlp([2, 3, 1], np.random.default_rng(0))
    other = ad.Tensor(np.ones(3), requires_grad=True)
    ad.backward(forward(net, np.ones((1, 2))).sum())
    assert other.grad is None
    (g,) = ad.grad(forward(net, np.ones((1, 2))).sum(), [other])
    assert np.all(g == 0.0)


def test_non_scalar_loss():
    with pytest.raises(ValueError):
        ad.backward(ad.Tensor(np.ones(3), requires_grad=True) * 2.0)


@given(seeds)
def test_finite_difference_agreement(seed):
    p_err, x_err = gradient_errors(np.random.default_rng(seed))
    assert p_err <= 1e-4 and x_err <= 1e-4


@given(seeds)
def test_elementwise_ops_against_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(0.5, 2.0, (3, 4))

    def f(t):
        y = ad.exp(t) * ad.log(t) - ad.sqrt(t) / (t + 1.0) + ad.power(t, 3)
        return ad.tsum(ad.logsumexp(y, axis=1)) + ad.tmean(ad.huber(t - 1.2, 0.5)) + ad.tsum(ad.clip(t, 0.7, 1.8))

    t = ad.Tensor(x0, requires_grad=True)
    (g,) = ad.grad(f(t), [t])
    fd = np.empty_like(x0)
    h = 1e-6
    for idx in np.ndindex(*x0.shape):
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += h
        xm[idx] -= h
        fd[idx] = (f(ad.Tensor(xp)).data - f(ad.Tensor(xm)).data) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_matmul_vector_operand():
    rng = np.random.default_rng(1)
    a = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=3), requires_grad=True)
    ad.backward((a @ w).sum())
    np.testing.assert_allclose(w.grad, a.data.sum(0))
    np.testing.assert_allclose(a.grad, np.tile(w.data, (5, 1)))


def test_input_gradient_linear():
    net = Mlp([3, 1])
    net.weights[0].data = np.array([[1.0], [-2.0], [0.5]])
    _, g = input_gradient(net, np.ones((2, 3)), slice(1, None))
    np.testing.assert_allclose(g, [[-2.0, 0.5], [-2.0, 0.5]])


def test_input_gradient_quadratic_head():
    # q(x) = -sum (x - c)^2 built from autodiff ops around a linear layer
    c = np.array([0.3, -0.7])
    net = Mlp([2, 2])
    net.weights[0].data = np.eye(2)
    net.biases[0].data = -c

    def head(x):
        z = forward(net, x)
        return -(z * z).sum(axis=1)

    x = np.random.default_rng(2).normal(size=(6, 2))
    _, g = input_gradient(head, x)
    np.testing.assert_allclose(g, -2.0 * (x - c), atol=1e-6)


def test_adam_zero_grads():
    p = ad.Tensor([1.5], requires_grad=True)
    state = adam_step([p], [np.zeros(1)], AdamState(lr=0.1))
    assert p.data[0] == 1.5 and state.step == 1


def test_adam_first_step():
    p = ad.Tensor([0.0], requires_grad=True)
    state = AdamState(lr=0.1)
    adam_step([p], [np.ones(1)], state)
    assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)


@given(st.floats(-5, 5).filter(lambda g: abs(g) > 1e-3))
def test_adam_descends(g):
    p = ad.Tensor([0.0], requires_grad=True)
    opt = Adam([p], lr=0.01)
    for _ in range(20):
        p.grad = np.array([g])
        opt.step()
    assert np.sign(p.data[0]) == -np.sign(g)


def test_polyak():
    a, b = Mlp([2, 2], np.random.default_rng(0)), Mlp([2, 2], np.random.default_rng(1))
    polyak_update(a, b, 1.0)
    np.testing.assert_array_equal(a.flat(), b.flat())


def test_deterministic_init():
    a, b = Mlp([3, 5, 1], np.random.default_rng(9)), Mlp([3, 5, 1], np.random.default_rng(9))
    x = np.ones((2, 3))
    assert np.array_equal(a.numpy_forward(x), b.numpy_forward(x))


def test_checkpoint_round_trip(tmp_path):
    net = Mlp([3, 7, 2], np.random.default_rng(4))
    save_checkpoint(net, tmp_path / "n.mlp", seed=4, steps=10)
    back, meta = load_checkpoint(tmp_path / "n.mlp")
    assert back.widths == net.widths and meta["seed"] == 4
    np.testing.assert_array_equal(back.flat(), net.flat())
    raw = (tmp_path / "n.mlp").read_bytes()
    (tmp_path / "bad.mlp").write_bytes(raw[:-8])
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "bad.mlp")
