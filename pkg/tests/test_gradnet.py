import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densereward import gradnet as gn
from densereward.errors import ContractError, DegenerateNormError, NumericError
from oracles import central_difference, max_rel_error, naive_causal_conv1d, naive_conv2d


def _grad_of(build, *arrays):
    params = [gn.parameter(a) for a in arrays]
    loss = build(*params)
    gn.backward(loss)
    return [p.grad for p in params]


def _fd_check(build, arrays, tol=1e-3):
    analytic = _grad_of(build, *arrays)
    for idx, arr in enumerate(arrays):

        def f(x, idx=idx):
            args = [gn.Tensor(a) for a in arrays]
            args[idx] = gn.Tensor(x)
            return build(*args).item()

        numeric = central_difference(f, arr)
        assert max_rel_error(analytic[idx], numeric) < tol


def test_square_gradient():
    x = gn.parameter(3.0)
    gn.backward(gn.square(x))
    assert x.grad == pytest.approx(6.0)


def test_mse_gradient_analytic():
    w = gn.parameter(np.array([[1.0]]))
    x = gn.Tensor(np.array([[2.0]]))
    loss = gn.mse(x @ w, gn.Tensor(np.array([[4.0]])))
    gn.backward(loss)
    assert w.grad[0, 0] == pytest.approx(-8.0)


def test_non_scalar_loss_rejected():
    x = gn.parameter(np.ones(3))
    with pytest.raises(ContractError):
        gn.backward(x * 2.0)


def test_nan_names_the_op():
    x = gn.parameter(np.array([-1.0]))
    with pytest.raises(NumericError, match="log"):
        gn.log(x)


def test_gradients_accumulate_additively():
    x = gn.parameter(np.array([2.0]))
    loss = gn.sum(x * x + x * 3.0)
    gn.backward(loss)
    assert x.grad[0] == pytest.approx(7.0)


def test_backward_is_linear_in_loss_scale():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 3))
    x = gn.Tensor(rng.normal(size=(5, 4)))

    def loss(p, scale):
        return gn.mul(gn.sum(gn.tanh(x @ p)), scale)

    g1 = _grad_of(lambda p: loss(p, 1.0), w)[0]
    g3 = _grad_of(lambda p: loss(p, 3.5), w)[0]
    np.testing.assert_allclose(g3, 3.5 * g1, rtol=1e-12)


ELEMENTWISE = [gn.relu, gn.sigmoid, gn.tanh, gn.exp, gn.softplus, gn.square]


@pytest.mark.parametrize("op", ELEMENTWISE, ids=lambda f: f.__name__)
def test_elementwise_finite_differences(op):
    rng = np.random.default_rng(1)
    # keep relu inputs away from the kink
    x = rng.uniform(0.2, 1.5, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
    wts = gn.Tensor(rng.normal(size=(3, 4)))
    _fd_check(lambda a: gn.sum(op(a) * wts), [x])


def test_log_clip_minimum_finite_differences():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.5, 2.0, size=6)
    b = a + rng.choice([-0.3, 0.3], size=6)
    _fd_check(lambda p, q: gn.sum(gn.log(p) * gn.minimum(p, q)), [a, b])
    _fd_check(lambda p: gn.sum(gn.square(gn.clip(p, 0.8, 1.6))), [a])


def test_linear_concat_take_reshape_finite_differences():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)

    def build(x, w, b):
        y = gn.linear(x, w, b)
        z = gn.concat([y, gn.take(y, (slice(None), slice(0, 1)))], axis=1)
        return gn.mean(gn.square(gn.reshape(z, (2, 8))))

    _fd_check(build, [x, w, b])


def test_three_layer_conv_net_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 1, 9, 9))
    w1 = rng.normal(size=(3, 1, 3, 3)) * 0.5
    w2 = rng.normal(size=(4, 3, 3, 3)) * 0.5
    w3 = rng.normal(size=(2, 4, 2, 2)) * 0.5
    b1 = rng.normal(size=3)

    def build(x, w1, b1, w2, w3):
        h = gn.tanh(gn.conv2d(x, w1, b1, stride=1))
        h = gn.tanh(gn.conv2d(h, w2, stride=2))
        h = gn.conv2d(h, w3, stride=1)
        return gn.sum(gn.square(h))

    _fd_check(build, [x, w1, b1, w2, w3])


def test_conv2d_ones():
    x = gn.Tensor(np.ones((1, 4, 4)))
    w = gn.Tensor(np.ones((1, 1, 2, 2)))
    y = gn.conv2d(x, w, stride=2)
    assert y.shape == (1, 2, 2)
    np.testing.assert_array_equal(y.data, np.full((1, 2, 2), 4.0))


def test_conv2d_identity_tap_shifts():
    x = np.arange(25.0).reshape(1, 5, 5)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 2] = 1.0
    y = gn.conv2d(gn.Tensor(x), gn.Tensor(w)).data
    np.testing.assert_array_equal(y[0], x[0, 1:4, 2:5])


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv2d_matches_naive_loops(stride):
    rng = np.random.default_rng(5 + stride)
    x = rng.normal(size=(3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    got = gn.conv2d(gn.Tensor(x), gn.Tensor(w), stride=stride).data
    np.testing.assert_allclose(got, naive_conv2d(x, w, stride), rtol=0, atol=1e-12)


def test_conv2d_shape_mismatch():
    with pytest.raises(ContractError):
        gn.conv2d(gn.Tensor(np.ones((2, 4, 4))), gn.Tensor(np.ones((1, 3, 2, 2))))
    with pytest.raises(ContractError):
        gn.conv2d(gn.Tensor(np.ones((1, 2, 2))), gn.Tensor(np.ones((1, 1, 3, 3))))


def test_conv_transpose_single_tap():
    k = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    y = gn.conv_transpose2d(gn.Tensor(np.full((1, 1, 1), 2.5)), gn.Tensor(k), stride=1)
    np.testing.assert_array_equal(y.data[0], 2.5 * k[0, 0])


def test_conv_transpose_disjoint_tiles():
    y = gn.conv_transpose2d(gn.Tensor(np.ones((1, 2, 2))), gn.Tensor(np.ones((1, 1, 2, 2))), stride=2)
    assert y.shape == (1, 4, 4)
    np.testing.assert_array_equal(y.data, np.ones((1, 4, 4)))


@pytest.mark.parametrize("stride,k,size", [(1, 3, 7), (2, 3, 9), (2, 2, 8), (3, 3, 10)])
def test_conv_transpose_is_conv_input_gradient(stride, k, size):
    rng = np.random.default_rng(stride * 10 + k)
    w = rng.normal(size=(3, 2, k, k))
    x = gn.parameter(rng.normal(size=(1, 2, size, size)))
    y = gn.conv2d(x, gn.Tensor(w), stride=stride)
    g = rng.normal(size=y.shape)
    gn.backward(gn.sum(y * g))
    transposed = gn.conv_transpose2d(gn.Tensor(g), gn.Tensor(w), stride=stride).data
    # valid conv may ignore trailing rows/cols that the transpose never reaches
    h = transposed.shape[2]
    np.testing.assert_allclose(transposed, x.grad[:, :, :h, :h], rtol=0, atol=1e-12)
    assert np.all(x.grad[:, :, h:, :] == 0) and np.all(x.grad[:, :, :, h:] == 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), stride=st.integers(1, 3), k=st.integers(1, 3))
def test_adjoint_identity(seed, stride, k):
    rng = np.random.default_rng(seed)
    size = stride * 3 + k
    w = rng.normal(size=(2, 3, k, k))
    x = rng.normal(size=(3, size, size))
    cx = gn.conv2d(gn.Tensor(x), gn.Tensor(w), stride=stride).data
    y = rng.normal(size=cx.shape)
    ty = gn.conv_transpose2d(gn.Tensor(y), gn.Tensor(w), stride=stride).data
    lhs = np.sum(cx * y)
    rhs = np.sum(x[:, : ty.shape[1], : ty.shape[2]] * ty)
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_conv_transpose_finite_differences():
    rng = np.random.default_rng(6)
    x, w, b = rng.normal(size=(2, 3, 3, 3)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=2)
    _fd_check(lambda x, w, b: gn.sum(gn.square(gn.conv_transpose2d(x, w, b, stride=2))), [x, w, b])


def test_causal_identity_tap():
    x = np.random.default_rng(7).normal(size=(1, 12))
    y = gn.causal_conv1d(gn.Tensor(x), gn.Tensor(np.array([[[0.0, 1.0]]])), dilation=3)
    np.testing.assert_array_equal(y.data, x)


def test_causal_impulse_with_dilation():
    x = np.zeros((1, 16))
    x[0, 5] = 1.0
    y = gn.causal_conv1d(gn.Tensor(x), gn.Tensor(np.array([[[0.7, 0.3]]])), dilation=4).data
    assert set(np.flatnonzero(y[0])) == {5, 9}


def test_causal_matches_naive_loops():
    rng = np.random.default_rng(8)
    x, w = rng.normal(size=(3, 20)), rng.normal(size=(4, 3, 3))
    got = gn.causal_conv1d(gn.Tensor(x), gn.Tensor(w), dilation=2).data
    np.testing.assert_allclose(got, naive_causal_conv1d(x, w, 2), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), t=st.integers(0, 15), dilation=st.integers(1, 4))
def test_causality_perturbation(seed, t, dilation):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 16))
    w = gn.Tensor(rng.normal(size=(3, 2, 3)))
    base = gn.causal_conv1d(gn.Tensor(x), w, dilation=dilation).data
    x2 = x.copy()
    x2[:, t] += rng.normal(size=2) + 1.0
    moved = gn.causal_conv1d(gn.Tensor(x2), w, dilation=dilation).data
    np.testing.assert_array_equal(base[:, :t], moved[:, :t])


def test_causal_finite_differences():
    rng = np.random.default_rng(9)
    x, w, b = rng.normal(size=(2, 3, 10)), rng.normal(size=(2, 3, 2)), rng.normal(size=2)
    _fd_check(lambda x, w, b: gn.sum(gn.square(gn.causal_conv1d(x, w, b, dilation=3))), [x, w, b])


def test_l2_normalize_values():
    np.testing.assert_allclose(gn.l2_normalize(gn.Tensor(np.array([3.0, 4.0]))).data, [0.6, 0.8])
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(gn.l2_normalize(gn.Tensor(u)).data, u)


def test_l2_normalize_degenerate():
    with pytest.raises(DegenerateNormError):
        gn.l2_normalize(gn.Tensor(np.zeros(4)))


def test_l2_normalize_finite_differences():
    rng = np.random.default_rng(10)
    v = rng.normal(size=64)
    wts = gn.Tensor(rng.normal(size=64))
    _fd_check(lambda p: gn.sum(gn.l2_normalize(p) * wts), [v], tol=1e-4)


def test_adam_zero_gradient_keeps_params():
    p = {"w": gn.parameter(np.array([1.0, -2.0]))}
    gn.adam_step(p, {"w": np.zeros(2)}, gn.OptimState(lr=0.1))
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_is_sign_step():
    p = {"w": gn.parameter(np.array([0.5, 0.5, 0.5]))}
    g = np.array([3.0, -0.01, 250.0])
    gn.adam_step(p, {"w": g}, gn.OptimState(lr=0.01))
    np.testing.assert_allclose(p["w"].data, 0.5 - 0.01 * np.sign(g), atol=1e-6)


def test_adam_converges_on_quadratic():
    w = gn.parameter(np.array(0.0))
    opt = gn.Adam({"w": w}, lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        gn.backward(gn.square(w - 3.0))
        opt.step()
    # independent scalar recurrence of the same update rule
    ws, m, v = 0.0, 0.0, 0.0
    for t in range(1, 101):
        g = 2 * (ws - 3.0)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ws -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert abs(float(w.data) - 3.0) < 0.1
    assert float(w.data) == pytest.approx(ws, abs=1e-12)
    assert opt.state.step == 100


def test_adam_shape_mismatch():
    with pytest.raises(ContractError):
        gn.adam_step({"w": gn.parameter(np.ones(2))}, {"w": np.ones(3)}, gn.OptimState())


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    tensors = {"a": rng.normal(size=(2, 3)), "b.weight": rng.normal(size=(4,)), "s": np.array(1.5)}
    blob = gn.checkpoint.save(tmp_path / "c.prck", tensors)
    loaded = gn.checkpoint.load(tmp_path / "c.prck")
    assert list(loaded) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(loaded[k], tensors[k])
    assert gn.checkpoint.dumps(loaded) == blob
    assert blob[:4] == b"PRCK"


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(12)
        layer = gn.Conv2d(1, 2, 3, 2, rng)
        x = gn.Tensor(rng.normal(size=(2, 1, 9, 9)))
        loss = gn.mean(gn.square(layer(x)))
        gn.backward(loss)
        return loss.data.tobytes() + layer.weight.grad.tobytes()

    assert run() == run()
