import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lamalite import tensor as T
from lamalite.tensor import Tensor
from oracles import central_difference, full_spectrum_from_half, naive_conv2d, naive_dft2, rel_error


def as4(a):
    return Tensor(np.asarray(a, dtype=float)[None, None])


# ---------------------------------------------------------------- FFT


def test_rfft_constant_has_only_dc():
    f = T.rfft2d(as4(np.full((4, 4), 2.5))).numpy()[0, 0]
    assert f.shape == (4, 3)
    assert f[0, 0] == pytest.approx(16 * 2.5)
    rest = f.copy()
    rest[0, 0] = 0
    assert np.abs(rest).max() < 1e-12


def test_rfft_impulse_is_flat():
    x = np.zeros((5, 6))
    x[0, 0] = 1.0
    f = T.rfft2d(as4(x)).numpy()[0, 0]
    np.testing.assert_allclose(f, np.ones_like(f), atol=1e-15)


def test_rfft_matches_direct_dft(rng):
    x = rng.normal(size=(8, 8))
    f = T.rfft2d(as4(x)).numpy()[0, 0]
    ref = naive_dft2(x)
    assert np.abs(f - ref).max() / np.abs(ref).max() <= 1e-10


@pytest.mark.parametrize("W", [8, 7])
def test_irfft_round_trip(rng, W):
    x = rng.normal(size=(2, 3, 8, W))
    back = T.irfft2d(T.rfft2d(Tensor(x)), W).data
    assert rel_error(back, x) <= 1e-10


def test_parseval_from_rebuilt_full_spectrum(rng):
    x = rng.normal(size=(6, 7))
    half = T.rfft2d(as4(x)).numpy()[0, 0]
    full = full_spectrum_from_half(half, 7)
    np.testing.assert_allclose(full, np.fft.fft2(x), atol=1e-10)
    assert (np.abs(full) ** 2).sum() / x.size == pytest.approx((x**2).sum(), rel=1e-12)


def test_irfft_rejects_inconsistent_width(rng):
    f = T.rfft2d(Tensor(rng.normal(size=(1, 1, 4, 8))))
    with pytest.raises(ValueError):
        T.irfft2d(f, 6)
    with pytest.raises(ValueError):
        T.rfft2(Tensor(np.zeros((1, 1, 0, 4))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31))
def test_round_trip_all_sizes(H, W, seed):
    x = np.random.default_rng(seed).normal(size=(1, 2, H, W))
    assert rel_error(T.irfft2d(T.rfft2d(Tensor(x)), W).data, x) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_rfft_linearity(H, W, a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 1, 1, H, W))
    lhs = T.rfft2d(Tensor(a * x + b * y)).numpy()
    rhs = a * T.rfft2d(Tensor(x)).numpy() + b * T.rfft2d(Tensor(y)).numpy()
    assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.abs(rhs).max())


# ---------------------------------------------------------------- convolution


def test_conv_identity_1x1(rng):
    x = rng.normal(size=(2, 3, 5, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_reflect_preserves_constant():
    out = T.conv2d(Tensor(np.ones((1, 1, 6, 6))), Tensor(np.ones((1, 1, 3, 3))), padding="reflect").data
    np.testing.assert_allclose(out, 9.0, rtol=0, atol=1e-14)


def test_conv_matches_nested_loops(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), padding="zero").data
    assert np.abs(out - naive_conv2d(x, w, b)).max() <= 1e-12


def test_conv_rejects_oversized_kernel():
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), padding="zero", pad=0)
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


@settings(max_examples=30, deadline=None)
@given(
    st.integers(3, 7),
    st.integers(3, 7),
    st.sampled_from([1, 3]),
    st.sampled_from([1, 2]),
    st.sampled_from(["zero", "reflect"]),
    st.integers(0, 2**31),
)
def test_conv_oracle_randomized(H, W, k, stride, mode, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, 2, H, W))
    w = r.normal(size=(2, 2, k, k))
    out = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=mode).data
    ref = naive_conv2d(x, w, stride=stride, padding=mode)
    assert out.shape == ref.shape
    assert np.abs(out - ref).max() <= 1e-12


def test_conv_output_size_formula():
    # ceil((H_pad - k + 1) / stride) with symmetric padding k//2
    for H in range(3, 12):
        for s in (1, 2):
            assert T.conv_output_size(H, 3, s) == math.ceil((H + 2 - 3 + 1) / s)


# ---------------------------------------------------------------- elementwise and batch norm


def test_relu_sigmoid_values():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_batchnorm_standardizes():
    st_ = T.BatchNormState(1)
    y = T.batchnorm2d(Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3)), Tensor([1.0]), Tensor([0.0]), st_)
    np.testing.assert_allclose(y.data.ravel(), [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_batchnorm_train_moments(rng):
    x = rng.normal(3.0, 2.0, size=(4, 5, 6, 6))
    y = T.batchnorm2d(Tensor(x), None, None, T.BatchNormState(5)).data
    assert np.abs(y.mean(axis=(0, 2, 3))).max() <= 1e-8
    assert np.abs(y.var(axis=(0, 2, 3)) - 1).max() <= 1e-5 * 10  # eps shifts var by ~eps/var


def test_batchnorm_zero_variance_is_finite():
    y = T.batchnorm2d(Tensor(np.full((2, 1, 3, 3), 7.0)), None, None, T.BatchNormState(1))
    assert np.all(y.data == 0.0)


def test_batchnorm_eval_uses_running_stats(rng):
    st_ = T.BatchNormState(2)
    st_.running_mean = np.array([1.0, -1.0])
    st_.running_var = np.array([4.0, 1.0])
    x = rng.normal(size=(1, 2, 3, 3))
    y = T.batchnorm2d(Tensor(x), None, None, st_, training=False).data
    np.testing.assert_allclose(y[0, 0], (x[0, 0] - 1.0) / np.sqrt(4.0 + 1e-5))


def test_nonfinite_is_an_error():
    with pytest.raises(T.NonFiniteError):
        T.log(Tensor([0.0, 1.0]))


# ---------------------------------------------------------------- backward


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    T.tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_stop_gradient_factor():
    x = Tensor(3.0, requires_grad=True)
    (T.stop_gradient(x) * x).backward()
    assert x.grad == 3.0


def test_ignored_leaf_gets_exact_zero():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([5.0, 6.0], requires_grad=True)
    loss = T.tsum(a * a)
    ga, gb = T.grad(loss, [a, b])
    assert np.all(gb.data == 0.0)
    np.testing.assert_array_equal(ga.data, [2.0, 4.0])


def test_non_scalar_root_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(T.GraphError):
        (x * 2.0).backward()


def test_cycle_detected():
    x = Tensor([1.0], requires_grad=True)
    y = x * 2.0
    z = y * 3.0
    y._parents = (z,)  # forge a loop; graphs built by ops cannot contain one
    with pytest.raises(T.GraphError):
        T.tsum(z).backward()


def test_shared_node_visited_once():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    (y + y + y).backward()
    assert x.grad == 12.0


def _fd_check(fn, *arrays, wrt=0):
    args = [Tensor(a, requires_grad=(i == wrt)) for i, a in enumerate(arrays)]
    out = fn(*args)
    out.backward()
    analytic = args[wrt].grad

    def f(v):
        vals = [Tensor(v) if i == wrt else Tensor(a) for i, a in enumerate(arrays)]
        return fn(*vals).item()

    return rel_error(analytic, central_difference(f, arrays[wrt]))


def _weights(shape, seed=7):
    return np.random.default_rng(seed).normal(size=shape)


PRIMITIVE_CASES = {
    "add": (lambda a, b: T.tsum(T.add(a, b) * _weights((3, 4))), [(3, 4), (1, 4)]),
    "sub": (lambda a, b: T.tsum(T.sub(a, b) * _weights((3, 4))), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: T.tsum(T.mul(a, b)), [(3, 4), (3, 4)]),
    "div": (lambda a, b: T.tsum(T.div(a, T.add(T.mul(b, b), 1.0))), [(3, 4), (3, 4)]),
    "exp": (lambda a: T.tsum(T.exp(a) * _weights((3, 4))), [(3, 4)]),
    "log": (lambda a: T.tsum(T.log(T.add(T.mul(a, a), 0.5))), [(3, 4)]),
    "power": (lambda a: T.tsum(T.power(T.add(T.mul(a, a), 1.0), -0.5)), [(3, 4)]),
    "relu": (lambda a: T.tsum(T.relu(a) * _weights((3, 4))), [(3, 4)]),
    "leaky_relu": (lambda a: T.tsum(T.leaky_relu(a) * _weights((3, 4))), [(3, 4)]),
    "sigmoid": (lambda a: T.tsum(T.sigmoid(a) * _weights((3, 4))), [(3, 4)]),
    "clip": (lambda a: T.tsum(T.clip(a, -0.5, 0.5) * _weights((3, 4))), [(3, 4)]),
    "mean": (lambda a: T.tsum(T.mean(a, axis=1, keepdims=True) ** 2.0), [(3, 4)]),
    "transpose": (lambda a: T.tsum(T.transpose(a) * _weights((4, 3))), [(3, 4)]),
    "concat_narrow": (lambda a: T.tsum(T.narrow(T.concat([a, a * a], axis=1), 1, 2, 7) * _weights((3, 5))), [(3, 4)]),
    "matmul": (lambda a, b: T.tsum(T.matmul(a, b) * _weights((2, 3, 5))), [(3, 4), (2, 4, 5)]),
    "rfft2": (lambda a: T.tsum(T.rfft2(a) * _weights((1, 4, 4, 3))), [(1, 2, 4, 5)]),
    "irfft2": (lambda a: T.tsum(T.irfft2(a, 6) * _weights((1, 1, 4, 6))), [(1, 2, 4, 4)]),
    "conv2d_input": (lambda a: T.tsum(T.conv2d(a, Tensor(_weights((2, 2, 3, 3)))) ** 2.0), [(1, 2, 5, 5)]),
    "conv2d_weight": (
        lambda w: T.tsum(T.conv2d(Tensor(_weights((2, 2, 6, 5), 3)), w, stride=2, padding="zero") ** 2.0),
        [(3, 2, 3, 3)],
    ),
    "upsample": (lambda a: T.tsum(T.upsample_nearest(a) * _weights((1, 2, 6, 6))), [(1, 2, 3, 3)]),
    "batchnorm": (
        lambda a: T.tsum(T.batchnorm2d(a, None, None, T.BatchNormState(2)) * _weights((2, 2, 3, 3))),
        [(2, 2, 3, 3)],
    ),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_finite_difference(name, rng):
    fn, shapes = PRIMITIVE_CASES[name]
    arrays = [rng.normal(size=s) for s in shapes]
    for wrt in range(len(arrays)):
        assert _fd_check(fn, *arrays, wrt=wrt) <= 1e-6, f"{name} wrt arg {wrt}"


def test_double_backward_through_conv_and_fft(rng):
    """d/dw ||d f / dx||^2 against finite differences of the inner gradient norm."""
    x = rng.normal(size=(1, 2, 6, 6))
    w0 = rng.normal(size=(2, 2, 3, 3))

    def penalty(w):
        xi = Tensor(x, requires_grad=True)
        y = T.irfft2(T.rfft2(T.leaky_relu(T.conv2d(xi, w, stride=2))), 3)
        (g,) = T.grad(T.tsum(y * y), [xi], create_graph=True)
        return T.tsum(g * g)

    w = Tensor(w0, requires_grad=True)
    penalty(w).backward()
    num = central_difference(lambda v: penalty(Tensor(v)).item(), w0)
    assert rel_error(w.grad, num) <= 1e-6


def test_graph_free_threads_are_isolated(rng):
    import threading

    seen = {}

    def worker():
        with T.no_grad():
            seen["inner"] = T.is_grad_enabled()

    t = threading.Thread(target=worker)
    t.start()
    t.join()
    assert seen["inner"] is False
    assert T.is_grad_enabled()
