import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import check_grads
from cpat import instrument
from cpat import functional as F
from cpat.tensor import Tensor, backward, tsum
from oracles import (
    conv2d_im2col,
    depthwise_grouped,
    dft2_direct,
    gelu_tanh,
    layer_norm_ref,
    matmul_loops,
    softmax_ref,
)


def test_matmul_matches_loops(rng):
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    np.testing.assert_allclose(F.matmul(Tensor(a), Tensor(b)).data, matmul_loops(a, b), atol=1e-12)


@pytest.mark.parametrize("shapes", [((3, 4), (4, 2)), ((2, 3, 4), (2, 4, 5)), ((2, 3, 4), (4, 5))])
def test_matmul_gradients(rng, shapes):
    check_grads(F.matmul, [rng.standard_normal(s) for s in shapes], rng)


def test_matmul_shape_error():
    with pytest.raises(ValueError, match="mismatch"):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_mac_count():
    with instrument.counting() as c:
        F.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((4, 5))))
    assert c.total_macs == 3 * 4 * 5


def test_linear(rng):
    x, w, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)
    np.testing.assert_allclose(F.linear(Tensor(x), Tensor(w), Tensor(b)).data, x @ w + b, atol=1e-12)
    check_grads(F.linear, [x, w, b], rng)


def test_softmax(rng):
    x = rng.standard_normal((3, 7)) * 5
    y = F.softmax(Tensor(x)).data
    np.testing.assert_allclose(y, softmax_ref(x), atol=1e-14)
    np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-14)
    check_grads(F.softmax, [x], rng)


def test_softmax_is_shift_stable():
    y = F.softmax(Tensor(np.array([1000.0, 1000.0]))).data
    assert np.allclose(y, 0.5)


def test_layer_norm(rng):
    x, g, b = rng.standard_normal((2, 3, 6)), rng.standard_normal(6), rng.standard_normal(6)
    np.testing.assert_allclose(F.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data, layer_norm_ref(x, g, b), atol=1e-12)
    check_grads(F.layer_norm, [x, g, b], rng, tol=1e-5)


def test_gelu_and_leaky(rng):
    x = rng.standard_normal(20)
    np.testing.assert_allclose(F.gelu(Tensor(x)).data, gelu_tanh(x), atol=1e-9)
    check_grads(F.gelu, [x], rng)
    y = F.leaky_relu(Tensor(np.array([-2.0, 0.0, 3.0]))).data
    assert y.tolist() == [-0.4, 0.0, 3.0]
    check_grads(F.leaky_relu, [x + np.sign(x) * 0.01], rng)


@pytest.mark.parametrize("pad,stride,k", [(0, 1, 3), (1, 1, 3), (2, 2, 5), (0, 1, 1)])
def test_conv2d_matches_im2col(rng, pad, stride, k):
    x, w, b = rng.standard_normal((2, 3, 7, 6)), rng.standard_normal((4, 3, k, k)), rng.standard_normal(4)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
    np.testing.assert_allclose(out, conv2d_im2col(x, w, b, pad=pad, stride=stride), atol=1e-12)


@pytest.mark.parametrize("pad,stride", [(1, 1), (0, 2)])
def test_conv2d_gradients(rng, pad, stride):
    arrays = [rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)]
    check_grads(lambda x, k, b: F.conv2d(x, k, b, stride=stride, pad=pad), arrays, rng)


def test_conv2d_mac_count():
    with instrument.counting() as c:
        F.conv2d(Tensor(np.ones((2, 3, 8, 8))), Tensor(np.ones((5, 3, 3, 3))), pad=1)
    assert c.total_macs == 2 * 5 * 8 * 8 * 3 * 3 * 3


def test_conv2d_channel_error():
    with pytest.raises(ValueError, match="channel"):
        F.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_depthwise_matches_grouped(rng):
    x, k, b = rng.standard_normal((2, 4, 6, 5)), rng.standard_normal((4, 1, 3, 3)), rng.standard_normal(4)
    np.testing.assert_allclose(F.depthwise_conv2d(Tensor(x), Tensor(k), Tensor(b)).data,
                               depthwise_grouped(x, k, b), atol=1e-12)
    check_grads(F.depthwise_conv2d, [x[:1, :2], k[:2], b[:2]], rng)


def test_pixel_shuffle_layout(rng):
    r, c, h, w = 2, 3, 4, 5
    x = rng.standard_normal((1, c * r * r, h, w))
    y = F.pixel_shuffle(Tensor(x), r).data
    for ch in range(c):
        for dy in range(r):
            for dx in range(r):
                np.testing.assert_array_equal(y[0, ch, dy::r, dx::r], x[0, ch * r * r + dy * r + dx])
    assert np.array_equal(F.pixel_unshuffle(Tensor(y), r).data, x)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 8, 9, 16, 24])
def test_fft2_matches_direct_dft(rng, n):
    x = rng.standard_normal((2, n, n + 1))
    z = F.fft2(Tensor(x)).to_numpy()
    np.testing.assert_allclose(z, dft2_direct(x), atol=1e-9)


@pytest.mark.parametrize("h,w", [(h, w) for h in range(1, 10) for w in (1, 4, 9)] + [(16, 16), (24, 24), (16, 24)])
def test_fft_roundtrip(rng, h, w):
    x = rng.standard_normal((3, h, w))
    back = F.ifft2(F.fft2(Tensor(x))).data
    assert np.max(np.abs(back - x)) < 1e-10


def test_parseval(rng):
    x = rng.standard_normal((6, 10))
    z = F.fft2(Tensor(x)).to_numpy()
    assert np.sum(np.abs(z) ** 2) == pytest.approx(x.size * np.sum(x**2), rel=1e-12)


def test_fft_gradients(rng):
    check_grads(lambda x: F.fft2(x).real, [rng.standard_normal((3, 5))], rng)
    check_grads(lambda x: F.fft2(x).imag, [rng.standard_normal((4, 3))], rng)
    check_grads(lambda a, b: F.ifft2(F.ComplexTensor(a, b)), [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))], rng)


def test_ifft_residue_reports_non_hermitian(rng):
    x = rng.standard_normal((6, 6))
    z = F.fft2(Tensor(x))
    _, residue = F.ifft2(z, return_residue=True)
    assert residue < 1e-12
    bumped = F.ComplexTensor(z.real, Tensor(z.imag.data + np.eye(6)))
    _, residue = F.ifft2(bumped, return_residue=True)
    assert residue > 1e-3


def test_fft_calls_counted():
    with instrument.counting() as c:
        F.ifft2(F.fft2(Tensor(np.ones((4, 4)))))
    assert (c.calls["fft2"], c.calls["ifft2"]) == (1, 1)


def test_l1_loss(rng):
    p, t = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    loss = F.l1_loss(Tensor(p, requires_grad=True), t)
    assert float(loss.data) == pytest.approx(np.abs(p - t).mean())
    check_grads(lambda a: F.l1_loss(a, t), [p], rng)


def test_instrumentation_disabled_raises():
    with instrument.disabled():
        with pytest.raises(instrument.InstrumentationError):
            with instrument.counting():
                pass


def test_components_nest():
    with instrument.counting() as c:
        with instrument.component("outer"):
            with instrument.component("inner"):
                F.matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
    assert c.macs["outer/inner"] == 8


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3))
def test_conv_output_shape(h, w, k):
    if k > h + 2 or k > w + 2:
        return
    out = F.conv2d(Tensor(np.zeros((1, 2, h, w))), Tensor(np.zeros((3, 2, k, k))), pad=1)
    assert out.shape == (1, 3, h + 3 - k, w + 3 - k)
