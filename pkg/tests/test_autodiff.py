import numpy as np
import pytest

from depthdehaze.autodiff import (Tensor, clip01, concat, conv2d, gelu,
                                  layernorm, matmul, narrow, pad_hw, relu,
                                  sigmoid, softmax, upsample_nearest)
from depthdehaze.gradcheck import check_gradients

rng = np.random.default_rng(42)


def randn(*shape, scale=0.7):
    return rng.standard_normal(shape) * scale


@pytest.mark.parametrize("fn,inputs", [
    (lambda a, b: ((a + b) * (a - b) / (b + 3.0)).mean(), {"a": randn(3, 4), "b": randn(3, 4)}),
    (lambda a, b: (a * b).sum(), {"a": randn(4, 1, 5), "b": randn(1, 3, 5)}),  # broadcast
    (lambda a: (a ** 3).mean(), {"a": randn(6)}),
    (lambda a: ((a ** 2 + 1.0).log() + (a * a + 0.5).sqrt()).sum(), {"a": randn(5, 2)}),
    (lambda a: a.exp().mean(), {"a": randn(3, 3)}),
    (lambda a: a.abs().mean(), {"a": randn(7) + 2.0}),
    (lambda a: relu(a).sum(), {"a": randn(5, 5) + 0.4}),
    (lambda a: gelu(a).mean(), {"a": randn(4, 4)}),
    (lambda a: sigmoid(a).mean(), {"a": randn(4, 4, 2)}),
    (lambda a: softmax(a, axis=-1).__pow__(2).sum(), {"a": randn(3, 6)}),
    (lambda a: softmax(a, axis=1).mean(), {"a": randn(2, 5, 3)}),
    (lambda a: clip01(a).__mul__(2.0).mean(), {"a": rng.uniform(0.1, 0.9, (4, 4))}),
    (lambda a: a.mean(axis=(1, 2), keepdims=True).sum(), {"a": randn(2, 3, 4)}),
    (lambda a: a.sum(axis=0).mean(), {"a": randn(3, 4)}),
    (lambda a: a.reshape(2, 6).transpose((1, 0)).mean(), {"a": randn(3, 4)}),
    (lambda a: upsample_nearest(a, 3).mean(), {"a": randn(1, 2, 3, 3)}),
    (lambda a: pad_hw(a, 1, 2, 3, 0).sum(), {"a": randn(1, 2, 3, 3)}),
    (lambda a: narrow(a, 2, 1, 2).mean(), {"a": randn(1, 2, 4, 4)}),
    (lambda a, b: concat([a, b], axis=1).mean(), {"a": randn(2, 2, 3, 3), "b": randn(2, 4, 3, 3)}),
    (lambda a, b: matmul(a, b).mean(), {"a": randn(2, 3, 4, 5), "b": randn(2, 3, 5, 2)}),
    (lambda a, w: matmul(a, w).sum(), {"a": randn(2, 7, 4), "w": randn(4, 3)}),
    (lambda x, g, b: layernorm(x, g, b).__pow__(2).mean(),
     {"x": randn(2, 5, 6), "g": rng.uniform(0.5, 1.5, 6), "b": randn(6)}),
])
def test_op_gradients(fn, inputs):
    assert check_gradients(fn, inputs) < 1e-5


@pytest.mark.parametrize("kwargs,xshape,wshape", [
    (dict(stride=1, padding=1), (2, 3, 6, 7), (4, 3, 3, 3)),
    (dict(stride=2, padding=1), (1, 2, 8, 8), (3, 2, 3, 3)),
    (dict(stride=1, padding=2, dilation=2), (1, 2, 8, 8), (2, 2, 3, 3)),
    (dict(stride=1, padding=0), (2, 3, 5, 5), (4, 3, 1, 1)),
])
def test_conv2d_gradients(kwargs, xshape, wshape):
    err = check_gradients(
        lambda x, w, b: conv2d(x, w, b, **kwargs).mean(),
        {"x": randn(*xshape), "w": randn(*wshape), "b": randn(wshape[0])})
    assert err < 1e-6


def test_conv2d_matches_direct_convolution():
    x = randn(1, 2, 6, 6)
    w = randn(3, 2, 3, 3)
    out = conv2d(Tensor(x), Tensor(w), padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for i in range(6):
            for j in range(6):
                ref = (xp[0, :, i:i + 3, j:j + 3] * w[o]).sum()
                assert abs(out[0, o, i, j] - ref) < 1e-10


def test_detach_blocks_gradient():
    a = Tensor(randn(3, 3), requires_grad=True)
    out = (a.detach() * a).sum()
    out.backward()
    np.testing.assert_allclose(a.grad, a.data)  # only the undetached factor


def test_no_graph_without_requires_grad():
    a = Tensor(randn(2, 2))
    out = (a * a).sum()
    assert out._backward is None and not out.requires_grad


def test_backward_requires_scalar():
    a = Tensor(randn(2, 2), requires_grad=True)
    with pytest.raises(ValueError):
        (a * 2.0).backward()


def test_gradient_accumulates_over_shared_use():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    out = (a + a).sum()
    out.backward()
    np.testing.assert_array_equal(a.grad, [2.0, 2.0])


def test_dtype_preserved_float32():
    a = Tensor(np.ones((3, 3), np.float32), requires_grad=True)
    out = gelu(a * 0.5 + 0.25).mean()
    assert out.dtype == np.float32
    out.backward()
    assert a.grad.dtype == np.float32


def test_determinism_bitwise():
    x = randn(2, 3, 8, 8).astype(np.float32)
    w = randn(4, 3, 3, 3).astype(np.float32)
    r1 = conv2d(Tensor(x), Tensor(w), padding=1).data
    r2 = conv2d(Tensor(x), Tensor(w), padding=1).data
    assert np.array_equal(r1, r2)
