import numpy as np
import pytest

import oracles
from standseg.errors import ShapeError
from standseg.net.tensorops import (
    concat_channels,
    conv2d,
    conv2d_backward,
    conv2d_raw,
    dropout,
    dropout_backward,
    maxpool2,
    maxpool2_backward,
    relu,
    relu_backward,
    softmax_backward,
    softmax_channels,
    split_channels,
    upsample2,
    upsample2_backward,
)


def fd_check(f, x, analytic, step=1e-6, tol=1e-5):
    fd = oracles.central_diff(f, x.astype(np.float64), step=step)
    scale = np.maximum(np.abs(fd), 1e-6)
    assert (np.abs(analytic - fd) / scale).max() < tol


# -- convolution ----------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv2d_matches_loops(rng, k):
    x = rng.normal(size=(2, 3, 5, 6))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    y, _ = conv2d(x, w, b)
    assert np.allclose(y, oracles.conv2d_loops(x, w, b), atol=1e-12)


def test_conv2d_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        conv2d_raw(rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 5, 3, 3)))


def test_conv2d_backward_matches_fd(rng):
    x = rng.normal(size=(2, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    dy = rng.normal(size=(2, 3, 4, 4))
    _, cache = conv2d(x, w, b)
    dx, dw, db = conv2d_backward(dy, cache)
    loss = lambda y: float((y * dy).sum())  # linear probe makes FD exact-ish
    fd_check(lambda v: loss(conv2d_raw(v, w, b)), x, dx)
    fd_check(lambda v: loss(conv2d_raw(x, v, b)), w, dw)
    fd_check(lambda v: loss(conv2d_raw(x, w, v)), b, db)


# -- relu / softmax ---------------------------------------------------------------


def test_relu_and_backward(rng):
    x = rng.normal(size=(1, 2, 3, 3))
    y, cache = relu(x)
    assert np.array_equal(y, np.maximum(x, 0))
    dy = rng.normal(size=x.shape)
    dx = relu_backward(dy, cache)
    assert np.array_equal(dx, dy * (x > 0))


def test_softmax_channels_normalizes(rng):
    z = rng.normal(size=(2, 5, 4, 4)) * 30  # large logits stress stability
    p = softmax_channels(z)
    assert np.all(p > 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_shift_invariance(rng):
    z = rng.normal(size=(1, 4, 2, 2))
    assert np.allclose(softmax_channels(z), softmax_channels(z + 100.0), atol=1e-12)


def test_softmax_backward_matches_fd(rng):
    z = rng.normal(size=(1, 4, 3, 3))
    dprobs = rng.normal(size=z.shape)
    dz = softmax_backward(dprobs, softmax_channels(z))
    fd_check(lambda v: float((softmax_channels(v) * dprobs).sum()), z, dz)


# -- pooling --------------------------------------------------------------------


def test_maxpool2_values(rng):
    x = rng.normal(size=(1, 1, 4, 6))
    y, _ = maxpool2(x)
    for i in range(2):
        for j in range(3):
            assert y[0, 0, i, j] == x[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()


def test_maxpool2_tie_takes_first_in_window():
    x = np.zeros((1, 1, 2, 2))
    x[0, 0] = [[7.0, 7.0], [7.0, 7.0]]
    _, (idx, _) = maxpool2(x)
    assert idx[0, 0, 0, 0] == 0  # row-major first position wins the tie
    dy = np.ones((1, 1, 1, 1))
    dx = maxpool2_backward(dy, maxpool2(x)[1])
    assert dx[0, 0, 0, 0] == 1.0 and dx.sum() == 1.0


def test_maxpool2_odd_side_rejected(rng):
    with pytest.raises(ShapeError):
        maxpool2(rng.normal(size=(1, 1, 3, 4)))


def test_maxpool2_backward_routes_to_argmax(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    y, cache = maxpool2(x)
    dy = rng.normal(size=y.shape)
    dx = maxpool2_backward(dy, cache)
    # every window puts its whole incoming gradient on its max cell
    assert dx.sum() == pytest.approx(dy.sum(), abs=1e-12)
    assert np.count_nonzero(dx) == dy.size
    assert np.all((dx != 0) <= (x == np.repeat(np.repeat(y, 2, 2), 2, 3)))


def test_upsample2_and_backward(rng):
    x = rng.normal(size=(1, 2, 2, 3))
    y = upsample2(x)
    assert y.shape == (1, 2, 4, 6)
    assert np.array_equal(y[0, 0, :2, :2], np.full((2, 2), x[0, 0, 0, 0]))
    dy = rng.normal(size=y.shape)
    dx = upsample2_backward(dy)
    assert dx[0, 1, 1, 2] == pytest.approx(dy[0, 1, 2:4, 4:6].sum(), abs=1e-12)


# -- dropout ----------------------------------------------------------------------


def test_dropout_identity_cases(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    y, cache = dropout(x, 0.0, rng)
    assert y is x
    y2, _ = dropout(x, 0.5, None)
    assert y2 is x
    assert dropout_backward(x, cache) is x


def test_dropout_scales_survivors(rng):
    x = np.ones((1, 1, 50, 50))
    y, (keep, scale) = dropout(x, 0.25, np.random.default_rng(0))
    assert scale == pytest.approx(1 / 0.75)
    assert np.array_equal(y != 0, keep)
    survivors = y[y != 0]
    assert np.allclose(survivors, 1 / 0.75)
    # inverted dropout keeps the expectation near the input
    assert y.mean() == pytest.approx(1.0, abs=0.05)


def test_dropout_backward_uses_same_mask(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    _, cache = dropout(x, 0.4, np.random.default_rng(1))
    dy = rng.normal(size=x.shape)
    dx = dropout_backward(dy, cache)
    keep, scale = cache
    assert np.array_equal(dx, dy * keep * scale)


def test_dropout_validates_p(rng):
    with pytest.raises(ValueError):
        dropout(np.zeros((1, 1, 2, 2)), 1.0, rng)


# -- concat ----------------------------------------------------------------------


def test_concat_split_round_trip(rng):
    a = rng.normal(size=(2, 3, 4, 4))
    b = rng.normal(size=(2, 5, 4, 4))
    y = concat_channels(a, b)
    assert y.shape == (2, 8, 4, 4)
    da, db = split_channels(y, 3)
    assert np.array_equal(da, a)
    assert np.array_equal(db, b)


def test_concat_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        concat_channels(rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 5, 4)))
