import numpy as np
import pytest

from frustumseg.network import layers as L
from frustumseg.network.gradcheck import gradient_check, relative_error

TOL = 1e-4
SAMPLES = 40


def scalar_of(forward, x_shape_out, rng):
    """Random linear functional of a layer's output, so each layer reduces to a scalar."""
    g = rng.normal(size=x_shape_out) / np.sqrt(np.prod(x_shape_out))
    return g, lambda: float((forward()[0] * g).sum())


@pytest.mark.parametrize("stride", [1, 2])
def test_conv3d_gradients(stride, rng):
    x = rng.normal(size=(2, 16, 16, 16))
    w = rng.normal(size=(3, 2, 3, 3, 3)) * 0.2
    b = rng.normal(size=3)
    out, cache = L.conv3d_forward(x, w, b, stride=stride)
    assert out.shape == (3,) + L.conv_output_shape((16, 16, 16), 3, stride, 1)

    g, f = scalar_of(lambda: L.conv3d_forward(x, w, b, stride=stride), out.shape, rng)
    dx, dw, db = L.conv3d_backward(g, cache)
    assert gradient_check(f, x, dx, samples=SAMPLES, rng=rng) <= TOL
    assert gradient_check(f, w, dw, samples=SAMPLES, rng=rng) <= TOL
    assert gradient_check(f, b, db) <= TOL


def test_conv3d_matches_direct_sum(rng):
    x = rng.normal(size=(1, 4, 4, 4))
    w = rng.normal(size=(1, 1, 3, 3, 3))
    out, _ = L.conv3d_forward(x, w, np.zeros(1), stride=1, pad=0)
    expected = (x[0, 1:4, 0:3, 1:4] * w[0, 0]).sum()
    assert out.shape == (1, 2, 2, 2)
    assert out[0, 1, 0, 1] == pytest.approx(expected)


def test_group_norm_gradients(rng):
    x = rng.normal(size=(8, 16, 16, 16))
    gamma = rng.normal(size=8)
    beta = rng.normal(size=8)
    out, cache = L.group_norm_forward(x, gamma, beta, groups=4)
    g, f = scalar_of(lambda: L.group_norm_forward(x, gamma, beta, groups=4), out.shape, rng)
    dx, dgamma, dbeta = L.group_norm_backward(g, cache)
    assert gradient_check(f, x, dx, samples=SAMPLES, rng=rng) <= TOL
    assert gradient_check(f, gamma, dgamma) <= TOL
    assert gradient_check(f, beta, dbeta) <= TOL


def test_group_norm_normalizes_each_group(rng):
    x = rng.normal(3.0, 2.0, size=(4, 5, 5, 5))
    out, _ = L.group_norm_forward(x, np.ones(4), np.zeros(4), groups=2)
    groups = out.reshape(2, -1)
    np.testing.assert_allclose(groups.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(groups.std(axis=1), 1.0, atol=1e-3)


def test_effective_groups():
    assert L.effective_groups(6, 4) == 2
    assert L.effective_groups(12, 4) == 4


def test_relu_gradients(rng):
    x = rng.normal(size=(2, 16, 16, 16))
    x[np.abs(x) < 0.01] = 0.5
    out, cache = L.relu_forward(x)
    g, f = scalar_of(lambda: L.relu_forward(x), out.shape, rng)
    assert gradient_check(f, x, L.relu_backward(g, cache), samples=SAMPLES, rng=rng) <= TOL


def test_maxpool_gradients(rng):
    # distinct values 0.01 apart keep every argmax stable under the probe step
    x = rng.permutation(2 * 15 * 16 * 17).reshape(2, 15, 16, 17) * 0.01
    out, cache = L.maxpool3d_forward(x)
    assert out.shape == (2, 8, 8, 9)
    g, f = scalar_of(lambda: L.maxpool3d_forward(x), out.shape, rng)
    dx = L.maxpool3d_backward(g, cache)
    assert dx.shape == x.shape
    assert gradient_check(f, x, dx, samples=SAMPLES, rng=rng) <= TOL
    assert np.count_nonzero(dx) == out.size


def test_maxpool_keeps_partial_edge_windows():
    x = np.zeros((1, 3, 2, 2))
    x[0, 2, 1, 1] = 5.0
    out, _ = L.maxpool3d_forward(x)
    assert out.shape == (1, 2, 1, 1)
    assert out[0, 1, 0, 0] == 5.0


def test_gap_gradients(rng):
    x = rng.normal(size=(3, 16, 16, 16))
    region = (slice(2, 9), slice(0, 16), slice(5, 6))
    out, cache = L.gap_forward(x, region)
    np.testing.assert_allclose(out, x[:, 2:9, :, 5:6].mean(axis=(1, 2, 3)))
    g, f = scalar_of(lambda: L.gap_forward(x, region), out.shape, rng)
    assert gradient_check(f, x, L.gap_backward(g, cache), samples=SAMPLES, rng=rng) <= TOL


def test_linear_gradients(rng):
    x = rng.normal(size=7)
    w = rng.normal(size=(2, 7))
    b = rng.normal(size=2)
    out, cache = L.linear_forward(x, w, b)
    g, f = scalar_of(lambda: L.linear_forward(x, w, b), out.shape, rng)
    dx, dw, db = L.linear_backward(g, cache)
    assert gradient_check(f, x, dx) <= TOL
    assert gradient_check(f, w, dw) <= TOL
    assert gradient_check(f, b, db) <= TOL


def test_sigmoid_gradients(rng):
    x = rng.normal(size=(1, 16, 16, 16)) * 3
    out, cache = L.sigmoid_forward(x)
    g, f = scalar_of(lambda: L.sigmoid_forward(x), out.shape, rng)
    assert gradient_check(f, x, L.sigmoid_backward(g, cache), samples=SAMPLES, rng=rng) <= TOL


def test_sigmoid_is_stable_for_large_inputs():
    out = L.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


def test_upsample_gradients(rng):
    x = rng.normal(size=(2, 4, 5, 3))
    out, cache = L.upsample_forward(x, (16, 16, 16))
    assert out.shape == (2, 16, 16, 16)
    g, f = scalar_of(lambda: L.upsample_forward(x, (16, 16, 16)), out.shape, rng)
    assert gradient_check(f, x, L.upsample_backward(g, cache)) <= TOL


def test_upsample_identity_and_constant(rng):
    x = rng.normal(size=(1, 4, 4, 4))
    out, cache = L.upsample_forward(x, (4, 4, 4))
    assert out is x and cache is None
    const, _ = L.upsample_forward(np.full((1, 3, 3, 3), 2.5), (7, 9, 5))
    np.testing.assert_allclose(const, 2.5)


def test_interpolation_rows_sum_to_one():
    m = L.interpolation_matrix(5, 13)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)


def test_concat_and_crop_gradients(rng):
    a = rng.normal(size=(2, 16, 16, 16))
    b = rng.normal(size=(3, 16, 16, 16))
    region = (slice(1, 5), slice(3, 16), slice(0, 2))

    def forward():
        joined, _ = L.concat_forward([a, b])
        return L.crop_forward(joined, region)

    out, crop_cache = forward()
    g, f = scalar_of(forward, out.shape, rng)
    _, concat_cache = L.concat_forward([a, b])
    da, db = L.concat_backward(L.crop_backward(g, crop_cache), concat_cache)
    assert gradient_check(f, a, da, samples=SAMPLES, rng=rng) <= TOL
    assert gradient_check(f, b, db, samples=SAMPLES, rng=rng) <= TOL


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0 + 1e-9])) < 1e-8
