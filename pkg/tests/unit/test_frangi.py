import numpy as np
import pydantic
import pytest

from frustumseg.frangi import (
    VesselnessParams,
    gaussian_smooth,
    hessian_eigen,
    symmetric_eigenvalues,
    vesselness,
)


@pytest.fixture(scope="module")
def cylinder():
    n = 64
    _, y, z = np.indices((n, n, n))
    center = (n - 1) / 2.0
    inside = (y - center) ** 2 + (z - center) ** 2 <= 3.0**2
    return inside.astype(np.float64)


def test_constant_volume_has_zero_response():
    response = vesselness(np.full((20, 20, 20), 0.7))
    assert response.dtype == np.float32
    assert not response.any()


def test_cylinder_centerline_stands_out(cylinder):
    response = vesselness(cylinder)
    assert response.min() >= 0.0
    assert response.max() <= 1.0
    centerline = response[8:-8, 31:33, 31:33].mean()
    far_field = response[8:-8, :8, :8].mean()
    assert centerline > 0.1
    assert centerline >= 5 * far_field


def test_axis_permutation_equivariance(cylinder):
    response = vesselness(cylinder)
    permuted = vesselness(np.transpose(cylinder, (2, 0, 1)))
    expected = np.transpose(response, (2, 0, 1))
    rms = np.sqrt(np.mean((permuted - expected) ** 2))
    assert rms <= 0.05 * np.sqrt(np.mean(expected**2))


def test_dark_tube_needs_polarity_flag(cylinder):
    dark = 1.0 - cylinder
    assert vesselness(dark).max() == pytest.approx(0.0, abs=1e-6)
    flipped = vesselness(dark, VesselnessParams(bright_on_dark=False))
    assert flipped[8:-8, 31:33, 31:33].mean() > 0.1


def test_symmetric_eigenvalues_match_numpy(rng):
    a = rng.normal(size=(200, 3, 3))
    sym = a + np.transpose(a, (0, 2, 1))
    eig = symmetric_eigenvalues(
        sym[:, 0, 0], sym[:, 1, 1], sym[:, 2, 2], sym[:, 0, 1], sym[:, 0, 2], sym[:, 1, 2]
    )
    reference = np.linalg.eigvalsh(sym)
    reference = np.take_along_axis(reference, np.argsort(np.abs(reference), axis=-1), axis=-1)
    np.testing.assert_allclose(eig, reference, atol=1e-8)


def test_eigenvalues_of_scalar_matrix():
    eig = symmetric_eigenvalues(2.0, 2.0, 2.0, 0.0, 0.0, 0.0)
    np.testing.assert_allclose(eig, [2.0, 2.0, 2.0])


def test_hessian_eigen_shape(cylinder):
    eig = hessian_eigen(cylinder[:16, :16, :16], 2.0)
    assert eig.shape == (16, 16, 16, 3)
    assert eig.dtype == np.float32
    assert (np.abs(eig[..., 0]) <= np.abs(eig[..., 2]) + 1e-6).all()


def test_gaussian_smooth_keeps_constant():
    out = gaussian_smooth(np.full((10, 10, 10), 3.0), 1.5)
    np.testing.assert_allclose(out, 3.0, rtol=1e-6)


def test_gaussian_smooth_impulse_matches_continuous_peak():
    impulse = np.zeros((33, 33, 33))
    impulse[16, 16, 16] = 1.0
    out = gaussian_smooth(impulse, 2.0)
    assert out[16, 16, 16] == pytest.approx((2 * np.pi * 2.0**2) ** -1.5, rel=0.02)
    assert out.sum() == pytest.approx(1.0, rel=1e-4)
    assert np.unravel_index(out.argmax(), out.shape) == (16, 16, 16)


def test_non_positive_sigma():
    with pytest.raises(ValueError, match="sigma"):
        gaussian_smooth(np.zeros((4, 4, 4)), 0.0)


def test_params_validation():
    with pytest.raises(pydantic.ValidationError):
        VesselnessParams(scales=[])
    with pytest.raises(pydantic.ValidationError):
        VesselnessParams(c=-1.0)
