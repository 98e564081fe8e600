import numpy as np
import pydantic
import pytest

from frustumseg.densecrf import CrfParams, mean_field, unary_from_probability
from frustumseg.exceptions import ShapeMismatchError


def all_pairs_mean_field(unary, image, params):
    """Dense reference: explicit N x N kernels over every voxel pair."""
    shape = image.shape
    coords = np.indices(shape).reshape(3, -1).T.astype(np.float64)
    intensity = image.reshape(-1).astype(np.float64)
    dist2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    diff2 = (intensity[:, None] - intensity[None, :]) ** 2

    def normalized(kernel):
        np.fill_diagonal(kernel, 0.0)
        scale = 1.0 / np.sqrt(kernel.sum(axis=1))
        return scale[:, None] * kernel * scale[None, :]

    k_smooth = normalized(np.exp(-dist2 / (2 * params.theta_gamma_vox**2)))
    k_bilateral = normalized(
        np.exp(-dist2 / (2 * params.theta_alpha_vox**2) - diff2 / (2 * params.theta_beta_intensity**2))
    )
    u = unary.reshape(2, -1)
    q = np.exp(-u) / np.exp(-u).sum(axis=0)
    for _ in range(params.iterations):
        pairwise = params.w_smooth * (q @ k_smooth.T) + params.w_bilateral * (q @ k_bilateral.T)
        energy = u + pairwise[::-1]
        e = np.exp(-(energy - energy.min(axis=0)))
        q = e / e.sum(axis=0)
    return q[1].reshape(shape)


@pytest.mark.parametrize("instance", range(20))
def test_window_matches_all_pairs_reference(instance):
    rng = np.random.default_rng(instance)
    image = rng.uniform(0, 255, size=(6, 6, 6))
    probability = rng.uniform(size=(6, 6, 6))
    params = CrfParams(iterations=5, window_radius_vox=5, tolerance=0.0)
    unary = unary_from_probability(probability, params.unary_threshold)

    _, q_fg = mean_field(unary, image, params)
    reference = all_pairs_mean_field(unary, image, params)
    assert np.abs(q_fg - reference).max() <= 1e-5


def test_unary_values():
    unary = unary_from_probability(np.array([[[0.2, 0.7]]]), 0.5)
    assert unary.shape == (2, 1, 1, 2)
    np.testing.assert_allclose(unary[:, 0, 0, 0], [-np.log(0.9), -np.log(0.1)])
    np.testing.assert_allclose(unary[:, 0, 0, 1], [-np.log(0.1), -np.log(0.9)])


def test_without_pairwise_terms_labels_follow_threshold(rng):
    probability = rng.uniform(size=(5, 6, 7))
    params = CrfParams(w_smooth=0.0, w_bilateral=0.0)
    mask, q_fg = mean_field(unary_from_probability(probability, 0.5), np.zeros((5, 6, 7)), params)
    np.testing.assert_array_equal(mask.data, (probability >= 0.5).astype(np.uint8))
    np.testing.assert_allclose(q_fg[probability >= 0.5], 0.9)


def test_isolated_voxel_is_smoothed_away():
    probability = np.zeros((12, 12, 12))
    probability[2:8, 2:8, 2:8] = 1.0
    probability[10, 10, 10] = 1.0
    mask, _ = mean_field(unary_from_probability(probability, 0.5), np.full((12, 12, 12), 100.0))
    assert mask.data[10, 10, 10] == 0
    assert mask.data[4, 4, 4] == 1


def test_marginals_are_probabilities(rng):
    probability = rng.uniform(size=(8, 8, 8))
    _, q_fg = mean_field(unary_from_probability(probability, 0.5), rng.uniform(0, 255, (8, 8, 8)))
    assert q_fg.dtype == np.float64
    assert q_fg.min() >= 0.0
    assert q_fg.max() <= 1.0


def test_marginals_sum_to_one_at_every_iteration(rng):
    probability = rng.uniform(size=(8, 8, 8))
    params = CrfParams(iterations=6, tolerance=0.0)
    seen = []

    def check(iteration, q):
        assert q.shape == (2, 8, 8, 8)
        np.testing.assert_allclose(q.sum(axis=0), 1.0, atol=1e-6)
        seen.append(iteration)

    _, q_fg = mean_field(
        unary_from_probability(probability, 0.5), rng.uniform(0, 255, (8, 8, 8)), params, on_iteration=check
    )
    assert seen == list(range(7))
    assert q_fg.shape == (8, 8, 8)


def test_interior_hole_is_filled():
    probability = np.ones((7, 7, 7))
    probability[3, 3, 3] = 0.0
    image = np.full((7, 7, 7), 100.0)
    unary = unary_from_probability(probability, 0.5)

    mask, q_fg = mean_field(unary, image)
    assert mask.data[3, 3, 3] == 1
    assert mask.count == 343
    # a window of 6 covers every pair in the cube
    full_window = CrfParams(window_radius_vox=6, tolerance=0.0)
    reference = all_pairs_mean_field(unary, image, full_window)
    assert reference[3, 3, 3] > 0.5
    _, q_full = mean_field(unary, image, full_window)
    np.testing.assert_allclose(q_full, reference, atol=1e-5)
    assert q_fg[3, 3, 3] > 0.5


def test_uniform_foreground_stays_foreground():
    probability = np.ones((6, 6, 6))
    mask, _ = mean_field(
        unary_from_probability(probability, 0.5), np.zeros((6, 6, 6)), CrfParams(iterations=50, tolerance=1e-3)
    )
    assert mask.count == 216


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        mean_field(np.zeros((2, 4, 4, 4)), np.zeros((4, 4, 5)))


def test_params_validation():
    with pytest.raises(pydantic.ValidationError):
        CrfParams(theta_beta_intensity=0.0)
    with pytest.raises(pydantic.ValidationError):
        CrfParams(window_radius_vox=0)
