import math

import numpy as np
import pytest

from navattack.embedding import (
    AlignmentConfig,
    ImageTensor,
    ToyEncoder,
    align_to_embedding,
    alignment_gradient,
    alignment_loss,
    calibrate_l2_threshold,
    cosine_similarity,
    encode_image,
    encode_text,
    encoder_from_spec,
    encoder_spec,
    noise_response,
)
from navattack.errors import ConfigError, InputError, OptimizationFailure, UndefinedSimilarityError
from navattack.metrics import ssim


def _random_image(seed, low=0.0, high=1.0, shape=(32, 32, 3)):
    return ImageTensor(np.random.default_rng(seed).uniform(low, high, size=shape))


def test_half_grey_image_encodes_to_zero(encoder):
    emb = encode_image(encoder, ImageTensor.filled(0.5))
    assert emb.shape == (64,)
    assert np.all(emb == 0.0)


def test_same_parameters_give_bit_identical_weights():
    a, b = ToyEncoder(seed=5), ToyEncoder(seed=5)
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
    assert not np.array_equal(a.w1, ToyEncoder(seed=6).w1)


def test_encode_image_matches_forward_formula(encoder):
    img = _random_image(1)
    x = img.pixels.astype(np.float64).reshape(-1)
    hidden = np.tanh(np.einsum("hm,m->h", encoder.w1, x - 0.5))
    expected = np.einsum("nh,h->n", encoder.w2, hidden)
    np.testing.assert_allclose(encode_image(encoder, img), expected, rtol=1e-12, atol=1e-14)


def test_encode_image_is_deterministic(encoder):
    img = _random_image(2)
    assert np.array_equal(encode_image(encoder, img), encode_image(encoder, img))


def test_encode_image_rejects_wrong_size(encoder):
    with pytest.raises(InputError):
        encode_image(encoder, ImageTensor.filled(0.5, (8, 8, 3)))


def test_image_tensor_rejects_out_of_range_pixels():
    with pytest.raises(InputError):
        ImageTensor(np.full((2, 2, 3), 1.5))
    with pytest.raises(InputError):
        ImageTensor(np.zeros((4, 4)))


def test_encoder_spec_round_trip(encoder):
    rebuilt = encoder_from_spec(encoder_spec(encoder), encoder.image_shape)
    assert np.array_equal(rebuilt.w1, encoder.w1)
    with pytest.raises(InputError):
        encoder_from_spec(encoder_spec(encoder), (8, 8, 3))


def test_cosine_similarity_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0)
    assert cosine_similarity(v, -v) == pytest.approx(-1.0)
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_similarity_of_zero_vector_is_undefined():
    with pytest.raises(UndefinedSimilarityError):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(InputError):
        cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def test_alignment_loss_examples(encoder):
    img = _random_image(3)
    target = encode_image(encoder, img)
    assert alignment_loss(encoder, img, target) == 0.0
    shifted = target.copy()
    shifted[0] += 1.0
    assert alignment_loss(encoder, img, shifted) == pytest.approx(0.5, rel=1e-12)


def test_alignment_loss_matches_independent_recomputation(encoder):
    img = _random_image(4)
    target = np.random.default_rng(4).standard_normal(64)
    x = img.pixels.astype(np.float64).reshape(-1)
    f = encoder.w2 @ np.tanh(encoder.w1 @ (x - 0.5))
    expected = 0.5 * sum((fi - ti) ** 2 for fi, ti in zip(f, target))
    assert alignment_loss(encoder, img, target) == pytest.approx(expected, rel=1e-12)


def test_gradient_vanishes_at_the_target(encoder):
    img = _random_image(5)
    grad = alignment_gradient(encoder, img, encode_image(encoder, img))
    assert grad.shape == img.shape
    assert np.all(grad == 0.0)


def test_gradient_matches_central_differences(encoder):
    rng = np.random.default_rng(11)
    h = 1e-5
    for trial in range(5):
        x = rng.uniform(0.0, 1.0, size=encoder.image_shape)
        target = rng.standard_normal(encoder.output_dim) * 0.5
        grad = alignment_gradient(encoder, x, target)
        for flat_index in rng.choice(x.size, size=20, replace=False):
            idx = np.unravel_index(flat_index, x.shape)
            plus, minus = x.copy(), x.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric = (alignment_loss(encoder, plus, target) - alignment_loss(encoder, minus, target)) / (2 * h)
            analytic = grad[idx]
            assert abs(analytic - numeric) / max(abs(analytic), 1e-8) < 1e-4


def test_alignment_fixed_point_returns_input(encoder):
    img = _random_image(6)
    cfg = AlignmentConfig(learning_rate=0.05, max_steps=10, l2_threshold=1e-3)
    out, trace = align_to_embedding(encoder, img, encode_image(encoder, img), cfg)
    assert out.same_bits(img)
    assert trace.converged and trace.steps == 1
    assert trace.final.step == 0 and trace.initial == trace.final


def test_alignment_reaches_a_different_image_embedding(encoder):
    source = _random_image(7)
    target = encode_image(encoder, _random_image(8))
    start_distance = np.linalg.norm(encode_image(encoder, source) - target)
    cfg = AlignmentConfig(learning_rate=0.05, max_steps=3000,
                          l2_threshold=0.05 * start_distance, cos_threshold=0.95)
    out, trace = align_to_embedding(encoder, source, target, cfg)

    assert trace.converged
    assert trace.steps <= cfg.max_steps
    assert cosine_similarity(encode_image(encoder, out), target) >= 0.95
    assert ssim(source, out) >= 0.9
    assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    losses = trace.losses()
    assert all(math.isfinite(v) for v in losses)
    non_increasing = sum(1 for a, b in zip(losses, losses[1:]) if b <= a)
    assert non_increasing >= 0.95 * (len(losses) - 1)


def test_stop_predicate_ends_alignment_early(encoder):
    source = _random_image(9)
    target = encode_image(encoder, _random_image(10))
    cfg = AlignmentConfig(learning_rate=0.05, max_steps=3000, l2_threshold=0.0)
    _, trace = align_to_embedding(encoder, source, target, cfg,
                                  stop_when=lambda emb: np.linalg.norm(emb - target) < 1.0)
    assert trace.converged
    assert trace.final.distance < 1.0
    assert trace.steps < 3000


def test_trace_records_every_update_up_to_max_steps(encoder):
    source = _random_image(11)
    target = encode_image(encoder, _random_image(12))
    cfg = AlignmentConfig(learning_rate=0.05, max_steps=7, l2_threshold=0.0, cos_threshold=1.0)
    out, trace = align_to_embedding(encoder, source, target, cfg)
    assert trace.status == "max_steps_reached"
    assert [r.step for r in trace.records] == list(range(1, 8))
    assert trace.initial.step == 0
    assert trace.initial.loss == pytest.approx(alignment_loss(encoder, source, target), rel=1e-12)
    # the last record describes the returned image, not the one before the final update
    assert trace.final.loss == pytest.approx(alignment_loss(encoder, out, target), rel=1e-5)
    assert trace.summary()["initial_loss"] == trace.initial.loss
    assert trace.summary()["steps"] == 7


class _ExplodingEncoder(ToyEncoder):
    def backward(self, x, cotangent):
        return np.full(x.shape, np.inf)


def test_non_finite_loss_raises_with_trace():
    enc = _ExplodingEncoder(seed=3)
    source = _random_image(13)
    target = encode_image(enc, _random_image(14))
    cfg = AlignmentConfig(learning_rate=0.05, max_steps=50, clamp_pixels=False)
    with pytest.raises(OptimizationFailure) as excinfo:
        align_to_embedding(enc, source, target, cfg)
    trace = excinfo.value.trace
    assert trace.initial.step == 0 and math.isfinite(trace.initial.loss)
    assert trace.status != "converged"
    assert "non-finite" in str(excinfo.value)


def test_alignment_config_validation():
    with pytest.raises(ConfigError):
        AlignmentConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        AlignmentConfig(max_steps=0)
    with pytest.raises(ConfigError):
        AlignmentConfig(cos_threshold=1.5)
    boost = AlignmentConfig.boost_defaults(0.03, max_steps=10)
    assert boost.l2_threshold == 0.03 and boost.max_steps == 10


def test_calibrate_l2_threshold(encoder):
    images = [_random_image(s, 0.3, 0.7) for s in range(6)]
    threshold = calibrate_l2_threshold(encoder, images, fraction=0.05)
    assert threshold > 0
    assert calibrate_l2_threshold(encoder, images, fraction=0.1) == pytest.approx(2 * threshold)
    with pytest.raises(InputError):
        calibrate_l2_threshold(encoder, images[:1])


def test_noise_response_vanishes_for_tiny_sigma(encoder):
    img = _random_image(12, 0.3, 0.7)
    assert noise_response(encoder, img, 1e-12, 8, seed=0) < 1e-6


def test_noise_response_grows_with_sigma(encoder):
    img = _random_image(13, 0.3, 0.7)
    sigmas = np.logspace(-6, -1, 10)
    responses = [noise_response(encoder, img, s, 16, seed=1) for s in sigmas]
    violations = sum(1 for a, b in zip(responses, responses[1:]) if b < a)
    assert violations <= 0.05 * (len(responses) - 1)
    assert noise_response(encoder, img, 1e-3, 16, seed=1) == noise_response(encoder, img, 1e-3, 16, seed=1)


def test_noise_response_rejects_zero_trials(encoder):
    with pytest.raises(InputError):
        noise_response(encoder, ImageTensor.filled(0.5), 1e-3, 0, seed=0)


def test_known_landmark_text_matches_noisy_renderings(small_world, world_encoder):
    for label in small_world.landmark_labels:
        text_emb = encode_text(world_encoder, small_world, label)
        nid = next(n for n, gt in small_world.ground_truth.items() if gt == label)
        front = small_world.graph.node(nid).image("front")
        assert cosine_similarity(text_emb, encode_image(world_encoder, front)) >= 0.8


def test_text_encoding_is_deterministic_and_distinct(small_world, world_encoder):
    a = encode_text(world_encoder, small_world, "a purple lamppost")
    b = encode_text(world_encoder, small_world, "a green kiosk")
    assert np.array_equal(a, encode_text(world_encoder, small_world, "a purple lamppost"))
    assert not np.array_equal(a, b)
