import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from navattack.embedding import ImageTensor
from navattack.errors import InputError
from navattack.metrics import (
    RouteEvalInput,
    RouteEvalReport,
    aggregate_reports,
    evaluate_route,
    gaussian_window,
    landmark_matching_rate,
    mean_psnr,
    path_efficiency,
    psnr,
    ssim,
)


def _reference_ssim(a, b):
    return structural_similarity(a, b, data_range=1.0, channel_axis=-1, gaussian_weights=True,
                                 sigma=1.5, use_sample_covariance=False)


def test_psnr_examples():
    a = np.zeros((8, 8, 3))
    b = np.full((8, 8, 3), 0.1)
    assert psnr(a, a) == math.inf
    assert psnr(a, b) == 20.0
    assert psnr(a, a + 0.05) == pytest.approx(26.0206, abs=1e-4)
    assert psnr(a, b) == psnr(b, a)


def test_ssim_of_identical_images_is_one():
    img = ImageTensor(np.random.default_rng(0).uniform(size=(32, 32, 3)))
    assert ssim(img, img) == 1.0


def test_ssim_matches_skimage():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a = rng.uniform(size=(32, 32, 3))
        b = np.clip(a + rng.normal(0, 0.05, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(_reference_ssim(a, b), abs=1e-6)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_of_constant_images():
    a = np.full((16, 16, 3), 0.6)
    b = np.ones((16, 16, 3))
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    expected = (2 * 0.6 + c1) * c2 / ((0.36 + 1 + c1) * c2)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-9)
    assert ssim(a, b) == pytest.approx(_reference_ssim(a, b), abs=1e-6)


def test_ssim_input_errors():
    with pytest.raises(InputError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
    with pytest.raises(InputError):
        ssim(np.zeros((16, 16, 3)), np.zeros((16, 17, 3)))
    with pytest.raises(InputError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 4, 1)))


def test_gaussian_window_is_normalized():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0)
    assert np.argmax(w) == 5 * 11 + 5


def test_mean_psnr_skips_infinite_values():
    assert mean_psnr([30.0, math.inf, 40.0]) == (35.0, 1)
    assert mean_psnr([math.inf]) == (None, 1)
    assert mean_psnr([]) == (None, 0)


def _route_input(**overrides):
    data = dict(
        clean_traversal=[0, 1, 2],
        attacked_traversal=[0, 4, 5, 6],
        attacked_assignments=[4, 6],
        selected=[4, 6],
        attack_path=[0, 4, 5, 6],
        target=6,
        ground_truth_nodes=[1, 2],
    )
    data.update(overrides)
    return RouteEvalInput(**data)


def test_successful_attack_scores_perfectly():
    report = evaluate_route(_route_input(), diagnosis="arrived")
    assert report == RouteEvalReport(True, 1.0, 1.0, True, "arrived")


def test_null_attack():
    inp = _route_input(attacked_traversal=[0, 1, 2], attacked_assignments=[1, 2])
    report = evaluate_route(inp)
    assert not report.route_modification_success
    assert not report.arrival_success
    assert report.landmark_matching_rate == 0.0
    assert report.path_efficiency == pytest.approx(0.25)


def test_partial_matching_and_duplicates():
    inp = _route_input(attacked_traversal=[0, 4, 4, 5, 3], attacked_assignments=[4, 3])
    assert landmark_matching_rate(inp) == 0.5
    assert path_efficiency(inp) == pytest.approx(0.75)
    assert path_efficiency(_route_input(attacked_traversal=[0, 4, 5, 6, 5, 6])) == 1.0


def test_aggregate_reports():
    reports = [RouteEvalReport(True, 1.0, 1.0, True), RouteEvalReport(False, 0.5, 0.5, False)]
    means = aggregate_reports(reports)
    assert means == {
        "route_modification_success": 0.5,
        "landmark_matching_rate": 0.75,
        "path_efficiency": 0.75,
        "arrival_success": 0.5,
    }
    assert aggregate_reports([])["arrival_success"] == 0.0
    assert reports[0].to_json()["arrival_diagnosis"] is None
