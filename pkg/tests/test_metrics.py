import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsan.metrics import PSNR_CAP, EvalReport, format_reports, gaussian_window, psnr, rgb_to_y, ssim


def test_luma_reference_points():
    assert rgb_to_y(np.zeros(3)) == 16.0
    assert rgb_to_y(np.full(3, 255.0)) == pytest.approx(235.0, abs=1e-12)
    assert rgb_to_y(np.array([0.0, 255.0, 0.0])) == pytest.approx(16 + 128.553, abs=1e-12)
    assert rgb_to_y(np.zeros((4, 5, 3))).shape == (4, 5)


def test_psnr_offset_closed_form():
    a = np.zeros((16, 16))
    assert psnr(a, a + 10) == pytest.approx(20 * np.log10(25.5), abs=1e-9)
    assert psnr(a, a + 10) == pytest.approx(28.1308, abs=1e-3)
    assert psnr(a, a + 255) == pytest.approx(0.0, abs=1e-12)


def test_psnr_cap_and_errors():
    a = np.random.default_rng(0).uniform(0, 255, (8, 8))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 1e-9) == PSNR_CAP
    with pytest.raises(ValueError):
        psnr(a, a[:7])
    with pytest.raises(ValueError):
        psnr(a, a, shave=4)


def test_psnr_shave_ignores_border():
    a = np.zeros((10, 10))
    b = a.copy()
    b[0, :] = 255
    assert psnr(a, b, shave=1) == PSNR_CAP
    assert psnr(a, b) < PSNR_CAP


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(0, 255)), arrays(np.float64, (6, 6), elements=st.floats(0, 255)))
def test_psnr_symmetric(a, b):
    assert psnr(a, b) == psnr(b, a)


def test_gaussian_window_normalised():
    g = gaussian_window()
    assert g.size == 11 and g.sum() == pytest.approx(1.0) and np.argmax(g) == 5


def test_ssim_self_is_one():
    x = np.random.default_rng(1).uniform(0, 255, (24, 20))
    assert abs(ssim(x, x) - 1.0) < 1e-9


def test_ssim_inverted_image_is_negative():
    x = np.random.default_rng(2).uniform(0, 255, (24, 24))
    assert ssim(x, 255 - x) < 0


def test_ssim_constant_planes_closed_form():
    c1 = (0.01 * 255) ** 2
    a, b = np.full((12, 12), 50.0), np.full((12, 12), 100.0)
    expected = (2 * 50 * 100 + c1) / (50**2 + 100**2 + c1)
    assert ssim(a, b) == pytest.approx(expected, rel=1e-9)


def test_ssim_rejects_small_or_mismatched():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(ValueError):
        ssim(np.zeros((14, 14)), np.zeros((14, 14)), shave=2)


def test_eval_report_csv():
    rng = np.random.default_rng(3)
    hr = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
    rep = EvalReport(scale=2, shave=2)
    p, s = rep.add("same", hr, hr)
    assert p == PSNR_CAP and s == pytest.approx(1.0)
    rep.add("noisy", np.clip(hr + rng.normal(0, 5, hr.shape), 0, 255), hr)
    lines = rep.to_csv().strip().split("\n")
    assert lines[0] == "name,psnr,ssim" and lines[1].startswith("same,100.0000")
    assert lines[-1].startswith("mean,") and len(lines) == 4
    assert rep.mean_psnr == pytest.approx((rep.rows[0][1] + rep.rows[1][1]) / 2)
    table = format_reports({"a": rep, "b": rep})
    assert "noisy" in table and "a PSNR" in table


def test_empty_report_means_are_nan():
    rep = EvalReport(2, 2)
    assert np.isnan(rep.mean_psnr) and np.isnan(rep.mean_ssim)
