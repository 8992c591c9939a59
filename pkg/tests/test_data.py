import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from tsan.data import (
    DatasetManifest,
    ImageIOError,
    bicubic_resize,
    crop_to_multiple,
    cubic,
    degrade,
    dihedral,
    make_dataset,
    read_png,
    resize_weights,
    sample_patch,
    synthetic_image,
    write_png,
    write_synthetic_corpus,
)


def direct_resize(img, out_w, out_h):
    """Non-separable oracle: evaluate the 2-D kernel for every output/input pixel pair."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    sy, sx = out_h / h, out_w / w
    for oy in range(out_h):
        for ox in range(out_w):
            cy, cx = (oy + 0.5) / sy - 0.5, (ox + 0.5) / sx - 0.5
            ky, kx = min(sy, 1.0), min(sx, 1.0)
            acc = norm = 0.0
            for iy in range(int(np.floor(cy - 2 / ky)) + 1, int(np.ceil(cy + 2 / ky)) + 1):
                for ix in range(int(np.floor(cx - 2 / kx)) + 1, int(np.ceil(cx + 2 / kx)) + 1):
                    wgt = cubic((iy - cy) * ky) * cubic((ix - cx) * kx)
                    acc += wgt * img[min(max(iy, 0), h - 1), min(max(ix, 0), w - 1)]
                    norm += wgt
            out[oy, ox] = acc / norm
    return out


# --- PNG I/O -------------------------------------------------------------------------


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (7, 5, 3), dtype=np.uint8)
    write_png(img, tmp_path / "a.png")
    np.testing.assert_array_equal(read_png(tmp_path / "a.png"), img)


def test_one_pixel_roundtrip(tmp_path):
    img = np.array([[[1, 2, 3]]], dtype=np.uint8)
    write_png(img, tmp_path / "p.png")
    np.testing.assert_array_equal(read_png(tmp_path / "p.png"), img)


def test_grayscale_and_rgba_are_expanded(tmp_path):
    Image.fromarray(np.full((3, 4), 77, np.uint8), "L").save(tmp_path / "g.png")
    g = read_png(tmp_path / "g.png")
    assert g.shape == (3, 4, 3) and np.all(g == 77)
    rgba = np.zeros((2, 2, 4), np.uint8)
    rgba[..., 0], rgba[..., 3] = 200, 10
    Image.fromarray(rgba, "RGBA").save(tmp_path / "a.png")
    assert np.all(read_png(tmp_path / "a.png")[..., 0] == 200)


def test_png_errors_carry_path(tmp_path):
    with pytest.raises(ImageIOError, match="missing.png"):
        read_png(tmp_path / "missing.png")
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(ImageIOError, match="bad.png"):
        read_png(tmp_path / "bad.png")
    Image.fromarray(np.zeros((2, 2), np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(ImageIOError, match="deep.png"):
        read_png(tmp_path / "deep.png")


# --- bicubic ------------------------------------------------------------------------------


def test_cubic_kernel_values():
    assert cubic(0.0) == 1 and cubic(1.0) == 0 and cubic(2.0) == 0
    assert cubic(0.5) == pytest.approx(0.5625)
    assert cubic(1.5) == pytest.approx(-0.0625)


def test_constant_image_stays_constant():
    img = np.full((7, 9, 3), 42.5)
    for w, h in [(18, 14), (3, 4), (9, 7), (5, 11)]:
        np.testing.assert_allclose(bicubic_resize(img, w, h), 42.5, atol=1e-9)


def test_same_size_is_identity():
    img = np.random.default_rng(1).normal(size=(6, 5))
    np.testing.assert_array_equal(bicubic_resize(img, 5, 6), img)


def test_impulse_upscaled_by_two_hits_quarter_offsets():
    x = np.zeros(9)
    x[4] = 1.0
    w = resize_weights(9, 18)
    resp = w[:, 4]
    # output pixel j sits at input coordinate (j + 0.5) / 2 - 0.5
    for j in (7, 8, 9, 10, 6, 11):
        offset = (j + 0.5) / 2 - 0.5 - 4
        assert resp[j] == pytest.approx(float(cubic(offset)), abs=1e-12)
    assert {abs((j + 0.5) / 2 - 0.5 - 4) for j in (8, 9)} == {0.25}
    assert {abs((j + 0.5) / 2 - 0.5 - 4) for j in (7, 10)} == {0.75}


@pytest.mark.parametrize("shape,out", [((6, 7), (12, 14)), ((12, 9), (4, 3)), ((5, 8), (7, 5)), ((1, 4), (3, 2))])
def test_bicubic_matches_direct_oracle(shape, out):
    img = np.random.default_rng(2).uniform(0, 255, shape)
    np.testing.assert_allclose(bicubic_resize(img, out[1], out[0]), direct_resize(img, out[1], out[0]), atol=1e-4)


# --- datasets ------------------------------------------------------------------------------


def test_crop_and_degrade_extents():
    hr = np.zeros((100, 99, 3), np.uint8)
    assert crop_to_multiple(hr, 3).shape == (99, 99, 3)
    assert degrade(np.zeros((100, 100, 3), np.uint8), 3).shape == (33, 33, 3)


def test_make_dataset_manifest(tmp_path):
    write_synthetic_corpus(tmp_path / "hr", 3, 40, 30, seed=1)
    m = make_dataset(tmp_path / "hr", 2, tmp_path / "out")
    assert len(m.pairs) == 3
    raw = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(raw) >= {"scale", "rgb_mean", "pairs"}
    loaded = DatasetManifest.load(tmp_path / "out" / "manifest.json")
    assert loaded == m
    for lr, hr in loaded.load_pairs():
        assert hr.shape == (2 * lr.shape[0], 2 * lr.shape[1], 3)


def test_make_dataset_scale3_odd_extent(tmp_path):
    (tmp_path / "hr").mkdir()
    write_png(np.zeros((100, 99, 3), np.uint8), tmp_path / "hr" / "a.png")
    m = make_dataset(tmp_path / "hr", 3, tmp_path / "out")
    lr, hr = m.load_pairs()[0]
    assert hr.shape[:2] == (99, 99) and lr.shape[:2] == (33, 33)


def test_rgb_mean_of_uniform_gray(tmp_path):
    (tmp_path / "hr").mkdir()
    write_png(np.full((8, 8, 3), 128, np.uint8), tmp_path / "hr" / "g.png")
    assert make_dataset(tmp_path / "hr", 2, tmp_path / "o").rgb_mean == (128.0, 128.0, 128.0)


def test_make_dataset_errors(tmp_path):
    with pytest.raises(ImageIOError):
        make_dataset(tmp_path / "nope", 2, tmp_path / "o")
    (tmp_path / "empty").mkdir()
    with pytest.raises(ImageIOError):
        make_dataset(tmp_path / "empty", 2, tmp_path / "o")


def test_manifest_errors(tmp_path):
    with pytest.raises(ImageIOError):
        DatasetManifest.load(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ImageIOError):
        DatasetManifest.load(tmp_path / "bad.json")
    (tmp_path / "partial.json").write_text('{"scale": 2}')
    with pytest.raises(ImageIOError):
        DatasetManifest.load(tmp_path / "partial.json")


# --- patches -----------------------------------------------------------------------------------


def _pair(seed=0, h=60, w=52, r=2):
    rng = np.random.default_rng(seed)
    hr = synthetic_image(h * r, w * r, rng)
    return degrade(hr, r), hr


def test_patch_without_augment_is_raw_crop():
    lr, hr = _pair()
    p = sample_patch((lr, hr), np.random.default_rng(3), augment=False, patch=16)
    assert p.transform == 0
    hits = [(y, x) for y in range(lr.shape[0] - 15) for x in range(lr.shape[1] - 15)
            if np.array_equal(lr[y:y + 16, x:x + 16], p.lr)]
    assert any(np.array_equal(hr[2 * y:2 * y + 32, 2 * x:2 * x + 32], p.hr) for y, x in hits)


def test_patch_too_small_rejected():
    lr, hr = _pair(h=10, w=10)
    with pytest.raises(ValueError):
        sample_patch((lr, hr), np.random.default_rng(0), patch=48)


@settings(max_examples=20, deadline=None)
@given(k=st.integers(0, 7))
def test_dihedral_is_applied_identically(k):
    lr, hr = _pair(1, 20, 20)
    a, b = dihedral(lr, k), dihedral(hr, k)
    assert b.shape[:2] == (2 * a.shape[0], 2 * a.shape[1])
    np.testing.assert_array_equal(dihedral(dihedral(lr, 4), 4), lr)


def test_dihedral_transforms_are_distinct():
    img = np.arange(12).reshape(3, 4, 1)
    outs = {dihedral(img, k).tobytes() + bytes(dihedral(img, k).shape) for k in range(8)}
    assert len(outs) == 8


def test_transform_frequencies_uniform():
    lr, hr = _pair(2, 20, 20)
    rng = np.random.default_rng(4)
    counts = np.bincount([sample_patch((lr, hr), rng, patch=8).transform for _ in range(10_000)], minlength=8)
    assert np.all(np.abs(counts / 10_000 - 0.125) < 0.02)


def test_lr_hr_windows_align():
    lr, hr = _pair(3, 60, 60)
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = sample_patch((lr, hr), rng, patch=24)
        up = bicubic_resize(p.lr.astype(float), 48, 48)
        assert np.all(np.abs(up.mean(axis=(0, 1)) - p.hr.astype(float).mean(axis=(0, 1))) < 2.0)
