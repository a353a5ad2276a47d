# tests/test_features.py

import numpy as np
import pytest

from services.features import (
    BASIC_COLOR_NAMES, COLOR_TABLE_COLS, COLOR_TABLE_ROWS, FeatureError, PatchSpec, build_color_table,
    cn_feature, color_table_row, crop_patch, extract_features, hog_feature, load_color_table,
    resolve_color_table_path, save_color_table,
)
import services.features as features


def test_crop_patch_identity_and_replication():
    pixels = np.arange(10 * 12 * 3, dtype=np.uint8).reshape(10, 12, 3)
    patch = crop_patch(pixels, PatchSpec(center=(6, 5), size=(12, 10), target=(12, 10)))
    np.testing.assert_array_equal(patch, pixels.astype(float))

    corner = crop_patch(pixels, PatchSpec(center=(0, 0), size=(4, 4), target=(4, 4)))
    # top-left quadrant repeats the (0, 0) pixel
    np.testing.assert_array_equal(corner[:2, :2], np.broadcast_to(pixels[0, 0].astype(float), (2, 2, 3)))
    np.testing.assert_array_equal(corner[2:, 2:], pixels[:2, :2].astype(float))


def test_crop_patch_bilinear_resize_preserves_mean():
    ramp = np.tile(np.arange(16, dtype=np.uint8)[None, :, None] * 10, (16, 1, 3))
    patch = crop_patch(ramp, PatchSpec(center=(8, 8), size=(16, 16), target=(8, 8)))
    assert patch.shape == (8, 8, 3)
    # mirror pairs sum to the same value on a linear ramp
    sums = patch[0, :, 0] + patch[0, ::-1, 0]
    np.testing.assert_allclose(sums, sums[0], atol=1e-6)


def test_crop_patch_samples_fractional_scale_exactly():
    # on a linear ramp bilinear sampling is exact, so the values reveal the sample positions
    ramp = np.tile((2.0 * np.arange(100, dtype=np.float32))[None, :, None], (20, 1, 3))
    patch = crop_patch(ramp, PatchSpec(center=(50, 10), size=(102, 4), target=(100, 4)))
    u = np.arange(2, 98)
    np.testing.assert_allclose(patch[1, 2:98, 0], 2.0 * (50 + (u - 50) * 1.02), atol=0.05)


def test_crop_patch_scales_about_the_center():
    ramp = np.tile((2.0 * np.arange(100, dtype=np.float32))[None, :, None], (20, 1, 3))
    for size in (64.0, 65.28, 62.75):
        patch = crop_patch(ramp, PatchSpec(center=(50, 10), size=(size, 4), target=(64, 4)))
        assert patch[0, 32, 0] == pytest.approx(100.0, abs=1e-3)


def test_patch_spec_rejects_non_positive():
    with pytest.raises(FeatureError):
        PatchSpec(center=(0, 0), size=(0, 4), target=(4, 4))


def test_extract_features_shapes_and_window(rng):
    patch = rng.integers(0, 256, size=(32, 24, 3)).astype(float)
    fmap = extract_features(patch, 4, ("gray", "hog"))
    assert fmap.shape == (8, 6, 32)
    assert fmap.channels[0] == "gray0" and fmap.channels[-1] == "hog30"
    windowed = extract_features(patch, 4, ("hog", "gray"), window=True)
    # group order is fixed regardless of the requested order
    assert windowed.channels == fmap.channels
    assert np.all(windowed.data[0] == 0) and np.all(windowed.data[:, 0] == 0)


def test_extract_features_errors(rng):
    patch = rng.integers(0, 256, size=(30, 24, 3)).astype(float)
    with pytest.raises(FeatureError):
        extract_features(patch, 4, ("gray",))
    with pytest.raises(FeatureError):
        extract_features(patch[:28], 4, ("depth",))


def test_gray_feature_range():
    white = np.full((8, 8, 3), 255.0)
    black = np.zeros((8, 8, 3))
    assert extract_features(white, 4, ("gray",)).data == pytest.approx(0.5)
    assert extract_features(black, 4, ("gray",)).data == pytest.approx(-0.5)


def test_hog_flat_patch_is_zero_and_edges_respond():
    assert np.allclose(hog_feature(np.full((16, 16, 3), 90.0), 4), 0.0)
    edge = np.zeros((16, 16, 3))
    edge[:, 8:] = 255.0
    h = hog_feature(edge, 4)
    assert h.shape == (4, 4, 31)
    assert np.all(h >= 0)
    # a vertical edge fires the horizontal-gradient bin (0) of the cells on the edge
    assert h[1, 1, 0] > 0 and h[1, 1, 0] == h[1, 1, :18].max()
    assert np.allclose(h[:, 0, :27], 0.0)


def test_hog_truncation_bound(rng):
    h = hog_feature(rng.integers(0, 256, size=(24, 24, 3)).astype(float), 4)
    # each contrast-sensitive entry is half a sum of four values truncated at 0.2
    assert h[..., :27].max() <= 0.4 + 1e-12


def test_color_table_build_save_load(tmp_path):
    table = build_color_table()
    assert table.shape == (COLOR_TABLE_ROWS, COLOR_TABLE_COLS)
    assert np.all(table >= 0) and np.all(table.sum(axis=1) <= 1.0 + 1e-5)
    path = save_color_table(table, str(tmp_path / "cn.bin"))
    loaded = load_color_table(path)
    np.testing.assert_allclose(loaded, table, rtol=0, atol=0)
    # pure black maps to the black prototype
    assert np.argmax(loaded[0]) == 0


def test_cn_feature_uses_table_rows(tmp_path):
    table = np.zeros((COLOR_TABLE_ROWS, COLOR_TABLE_COLS), dtype=np.float32)
    index = 255 // 8 + 32 * (0 // 8) + 1024 * (64 // 8)
    table[index, 3] = 1.0
    patch = np.zeros((4, 4, 3))
    patch[...] = (255, 0, 64)
    out = cn_feature(patch, 4, table.astype(float))
    assert out.shape == (1, 1, 10)
    assert out[0, 0, 3] == 1.0 and out.sum() == 1.0

    path = save_color_table(table, str(tmp_path / "t.bin"))
    fmap = extract_features(patch, 4, ("cn",), color_table=path)
    assert fmap.data[0, 0, 3] == 1.0


def test_missing_color_table_is_an_error(tmp_path):
    with pytest.raises(FeatureError, match="missing"):
        load_color_table(str(tmp_path / "absent.bin"))
    bad = tmp_path / "short.bin"
    np.zeros(10, dtype="<f4").tofile(bad)
    with pytest.raises(FeatureError):
        load_color_table(str(bad))


def test_color_table_path_resolution(monkeypatch):
    monkeypatch.setenv("KAOT_COLOR_TABLE", "/tmp/from_env.bin")
    assert resolve_color_table_path() == "/tmp/from_env.bin"
    assert resolve_color_table_path("/x.bin") == "/x.bin"


def test_all_groups_give_42_channels(tmp_path, rng):
    path = save_color_table(build_color_table(), str(tmp_path / "cn.bin"))
    patch = rng.integers(0, 256, size=(16, 16, 3)).astype(float)
    fmap = extract_features(patch, 4, ("gray", "hog", "cn"), color_table=path)
    assert fmap.depth == 42
    assert np.all(np.isfinite(fmap.data))


def test_hog_shift_by_one_cell_shifts_interior(rng):
    patch = rng.integers(0, 256, size=(32, 32, 3)).astype(float)
    shifted = np.roll(patch, 4, axis=1)
    a = hog_feature(patch, 4)
    b = hog_feature(shifted, 4)
    np.testing.assert_allclose(b[2:-2, 3:6], a[2:-2, 2:5], atol=1e-12)


@pytest.mark.parametrize("rgb, name", [
    ((255, 0, 0), "red"),
    ((0, 0, 255), "blue"),
    ((128, 0, 128), "purple"),
    ((0, 128, 0), "green"),
    ((128, 128, 128), "grey"),
])
def test_color_table_names_basic_colors(rgb, name):
    table = build_color_table()
    row = table[color_table_row(*rgb)]
    assert np.argmax(row) == BASIC_COLOR_NAMES.index(name)
    assert row.max() > 0.5


def test_color_table_rewritten_in_place_is_reloaded(tmp_path):
    path = str(tmp_path / "cn.bin")
    first = np.zeros((COLOR_TABLE_ROWS, COLOR_TABLE_COLS), dtype=np.float32)
    save_color_table(first, path)
    assert load_color_table(path).max() == 0.0
    save_color_table(first + 0.5, path)
    assert load_color_table(path).min() == 0.5


def test_default_color_table_is_materialized(tmp_path, monkeypatch):
    default = tmp_path / "resources" / "color_names.bin"
    monkeypatch.setattr(features, "DEFAULT_COLOR_TABLE", str(default))
    monkeypatch.delenv("KAOT_COLOR_TABLE", raising=False)
    table = load_color_table(resolve_color_table_path())
    assert default.is_file()
    np.testing.assert_array_equal(table, build_color_table().astype(np.float64))
