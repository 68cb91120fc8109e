import json

import numpy as np
import pytest
from PIL import Image

from idmfuse.errors import InvariantError, SceneFormatError
from idmfuse.raster import (
    SceneMetadata,
    as_multiband,
    as_raster,
    export_preview,
    grid_offsets,
    has_truth,
    load_scene,
    load_truth,
    read_header,
    save_scene,
    to_bytes,
)


def _write_raw(path, w, h, bands, ratio, bit_depth, pan_vals, ms_vals):
    path.mkdir(parents=True, exist_ok=True)
    header = {"width": w, "height": h, "bands": bands, "ratio": ratio, "bit_depth": bit_depth}
    (path / "scene.json").write_text(json.dumps(header))
    np.asarray(pan_vals, dtype="<f4").tofile(path / "pan.f32")
    np.asarray(ms_vals, dtype="<f4").tofile(path / "ms.f32")


def test_raw_header_sizes(tmp_path):
    w = h = 256
    _write_raw(tmp_path, w, h, 4, 4, 11, np.zeros(1024 * 1024), np.zeros(4 * w * h))
    pan, ms, meta = load_scene(tmp_path)
    assert pan.shape == (1024, 1024)
    assert ms.shape == (4, 256, 256)
    assert meta.ratio == 4 and meta.bit_depth == 11


def test_truncated_payload_names_file(tmp_path):
    _write_raw(tmp_path, 8, 8, 4, 4, 11, np.zeros(32 * 32), np.zeros(4 * 64 - 1))
    with pytest.raises(SceneFormatError, match="ms.f32"):
        load_scene(tmp_path)


def test_missing_payload(tmp_path):
    _write_raw(tmp_path, 8, 8, 4, 4, 11, np.zeros(32 * 32), np.zeros(4 * 64))
    (tmp_path / "pan.f32").unlink()
    with pytest.raises(SceneFormatError, match="pan.f32"):
        load_scene(tmp_path)


def test_max_dn_normalizes_to_one(tmp_path):
    _write_raw(tmp_path, 2, 2, 2, 2, 11, np.full(16, 2047.0), np.full(8, 2047.0))
    pan, ms, _ = load_scene(tmp_path)
    assert np.all(pan == 1.0) and np.all(ms == 1.0)


def test_nonfinite_payload_rejected(tmp_path):
    ms = np.zeros(8)
    ms[3] = np.nan
    _write_raw(tmp_path, 2, 2, 2, 2, 11, np.zeros(16), ms)
    with pytest.raises(SceneFormatError, match="non-finite"):
        load_scene(tmp_path)


def test_save_load_round_trip(tmp_path, rng, meta4):
    # values on the DN lattice survive the float32 payload exactly
    pan = rng.integers(0, 2048, size=(32, 32)) / 2047.0
    ms = rng.integers(0, 2048, size=(4, 8, 8)) / 2047.0
    save_scene(pan, ms, meta4, tmp_path)
    pan2, ms2, meta2 = load_scene(tmp_path)
    np.testing.assert_array_equal(pan2, pan)
    np.testing.assert_array_equal(ms2, ms)
    assert meta2 == meta4
    assert not has_truth(tmp_path)


def test_save_load_is_idempotent(tmp_path, rng, meta4):
    save_scene(rng.random((32, 32)), rng.random((4, 8, 8)), meta4, tmp_path / "a")
    pan, ms, meta = load_scene(tmp_path / "a")
    save_scene(pan, ms, meta, tmp_path / "b")
    pan2, ms2, _ = load_scene(tmp_path / "b")
    np.testing.assert_array_equal(pan, pan2)
    np.testing.assert_array_equal(ms, ms2)


def test_truth_round_trip(tmp_path, rng, meta4):
    truth = rng.integers(0, 2048, size=(4, 32, 32)) / 2047.0
    save_scene(rng.random((32, 32)), rng.random((4, 8, 8)), meta4, tmp_path, truth=truth)
    assert has_truth(tmp_path)
    assert read_header(tmp_path)["truth"] is True
    np.testing.assert_array_equal(load_truth(tmp_path), truth)


def test_save_single_band_rejected(tmp_path):
    meta = SceneMetadata.default(1, ratio=4)
    with pytest.raises(InvariantError):
        save_scene(np.zeros((32, 32)), np.zeros((1, 8, 8)), meta, tmp_path)


def test_save_band_size_mismatch_rejected(tmp_path, meta4):
    bands = [np.zeros((8, 8))] * 3 + [np.zeros((8, 7))]
    with pytest.raises(InvariantError):
        save_scene(np.zeros((32, 32)), bands, meta4, tmp_path)


def test_pan_ms_ratio_mismatch_rejected(tmp_path, meta4):
    with pytest.raises(InvariantError):
        save_scene(np.zeros((30, 32)), np.zeros((4, 8, 8)), meta4, tmp_path)


@pytest.mark.parametrize("gain", [0.0, 1.0, -0.1])
def test_nyquist_gain_bounds(gain):
    with pytest.raises(InvariantError):
        SceneMetadata(ms_nyquist_gains=[gain] * 4)


def test_raster_validation():
    with pytest.raises(InvariantError):
        as_raster(np.zeros(4))
    with pytest.raises(InvariantError):
        as_raster(np.array([[1.0, np.inf]]))
    with pytest.raises(InvariantError):
        as_multiband(np.zeros((1, 4, 4)))


@pytest.mark.parametrize("x, byte", [(0.5, 128), (1.2, 255), (-0.3, 0), (0.0, 0), (1.0, 255)])
def test_to_bytes(x, byte):
    assert to_bytes(np.array([x]))[0] == byte


def test_export_preview_ppm(tmp_path, rng):
    ms = rng.random((4, 5, 6))
    export_preview(ms, [2, 1, 0], tmp_path / "p.ppm")
    img = np.asarray(Image.open(tmp_path / "p.ppm"))
    assert img.shape == (5, 6, 3)
    np.testing.assert_array_equal(img[..., 0], to_bytes(ms[2]))
    np.testing.assert_array_equal(img[..., 2], to_bytes(ms[0]))


def test_export_preview_png(tmp_path, rng):
    ms = rng.random((4, 5, 6))
    export_preview(ms, [0, 1, 3], tmp_path / "p.png")
    img = np.asarray(Image.open(tmp_path / "p.png"))
    np.testing.assert_array_equal(img[..., 2], to_bytes(ms[3]))


def test_export_preview_bad_band(tmp_path, rng):
    with pytest.raises(InvariantError):
        export_preview(rng.random((4, 5, 6)), [4, 1, 0], tmp_path / "p.png")


@pytest.mark.parametrize("n, size, stride, want", [
    (16, 8, 4, [0, 4, 8]),
    (16, 8, 8, [0, 8]),
    (10, 8, 4, [0, 2]),
    (8, 8, 3, [0]),
    (67, 8, 3, list(range(0, 60, 3)) + [59]),
])
def test_grid_offsets(n, size, stride, want):
    assert grid_offsets(n, size, stride) == want
