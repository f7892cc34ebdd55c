"""I/O unit tests: byte mapping, PGM support, masks, atomic writes."""

import numpy as np
import pytest
from PIL import Image

from salfuse.errors import InputError
from salfuse.imgio import (
    gray_png_bytes,
    load_gray,
    load_mask,
    load_rgb,
    save_gray_png,
    write_bytes_atomic,
)


def test_byte_value_maps_to_fraction_of_255(tmp_path):
    path = tmp_path / "gray.png"
    Image.fromarray(np.full((3, 3), 128, dtype=np.uint8), mode="L").save(path)
    arr = load_gray(path)
    np.testing.assert_allclose(arr, 128.0 / 255.0, atol=1e-12)
    assert abs(arr[0, 0] - 0.50196) < 1e-4


def test_pgm_maps_are_accepted(tmp_path):
    path = tmp_path / "map.pgm"
    data = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    Image.fromarray(data, mode="L").save(path)
    np.testing.assert_allclose(load_gray(path), data / 255.0, atol=1e-12)


def test_jpeg_images_are_accepted(tmp_path):
    path = tmp_path / "photo.jpg"
    rgb = np.zeros((8, 8, 3), dtype=np.uint8)
    rgb[:, 4:] = 200
    Image.fromarray(rgb, mode="RGB").save(path, quality=95)
    loaded = load_rgb(path)
    assert loaded.shape == (8, 8, 3) and loaded.dtype == np.uint8


def test_mask_treats_any_nonzero_as_foreground(tmp_path):
    path = tmp_path / "mask.png"
    Image.fromarray(np.array([[0, 1], [128, 255]], dtype=np.uint8), mode="L").save(
        path
    )
    np.testing.assert_array_equal(
        load_mask(path), [[False, True], [True, True]]
    )


def test_missing_and_corrupt_files_raise_input_error(tmp_path):
    with pytest.raises(InputError, match="ghost.png"):
        load_rgb(tmp_path / "ghost.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png at all")
    with pytest.raises(InputError, match="bad.png"):
        load_gray(bad)


def test_atomic_write_replaces_without_temp_leftovers(tmp_path):
    target = tmp_path / "nested" / "file.bin"
    write_bytes_atomic(target, b"one")
    write_bytes_atomic(target, b"two")
    assert target.read_bytes() == b"two"
    assert [p.name for p in target.parent.iterdir()] == ["file.bin"]


def test_png_render_quantizes_and_roundtrips(tmp_path):
    arr = np.linspace(0.0, 1.0, 16).reshape(4, 4)
    path = tmp_path / "out.png"
    save_gray_png(path, arr)
    back = load_gray(path)
    assert np.abs(back - arr).max() <= 0.5 / 255.0 + 1e-12
    assert gray_png_bytes(arr) == path.read_bytes()
