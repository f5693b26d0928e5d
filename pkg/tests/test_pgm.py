import numpy as np
import pytest

from sparsemf.errors import (
    CorruptHeaderError,
    NormalizationDegenerateError,
    UnsupportedFormatError,
)
from sparsemf.harness import ingest_image
from sparsemf.pgm import read_pgm, standardize, write_pgm


def test_roundtrip_binary(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(17, 23)).astype(np.uint8)
    path = tmp_path / "img.pgm"
    write_pgm(path, img, binary=True)
    back = read_pgm(path)
    assert back.shape == (17, 23)
    np.testing.assert_array_equal(back, img.astype(float))


def test_roundtrip_plain(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(5, 9)).astype(np.uint8)
    path = tmp_path / "img.pgm"
    write_pgm(path, img, binary=False)
    np.testing.assert_array_equal(read_pgm(path), img.astype(float))


def test_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P2\n# a comment\n2 2 # trailing\n255\n0 1\n2 3\n")
    np.testing.assert_array_equal(read_pgm(path), [[0, 1], [2, 3]])


def test_binary_raster_values(tmp_path):
    path = tmp_path / "b.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 7, 42]))
    np.testing.assert_array_equal(read_pgm(path), [[0, 255], [7, 42]])


def test_wrong_magic(tmp_path):
    path = tmp_path / "x.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(UnsupportedFormatError):
        read_pgm(path)


def test_sixteen_bit_rejected(tmp_path):
    path = tmp_path / "deep.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(UnsupportedFormatError):
        read_pgm(path)


def test_truncated_raster(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
    with pytest.raises(CorruptHeaderError):
        read_pgm(path)


def test_garbage_header(tmp_path):
    path = tmp_path / "g.pgm"
    path.write_bytes(b"P2\ntwo three\n255\n")
    with pytest.raises(CorruptHeaderError):
        read_pgm(path)


def test_empty_file(tmp_path):
    path = tmp_path / "e.pgm"
    path.write_bytes(b"")
    with pytest.raises(CorruptHeaderError):
        read_pgm(path)


def test_value_above_maxval(tmp_path):
    path = tmp_path / "v.pgm"
    path.write_bytes(b"P2\n2 1\n10\n3 11\n")
    with pytest.raises(CorruptHeaderError):
        read_pgm(path)


def test_write_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "w.pgm", np.array([[300.0]]))


class TestStandardize:
    def test_invariants(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(64, 64)).astype(float)
        out = standardize(img)
        assert abs(out.mean()) <= 1e-12
        assert abs(out.var() - 1.0) <= 1e-12

    def test_two_point_image(self):
        img = np.array([[0.0, 255.0], [0.0, 255.0]])
        np.testing.assert_allclose(standardize(img),
                                   [[-1.0, 1.0], [-1.0, 1.0]], atol=1e-12)

    def test_constant_image_degenerate(self):
        with pytest.raises(NormalizationDegenerateError):
            standardize(np.full((4, 4), 7.0))


class TestIngestImage:
    def test_dimensions_and_invariants(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(256, 256)).astype(np.uint8)
        path = tmp_path / "big.pgm"
        write_pgm(path, img)
        obs = ingest_image(path)
        assert obs.shape == (256, 256)
        assert obs.provenance == "image"
        assert abs(obs.v.mean()) <= 1e-12
        assert abs(obs.v.var() - 1.0) <= 1e-12

    def test_no_normalize(self, tmp_path):
        img = np.array([[0, 10], [20, 30]], dtype=np.uint8)
        path = tmp_path / "raw.pgm"
        write_pgm(path, img)
        obs = ingest_image(path, normalize=False)
        np.testing.assert_array_equal(obs.v, img.astype(float))

    def test_per_column(self, tmp_path):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 256, size=(32, 8)).astype(np.uint8)
        path = tmp_path / "col.pgm"
        write_pgm(path, img)
        obs = ingest_image(path, per_column=True)
        np.testing.assert_allclose(obs.v.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(obs.v.std(axis=0), 1.0, atol=1e-12)
