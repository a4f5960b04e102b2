"""Tests for binary PGM/PPM encoding and decoding."""

import numpy as np
import pytest

from curvemrf.pnm import (
    PnmError,
    decode_pgm,
    decode_ppm,
    encode_pgm,
    encode_ppm,
    read_pnm,
    write_pnm,
)


class TestEncode:
    def test_pgm_header_is_canonical(self):
        data = encode_pgm(np.zeros((2, 3), dtype=np.uint8))
        assert data.startswith(b"P5\n3 2\n255\n")
        assert len(data) == len(b"P5\n3 2\n255\n") + 6

    def test_ppm_header_is_canonical(self):
        data = encode_ppm(np.zeros((4, 2, 3), dtype=np.uint8))
        assert data.startswith(b"P6\n2 4\n255\n")
        assert len(data) == len(b"P6\n2 4\n255\n") + 24

    def test_identical_arrays_give_identical_bytes(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(5, 7), dtype=np.uint8)
        assert encode_pgm(img) == encode_pgm(img.copy())

    def test_shape_validation(self):
        with pytest.raises(PnmError):
            encode_pgm(np.zeros((2, 2, 3), dtype=np.uint8))
        with pytest.raises(PnmError):
            encode_ppm(np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(PnmError):
            encode_ppm(np.zeros((2, 2, 4), dtype=np.uint8))


class TestDecode:
    def test_pgm_round_trip(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(9, 4), dtype=np.uint8)
        assert np.array_equal(decode_pgm(encode_pgm(img)), img)

    def test_ppm_round_trip(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(3, 6, 3), dtype=np.uint8)
        assert np.array_equal(decode_ppm(encode_ppm(img)), img)

    def test_decoded_array_is_writable_copy(self):
        img = decode_pgm(encode_pgm(np.zeros((2, 2), dtype=np.uint8)))
        img[0, 0] = 9
        assert img[0, 0] == 9

    def test_comments_and_whitespace(self):
        raster = bytes(range(6))
        data = b"P5 # magic\n# a comment line\n  3\t2 # dims\n255\n" + raster
        img = decode_pgm(data)
        assert img.shape == (2, 3)
        assert np.array_equal(img.ravel(), np.frombuffer(raster, np.uint8))

    def test_bad_magic(self):
        with pytest.raises(PnmError):
            decode_pgm(b"P2\n2 2\n255\n" + bytes(4))
        with pytest.raises(PnmError):
            decode_ppm(encode_pgm(np.zeros((2, 2), dtype=np.uint8)))

    def test_unsupported_maxval(self):
        with pytest.raises(PnmError):
            decode_pgm(b"P5\n2 2\n65535\n" + bytes(8))

    def test_truncated_raster(self):
        with pytest.raises(PnmError):
            decode_pgm(b"P5\n3 3\n255\n" + bytes(5))

    def test_truncated_header(self):
        with pytest.raises(PnmError):
            decode_pgm(b"P5\n3")

    def test_non_numeric_header(self):
        with pytest.raises(PnmError):
            decode_pgm(b"P5\nthree 2\n255\n" + bytes(6))

    def test_bad_dimensions(self):
        with pytest.raises(PnmError):
            decode_pgm(b"P5\n0 2\n255\n")


class TestFiles:
    def test_pgm_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(6, 5), dtype=np.uint8)
        path = tmp_path / "mask.pgm"
        write_pnm(path, img)
        assert np.array_equal(read_pnm(path), img)

    def test_ppm_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
        path = tmp_path / "image.ppm"
        write_pnm(path, img)
        assert np.array_equal(read_pnm(path), img)

    def test_read_rejects_unknown_magic(self, tmp_path):
        path = tmp_path / "weird.bin"
        path.write_bytes(b"XY nothing")
        with pytest.raises(PnmError):
            read_pnm(path)
