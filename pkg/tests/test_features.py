import numpy as np
import pytest

from boxzoom.features import PatchGridExtractor, as_image, bilinear_crop, build_state_vector, luminance
from boxzoom.geometry import BoundingBox
from boxzoom.pnm import ImageFormatError, decode_pnm, encode_pnm, read_pnm, write_pnm


class TestPatchGrid:
    def test_white_image(self):
        img = np.ones((40, 30, 3))
        out = PatchGridExtractor(16).extract(img, BoundingBox(3, 5, 20, 31))
        assert out.shape == (256,)
        assert np.all(out == 1.0)

    def test_black_image(self):
        out = PatchGridExtractor(16).extract(np.zeros((40, 30)), BoundingBox(0, 0, 30, 40))
        assert np.all(out == 0.0)

    def test_checkerboard_aligned_samples(self):
        img = np.array([[1.0, 0.0], [0.0, 1.0]])
        ex = PatchGridExtractor(grid=2, min_box_size=1.0)
        assert ex.extract(img, BoundingBox(0, 0, 2, 2)).tolist() == [1.0, 0.0, 0.0, 1.0]

    def test_bilinear_midpoint(self):
        # a single sample at the center of a 2x1 image averages both pixels
        img = np.array([[0.0, 1.0]])
        assert bilinear_crop(img, BoundingBox(0, 0, 2, 1), 1)[0, 0] == 0.5

    def test_deterministic(self, rng):
        img = rng.random((64, 64, 3))
        ex = PatchGridExtractor()
        box = BoundingBox(3.3, 7.1, 40.2, 50.9)
        assert np.array_equal(ex.extract(img, box), ex.extract(img, box))

    @pytest.mark.parametrize("box", [(0, 0, 64, 64), (10.5, 3, 14, 60), (60, 60, 63.5, 64)])
    def test_output_length_independent_of_box(self, rng, box):
        img = rng.random((64, 64))
        assert PatchGridExtractor(8).extract(img, BoundingBox(*box)).shape == (64,)

    def test_uniform_image_invariant_to_box(self):
        img = np.full((50, 50, 3), 0.3)
        ex = PatchGridExtractor()
        a = ex.extract(img, BoundingBox(0, 0, 50, 50))
        b = ex.extract(img, BoundingBox(11.1, 7, 30, 19.5))
        assert np.array_equal(a, b)

    def test_degenerate_box(self):
        with pytest.raises(ValueError):
            PatchGridExtractor().extract(np.zeros((64, 64)), BoundingBox(0, 0, 2.9, 10))

    def test_luminance_weights(self):
        assert luminance(np.array([[[1.0, 0.0, 0.0]]]))[0, 0] == pytest.approx(0.2126)

    def test_as_image_validates(self):
        with pytest.raises(ValueError):
            as_image(np.full((4, 4), 1.5))
        with pytest.raises(ValueError):
            as_image(np.zeros((4, 4, 2)))


class TestStateVector:
    @pytest.mark.parametrize("n_actions, dim", [(6, 280), (8, 288), (5, 276)])
    def test_dims(self, n_actions, dim):
        v = build_state_vector(np.zeros(256), np.zeros(4 * n_actions), n_actions)
        assert v.shape == (dim,)

    def test_order(self):
        v = build_state_vector(np.array([7.0, 8.0]), np.array([1.0, 0, 0, 0]), 1)
        assert v.tolist() == [7.0, 8.0, 1.0, 0, 0, 0]

    def test_mismatch(self):
        with pytest.raises(ValueError):
            build_state_vector(np.zeros(256), np.zeros(23), 6)


class TestPNM:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = np.round(rng.random((7, 5, 3)) * 255) / 255
        write_pnm(tmp_path / "a.ppm", img)
        assert np.array_equal(read_pnm(tmp_path / "a.ppm"), img)

    def test_pgm_round_trip(self, tmp_path):
        img = np.arange(12).reshape(3, 4) / 255
        write_pnm(tmp_path / "a.pgm", img)
        assert (tmp_path / "a.pgm").read_bytes()[:2] == b"P5"
        assert np.array_equal(read_pnm(tmp_path / "a.pgm"), img)

    def test_header_comments_and_16_bit(self):
        data = b"P5\n# comment\n2 1\n65535\n" + np.array([0, 65535], dtype=">u2").tobytes()
        assert decode_pnm(data).tolist() == [[0.0, 1.0]]

    @pytest.mark.parametrize("magic", [b"P3", b"P2", b"\x89P", b"BM"])
    def test_rejects_other_formats(self, magic):
        with pytest.raises(ImageFormatError, match="unsupported"):
            decode_pnm(magic + b"\n1 1\n255\n\x00")

    def test_truncated(self):
        with pytest.raises(ImageFormatError, match="truncated"):
            decode_pnm(b"P6\n2 2\n255\n\x00\x00")

    def test_encode_header(self):
        assert encode_pnm(np.zeros((2, 3, 3))).startswith(b"P6\n3 2\n255\n")
