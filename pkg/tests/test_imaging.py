import math

import numpy as np
import pytest

from harmlab.errors import ParseError, ShapeError
from harmlab.imaging import (
    Image, Mask, compose, metrics, ratio_bucket,
    read_pgm, read_ppm, write_pgm, write_ppm,
)


def random_image(rng, h=8, w=8):
    return Image(np.rint(rng.uniform(0.0, 1.0, size=(h, w, 3)) * 255.0) / 255.0)


class TestNetpbmIO:
    def test_ppm_value_roundtrip(self, tmp_path):
        img = random_image(np.random.default_rng(0))
        path = tmp_path / "x.ppm"
        write_ppm(img, path)
        back = read_ppm(path)
        assert np.array_equal(back.pixels, img.pixels)

    def test_ppm_byte_roundtrip(self, tmp_path):
        img = random_image(np.random.default_rng(1))
        p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_ppm(img, p1)
        write_ppm(read_ppm(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_one_by_one_red_exact_bytes(self, tmp_path):
        path = tmp_path / "red.ppm"
        write_ppm(Image(np.array([[[1.0, 0.0, 0.0]]])), path)
        assert path.read_bytes() == b"P6\n1 1\n255\n\xff\x00\x00"

    def test_pgm_roundtrip_and_threshold(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 127, 128, 255]))
        mask = read_pgm(path)
        assert np.array_equal(mask.values, [[0, 0], [1, 1]])
        out = tmp_path / "w.pgm"
        write_pgm(mask, out)
        assert out.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 0, 255, 255])

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(ParseError, match="magic"):
            read_ppm(path)

    def test_bad_maxval_rejected(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + b"\x00" * 6)
        with pytest.raises(ParseError, match="maxval"):
            read_ppm(path)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P6\n2 2\n255\n\x01\x02")
        with pytest.raises(ParseError, match="truncated") as exc:
            read_ppm(path)
        assert exc.value.offset > 0

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P6\n1 1\n255\n\x01\x02\x03EXTRA")
        with pytest.raises(ParseError, match="trailing"):
            read_ppm(path)

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# comment line\n1 1\n255\n\x10\x20\x30")
        img = read_ppm(path)
        assert img.pixels.shape == (1, 1, 3)


class TestCompose:
    def test_all_zero_mask_returns_composite(self):
        rng = np.random.default_rng(2)
        gen, comp = random_image(rng), random_image(rng)
        out = compose(gen, comp, Mask(np.zeros((8, 8), dtype=np.uint8)))
        assert np.array_equal(out.pixels, comp.pixels)

    def test_all_one_mask_returns_generated(self):
        rng = np.random.default_rng(3)
        gen, comp = random_image(rng), random_image(rng)
        out = compose(gen, comp, Mask(np.ones((8, 8), dtype=np.uint8)))
        assert np.array_equal(out.pixels, gen.pixels)

    def test_half_mask_pixelwise(self):
        rng = np.random.default_rng(4)
        gen, comp = random_image(rng), random_image(rng)
        half = np.zeros((8, 8), dtype=np.uint8)
        half[:, :4] = 1
        out = compose(gen, comp, Mask(half))
        assert np.array_equal(out.pixels[:, :4], gen.pixels[:, :4])
        assert np.array_equal(out.pixels[:, 4:], comp.pixels[:, 4:])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            compose(random_image(np.random.default_rng(5), 4, 4),
                    random_image(np.random.default_rng(6), 8, 8),
                    Mask(np.zeros((8, 8), dtype=np.uint8)))


class TestMetrics:
    def test_identical_images_hit_psnr_cap(self):
        img = random_image(np.random.default_rng(7))
        rec = metrics(img, img, Mask(np.ones((8, 8), dtype=np.uint8)))
        assert rec.mse == 0.0
        assert rec.psnr == 100.0

    def test_uniform_offset_gives_known_values(self):
        ref = Image(np.full((8, 8, 3), 0.3))
        shifted = Image(np.full((8, 8, 3), 0.3 + 16.0 / 255.0))
        rec = metrics(shifted, ref, Mask(np.ones((8, 8), dtype=np.uint8)))
        assert abs(rec.mse - 256.0) < 1e-9
        assert abs(rec.psnr - 24.0494) < 1e-3

    def test_half_mask_relates_mse_and_fmse(self):
        rng = np.random.default_rng(8)
        ref = random_image(rng)
        mask_values = np.zeros((8, 8), dtype=np.uint8)
        mask_values[:4] = 1  # exactly half the pixels
        noisy = ref.pixels.copy()
        noisy[:4] = np.clip(noisy[:4] + 0.05, 0.0, 1.0)
        rec = metrics(Image(noisy), ref, Mask(mask_values))
        assert rec.fmse is not None
        assert abs(rec.mse - rec.fmse * 0.5) <= 1e-12 * rec.mse

    def test_foreground_only_error_scaling(self):
        rng = np.random.default_rng(9)
        ref = random_image(rng)
        mv = (rng.uniform(size=(8, 8)) < 0.4).astype(np.uint8)
        mv[0, 0] = 1
        bad = ref.pixels.copy()
        bad[mv.astype(bool)] = np.clip(bad[mv.astype(bool)] + 0.1, 0.0, 1.0)
        rec = metrics(Image(bad), ref, Mask(mv))
        assert abs(rec.mse - rec.fmse * rec.fg_ratio) <= 1e-12 * max(rec.mse, 1.0)

    def test_empty_mask_has_no_fmse(self):
        rng = np.random.default_rng(10)
        rec = metrics(random_image(rng), random_image(rng), Mask(np.zeros((8, 8), dtype=np.uint8)))
        assert rec.fmse is None
        assert rec.fg_ratio == 0.0

    def test_psnr_strictly_decreasing_in_mse(self):
        ref = Image(np.full((4, 4, 3), 0.5))
        mask = Mask(np.ones((4, 4), dtype=np.uint8))
        last = math.inf
        for offset in (0.01, 0.05, 0.1, 0.2):
            rec = metrics(Image(np.full((4, 4, 3), 0.5 + offset)), ref, mask)
            assert rec.psnr < last
            last = rec.psnr


class TestRatioBucket:
    @pytest.mark.parametrize(
        "ratio,bucket",
        [(0.03, 0), (0.10, 1), (0.50, 2), (0.05, 0), (0.15, 1), (0.0, 0), (1.0, 2)],
    )
    def test_bucket_edges(self, ratio, bucket):
        assert ratio_bucket(ratio) == bucket

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ratio_bucket(1.5)


class TestValidation:
    def test_image_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Image(np.full((2, 2, 3), 1.5))

    def test_mask_rejects_non_binary(self):
        with pytest.raises(ValueError):
            Mask(np.full((2, 2), 0.5))
