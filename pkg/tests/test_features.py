import numpy as np
import pytest

from gpmatch.bench import value_noise_texture
from gpmatch.exceptions import FormatError
from gpmatch.features import (
    DescriptorSpec,
    FeatureMap,
    Image,
    extract_dense_descriptors,
    load_feature_file,
    load_image,
    save_feature_file,
    save_image_pgm,
)

HOG_DIMS = 128


class TestImageType:
    def test_value_range_enforced(self):
        with pytest.raises(ValueError):
            Image(2, 2, 1, np.full((2, 2), 1.5))

    def test_grayscale_of_rgb_is_channel_mean(self):
        vals = np.zeros((2, 2, 3))
        vals[..., 0] = 0.3
        vals[..., 1] = 0.6
        img = Image(2, 2, 3, vals)
        assert np.allclose(img.grayscale(), 0.3)


class TestExtract:
    def test_constant_image(self):
        img = Image.from_array(np.full((64, 64), 0.5))
        fm = extract_dense_descriptors(img, 16)
        assert fm.height_cells == fm.width_cells == 4
        assert fm.channels == DescriptorSpec().dims == 149
        desc = fm.matrix()
        # no gradients: histogram part identically zero
        assert np.abs(desc[:, :HOG_DIMS]).max() == 0.0
        # pyramid channels all equal, descriptor unit-normalized
        pyr = desc[:, HOG_DIMS:]
        assert np.abs(pyr - pyr[:, :1]).max() < 1e-12
        norms = np.linalg.norm(desc, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-5

    def test_zero_image_zero_flagged(self):
        img = Image.from_array(np.zeros((32, 32)))
        fm = extract_dense_descriptors(img, 16)
        assert np.abs(fm.values).max() == 0.0

    def test_deterministic(self):
        img = value_noise_texture(128, 3)
        a = extract_dense_descriptors(img, 16)
        b = extract_dense_descriptors(Image.from_array(img.values.copy()), 16)
        assert np.array_equal(a.values, b.values)

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError):
            extract_dense_descriptors(Image.from_array(np.zeros((16, 16))), 16)

    def test_shift_equivariance_interior(self):
        big = value_noise_texture(320, 4).values
        stride = 16
        a = extract_dense_descriptors(Image.from_array(big[:256, :256]), stride)
        b = extract_dense_descriptors(Image.from_array(big[stride:256 + stride, :256]), stride)
        # cell (i, j) of the shifted view equals cell (i+1, j) of the original,
        # away from the boundary (blur + window reach)
        inner = slice(3, 12)
        assert np.allclose(
            b.values[inner, inner], a.values[slice(4, 13), inner], atol=1e-6
        )

    def test_rotation_rolls_orientation_bins(self):
        # oriented sinusoidal texture, mid-bin angle; rotating the image by
        # 90 degrees rolls the 8 unsigned orientation bins by 4 positions
        size = 160
        theta = np.deg2rad(11.25)
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        ramp = np.cos(theta) * xx + np.sin(theta) * yy
        img = 0.5 + 0.45 * np.sin(2 * np.pi * ramp / 24.0)
        spec = DescriptorSpec(smoothing=0.0, soft_bins=False)
        a = extract_dense_descriptors(Image.from_array(img), 16, spec)
        b = extract_dense_descriptors(Image.from_array(np.rot90(img).copy()), 16, spec)

        def mean_hist(fm):
            h = fm.values[2:-2, 2:-2, :HOG_DIMS].reshape(-1, 16, 8)
            return h.sum(axis=(0, 1))

        ha, hb = mean_hist(a), mean_hist(b)
        ha /= ha.sum()
        hb /= hb.sum()
        assert np.abs(hb - np.roll(ha, 4)).max() < 0.02
        assert ha.argmax() != hb.argmax()

    def test_stride_divides_leftover_cropped(self):
        img = value_noise_texture(70, 5)
        fm = extract_dense_descriptors(img, 16)
        assert (fm.height_cells, fm.width_cells) == (4, 4)


class TestFeatureFile:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        fm = FeatureMap(3, 5, 7, 16, rng.normal(size=(3, 5, 7)).astype(np.float32), normalized=False)
        p = tmp_path / "f.dkfm"
        save_feature_file(fm, p)
        save_feature_file(fm, tmp_path / "g.dkfm")
        assert p.read_bytes() == (tmp_path / "g.dkfm").read_bytes()
        back = load_feature_file(p)
        assert np.array_equal(back.values, fm.values)
        assert (back.height_cells, back.width_cells, back.channels, back.stride) == (3, 5, 7, 16)
        assert back.normalized is False

    def test_bad_magic_at_offset_zero(self, tmp_path):
        p = tmp_path / "x.dkfm"
        p.write_bytes(b"XXXX" + bytes(28))
        with pytest.raises(FormatError) as exc:
            load_feature_file(p)
        assert exc.value.offset == 0

    def test_header_payload_mismatch_names_counts(self, tmp_path):
        fm = FeatureMap(2, 2, 3, 8, np.zeros((2, 2, 3), np.float32))
        p = tmp_path / "y.dkfm"
        save_feature_file(fm, p)
        p.write_bytes(p.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(FormatError) as exc:
            load_feature_file(p)
        msg = str(exc.value)
        assert "76" in msg and "80" in msg  # expected vs actual byte counts

    def test_dimension_overflow_rejected(self, tmp_path):
        import struct

        p = tmp_path / "z.dkfm"
        header = b"DKFM" + struct.pack("<IIIIIB3x", 1, 2**16, 2**16, 2**8, 16, 1)
        p.write_bytes(header)
        with pytest.raises(FormatError) as exc:
            load_feature_file(p)
        assert "overflow" in str(exc.value)


class TestLoadImage:
    def test_pgm_8bit(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
        img = load_image(p)
        assert img.channels == 1
        assert np.array_equal(img.values, [[0.0, 1.0], [0.0, 1.0]])

    def test_pgm_comment_in_header(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# a comment\n1 1\n255\n" + bytes([128]))
        img = load_image(p)
        assert img.values[0, 0] == pytest.approx(128 / 255)

    def test_ppm_16bit_big_endian(self, tmp_path):
        p = tmp_path / "b.ppm"
        sample = (32768).to_bytes(2, "big")
        p.write_bytes(b"P6\n1 1\n65535\n" + sample * 3)
        img = load_image(p)
        assert img.channels == 3
        assert img.values[0, 0, 0] == pytest.approx(32768 / 65535)

    def test_jpeg_rejected_naming_magic(self, tmp_path):
        p = tmp_path / "x.jpg"
        p.write_bytes(b"\xff\xd8\xff\xe0" + bytes(16))
        with pytest.raises(FormatError) as exc:
            load_image(p)
        assert "magic" in str(exc.value)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
        with pytest.raises(FormatError):
            load_image(p)

    def test_pgm_round_trip(self, tmp_path):
        img = value_noise_texture(32, 9)
        p = tmp_path / "r.pgm"
        save_image_pgm(img, p)
        back = load_image(p)
        assert np.abs(back.values - img.values).max() <= 1.0 / 255 + 1e-12
