"""File-format round-trip tests."""

import numpy as np
import pytest

from conftest import make_camera
from mvsbisect.imio import (read_cameras_text, read_image, read_pfm, read_raw_depth,
                            write_cameras_text, write_pfm, write_pgm, write_ppm,
                            write_raw_depth)


class TestPfm:
    def test_round_trip_with_nans(self, rng, tmp_path):
        depth = rng.uniform(0.5, 5.0, size=(17, 23)).astype(np.float32)
        depth[3, 4] = np.nan
        path = tmp_path / "d.pfm"
        write_pfm(path, depth)
        back = read_pfm(path)
        np.testing.assert_array_equal(back, depth)

    def test_header_scale_little_endian(self, tmp_path):
        path = tmp_path / "d.pfm"
        write_pfm(path, np.zeros((2, 3), dtype=np.float32))
        head = path.read_bytes()[:20]
        assert head.startswith(b"Pf\n3 2\n-1.0\n")

    def test_rejects_non_pfm(self, tmp_path):
        path = tmp_path / "x.pfm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ValueError):
            read_pfm(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "d.pfm"
        write_pfm(path, np.zeros((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError):
            read_pfm(path)


class TestPnm:
    def test_ppm_round_trip_quantized(self, rng, tmp_path):
        img = rng.uniform(0, 1, size=(9, 11, 3))
        path = tmp_path / "i.ppm"
        write_ppm(path, img)
        back = read_image(path)
        np.testing.assert_allclose(back, np.round(img * 255) / 255.0, atol=1e-7)

    def test_pgm_round_trip(self, rng, tmp_path):
        img = rng.uniform(0, 1, size=(7, 5))
        path = tmp_path / "i.pgm"
        write_pgm(path, img)
        back = read_image(path)
        assert back.shape == (7, 5)
        np.testing.assert_allclose(back, np.round(img * 255) / 255.0, atol=1e-7)

    def test_gray_written_as_rgb(self, tmp_path):
        img = np.linspace(0, 1, 12).reshape(3, 4)
        path = tmp_path / "g.ppm"
        write_ppm(path, img)
        back = read_image(path)
        assert back.shape == (3, 4, 3)
        np.testing.assert_array_equal(back[..., 0], back[..., 1])

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff")
        img = read_image(path)
        assert img.shape == (2, 2)
        assert img[1, 1] == pytest.approx(1.0)


class TestRawDepth:
    def test_round_trip(self, rng, tmp_path):
        depth = rng.uniform(0.5, 5.0, size=(6, 8)).astype(np.float32)
        depth[0, 0] = np.nan
        path = tmp_path / "d.ibdm"
        write_raw_depth(path, depth)
        np.testing.assert_array_equal(read_raw_depth(path), depth)

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "bad.ibdm"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ValueError):
            read_raw_depth(path)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "d.ibdm"
        write_raw_depth(path, np.zeros((2, 5), dtype=np.float32))
        blob = path.read_bytes()
        assert blob[:4] == b"IBDM"
        assert int.from_bytes(blob[4:8], "little") == 5
        assert int.from_bytes(blob[8:12], "little") == 2
        assert len(blob) == 12 + 4 * 10


class TestCamerasText:
    def test_round_trip(self, tmp_path, rng):
        from scipy.spatial.transform import Rotation
        cams = []
        for i in range(3):
            R = Rotation.from_rotvec(rng.uniform(-0.3, 0.3, size=3)).as_matrix()
            cams.append(make_camera(fx=rng.uniform(50, 200), R=R,
                                    t=rng.uniform(-1, 1, size=3),
                                    width=64 + i, height=48 + i))
        path = tmp_path / "cameras.txt"
        write_cameras_text(path, cams)
        back = read_cameras_text(path)
        assert len(back) == 3
        for a, b in zip(cams, back):
            np.testing.assert_array_equal(a.K, b.K)
            np.testing.assert_array_equal(a.Rt, b.Rt)
            assert (a.width, a.height) == (b.width, b.height)

    def test_malformed_length(self, tmp_path):
        path = tmp_path / "cameras.txt"
        path.write_text("1 2 3 4 5\n")
        with pytest.raises(ValueError):
            read_cameras_text(path)
