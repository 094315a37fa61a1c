from __future__ import annotations

import numpy as np
import pytest

from tilesr.errors import MediaError, ParameterError
from tilesr.geometry import Extent3
from tilesr.media import (
    bicubic_upsample,
    detect_kind,
    frame_png_bytes,
    load_media,
    save_media,
)
from tilesr.volume import LatentVolume


def catmull_rom_kernel(x: float) -> float:
    x = abs(x)
    if x <= 1:
        return 1.5 * x**3 - 2.5 * x**2 + 1.0
    if x < 2:
        return -0.5 * x**3 + 2.5 * x**2 - 4.0 * x + 2.0
    return 0.0


class TestLoadSave:
    def test_ppm_known_bytes(self, tmp_path):
        # Hand-built 2x2 P6 with bytes (0, 128, 255, 64) per channel pattern;
        # oracle is byte / 255.
        path = tmp_path / "tiny.ppm"
        pixels = bytes([0, 0, 0, 128, 128, 128, 255, 255, 255, 64, 64, 64])
        path.write_bytes(b"P6\n2 2\n255\n" + pixels)
        vol, desc = load_media(path)
        assert desc.kind == "image"
        assert vol.data.shape == (1, 2, 2, 3)
        expected = np.array([0, 128, 255, 64], dtype=np.float32) / 255.0
        np.testing.assert_allclose(vol.data[0, :, :, 0].ravel(), expected, atol=1e-7)

    def test_empty_frame_directory(self, tmp_path):
        empty = tmp_path / "frames"
        empty.mkdir()
        with pytest.raises(MediaError, match="no frames"):
            load_media(empty)

    def test_missing_path(self, tmp_path):
        with pytest.raises(MediaError, match="does not exist"):
            load_media(tmp_path / "nope.png")

    def test_image_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        vol = LatentVolume(rng.random((1, 6, 5, 3), dtype=np.float32))
        path = tmp_path / "img.png"
        save_media(vol, path)
        back, _ = load_media(path)
        assert float(np.abs(back.data - vol.data).max()) <= 1.0 / 255.0

    def test_out_of_range_clamped(self, tmp_path):
        data = np.array([[[[-0.5], [0.5]], [[1.5], [0.0]]]], dtype=np.float32)
        vol = LatentVolume(data)
        path = tmp_path / "clamp.png"
        save_media(vol, path)
        back, _ = load_media(path)
        assert float(back.data[0, 0, 0, 0]) == 0.0
        assert float(back.data[0, 1, 0, 0]) == 1.0

    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        vol = LatentVolume(rng.random((1, 8, 8, 3), dtype=np.float32))
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        save_media(vol, p1)
        save_media(vol, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_video_frame_order_round_trip(self, tmp_path):
        frames = np.stack(
            [np.full((4, 4, 1), i / 10.0, dtype=np.float32) for i in range(5)]
        )
        vol = LatentVolume(frames)
        out_dir = tmp_path / "frames"
        save_media(vol, out_dir, kind="video")
        names = sorted(p.name for p in out_dir.iterdir())
        assert names == [f"{i:06d}.png" for i in range(5)]
        back, desc = load_media(out_dir)
        assert desc.kind == "video"
        assert float(np.abs(back.data - vol.data).max()) <= 1.0 / 255.0

    def test_inconsistent_frame_sizes(self, tmp_path):
        out = tmp_path / "frames"
        out.mkdir()
        save_media(LatentVolume.zeros(Extent3(1, 4, 4), 1), out / "000000.png")
        save_media(LatentVolume.zeros(Extent3(1, 5, 4), 1), out / "000001.png")
        with pytest.raises(MediaError, match="000001"):
            load_media(out)

    def test_refuses_existing_directory(self, tmp_path):
        target = tmp_path / "frames"
        target.mkdir()
        (target / "keep.txt").write_text("precious")
        vol = LatentVolume.zeros(Extent3(2, 4, 4), 1)
        with pytest.raises(MediaError, match="refusing"):
            save_media(vol, target, kind="video")
        assert (target / "keep.txt").read_text() == "precious"

    def test_detect_kind(self, tmp_path):
        assert detect_kind(tmp_path) == "video"
        assert detect_kind(tmp_path / "x.lvol") == "raw"
        assert detect_kind(tmp_path / "x.png") == "image"

    def test_frame_png_rejects_odd_channels(self):
        vol = LatentVolume.zeros(Extent3(1, 2, 2), 5)
        with pytest.raises(MediaError, match="5-channel"):
            frame_png_bytes(vol, 0)

    def test_failed_save_leaves_nothing_behind(self, tmp_path):
        vol = LatentVolume.zeros(Extent3(1, 2, 2), 2)
        with pytest.raises(MediaError, match="2-channel"):
            save_media(vol, tmp_path / "img.png")
        with pytest.raises(MediaError, match="2-channel"):
            save_media(LatentVolume.zeros(Extent3(3, 2, 2), 2), tmp_path / "dir", kind="video")
        assert list(tmp_path.iterdir()) == []


class TestBicubicUpsample:
    def test_identity_at_r1(self):
        rng = np.random.default_rng(2)
        vol = LatentVolume(rng.random((2, 5, 7, 3), dtype=np.float32))
        assert bicubic_upsample(vol, 1) is vol

    def test_constant_preserved(self):
        vol = LatentVolume.full(Extent3(1, 5, 4), 2, 0.37)
        out = bicubic_upsample(vol, 3)
        assert out.data.shape == (1, 15, 12, 2)
        np.testing.assert_allclose(out.data, 0.37, atol=1e-6)

    def test_ramp_matches_kernel_oracle(self):
        # 1-D ramp along w; oracle evaluates the kernel sum directly at the
        # center-aligned sample positions with edge clamping.
        ramp = np.arange(4, dtype=np.float32).reshape(1, 1, 4, 1)
        vol = LatentVolume(np.ascontiguousarray(np.broadcast_to(ramp, (1, 3, 4, 1))))
        r = 2
        out = bicubic_upsample(vol, r)
        n = 4
        for j in range(n * r):
            x = (j + 0.5) / r - 0.5
            base = int(np.floor(x))
            phase = x - base
            expected = 0.0
            for k in range(-1, 3):
                tap = min(max(base + k, 0), n - 1)
                expected += float(ramp[0, 0, tap, 0]) * catmull_rom_kernel(k - phase)
            assert float(out.data[0, 1, j, 0]) == pytest.approx(expected, abs=1e-5)

    def test_temporal_axis_untouched(self):
        rng = np.random.default_rng(3)
        vol = LatentVolume(rng.random((4, 3, 3, 1), dtype=np.float32))
        out = bicubic_upsample(vol, 2)
        assert out.data.shape == (4, 6, 6, 1)

    def test_overshoot_bounded(self):
        # Catmull-Rom can overshoot by at most 1/8 of the local range.
        rng = np.random.default_rng(4)
        vol = LatentVolume(rng.random((1, 9, 9, 1), dtype=np.float32))
        out = bicubic_upsample(vol, 4)
        lo, hi = float(vol.data.min()), float(vol.data.max())
        margin = (hi - lo) / 8.0 + 1e-6
        assert out.data.min() >= lo - margin
        assert out.data.max() <= hi + margin

    def test_invalid_factor(self):
        vol = LatentVolume.zeros(Extent3(1, 2, 2), 1)
        with pytest.raises(ParameterError):
            bicubic_upsample(vol, 0)
