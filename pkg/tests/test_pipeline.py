from __future__ import annotations

import numpy as np
import pytest

from tilesr.config import load_config
from tilesr.errors import ConfigError, MediaError
from tilesr.geometry import Extent3
from tilesr.media import load_media, save_media
from tilesr.pipeline import execute_extract, execute_plan, execute_run
from tilesr.volume import LatentVolume, read_lvol, write_lvol


def base_config(tmp_path, extra: str = "") -> str:
    return f"""
seed = 13

[input]
path = "{tmp_path / 'input.lvol'}"

[plan]
tile = [1, 4, 4]
overlap = [0, 2, 2]

[schedule]
steps = 8

[backend]
kind = "toy"
[backend.toy]
default_mean = 0.6

[extractor]
kind = "stub"
mode = "local"
{extra}
"""


class TestScaledRuns:
    def test_hr_latent_at_scale_4(self, tmp_path):
        # Toy backend is pointwise, so a scale-4 run must converge to the
        # same mean on the 4x spatial extent.
        write_lvol(LatentVolume.zeros(Extent3(1, 8, 8), 1), tmp_path / "input.lvol")
        cfg = load_config(
            base_config(
                tmp_path,
                extra=f"""
[output]
raw = "{tmp_path / 'out.lvol'}"
""",
            ),
            overrides={"backend.scale": 4},
        )
        outcome = execute_run(cfg)
        out = read_lvol(tmp_path / "out.lvol")
        assert out.data.shape == (1, 32, 32, 1)
        np.testing.assert_allclose(out.data, 0.6, atol=1e-4)
        assert outcome.report.tile_count == 9

    def test_pre_upsample_path(self, tmp_path):
        # Refinement-style backends see the enlarged input; tiles then map
        # 1:1 onto the latent.
        rng = np.random.default_rng(5)
        save_media(
            LatentVolume(rng.random((1, 8, 8, 3), dtype=np.float32)),
            tmp_path / "input.png",
        )
        config = f"""
seed = 3

[input]
path = "{tmp_path / 'input.png'}"

[plan]
tile = [1, 8, 8]
overlap = [0, 4, 4]

[schedule]
steps = 6

[backend]
kind = "toy"
scale = 2
pre_upsample = true
[backend.toy]
default_mean = 0.5

[extractor]
kind = "stub"
mode = "local"

[output]
path = "{tmp_path / 'out.png'}"
"""
        outcome = execute_run(load_config(config))
        out, _ = load_media(tmp_path / "out.png")
        assert out.data.shape == (1, 16, 16, 3)
        np.testing.assert_allclose(out.data, 0.5, atol=1.0 / 255.0 + 1e-6)
        # Plan is built on the upsampled 16x16 extent: origins {0, 4, 8}^2.
        assert outcome.report.tile_count == 9

    def test_extract_matches_run_fingerprints_with_pre_upsample(self, tmp_path):
        rng = np.random.default_rng(6)
        save_media(
            LatentVolume(rng.random((1, 8, 8, 3), dtype=np.float32)),
            tmp_path / "input.png",
        )
        config = f"""
[input]
path = "{tmp_path / 'input.png'}"

[plan]
tile = [1, 8, 8]
overlap = [0, 4, 4]

[backend]
kind = "toy"
scale = 2
pre_upsample = true

[extractor]
kind = "stub"
mode = "local"

[output]
manifest = "{tmp_path / 'manifest.json'}"
"""
        execute_extract(load_config(config))
        run_cfg = load_config(
            config,
            overrides={
                "prompts.path": str(tmp_path / "manifest.json"),
                "output.manifest": "",
                "output.raw": str(tmp_path / "out.lvol"),
            },
        )
        execute_run(run_cfg)
        assert (tmp_path / "out.lvol").exists()


class TestRunFailures:
    def test_unencodable_output_writes_nothing(self, tmp_path):
        # Two-channel latent cannot become a PNG; the failure must happen
        # before any primary output lands.
        write_lvol(LatentVolume.zeros(Extent3(1, 8, 8), 2), tmp_path / "input.lvol")
        cfg = load_config(
            base_config(
                tmp_path,
                extra=f"""
[output]
path = "{tmp_path / 'out.png'}"
raw = "{tmp_path / 'out.lvol'}"
""",
            )
        )
        with pytest.raises(MediaError, match="2-channel"):
            execute_run(cfg)
        assert not (tmp_path / "out.png").exists()
        assert not (tmp_path / "out.lvol").exists()

    def test_missing_tile_config(self, tmp_path):
        write_lvol(LatentVolume.zeros(Extent3(1, 8, 8), 1), tmp_path / "input.lvol")
        cfg = load_config(f'[input]\npath = "{tmp_path / "input.lvol"}"\n')
        with pytest.raises(ConfigError, match="plan.tile"):
            execute_plan(cfg)
