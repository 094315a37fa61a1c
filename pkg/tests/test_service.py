from __future__ import annotations

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from tilesr.geometry import Extent3
from tilesr.service.app import create_app
from tilesr.volume import LatentVolume, read_lvol, write_lvol


@pytest.fixture
def client():
    return TestClient(create_app())


@pytest.fixture
def workspace(tmp_path):
    vol = LatentVolume.zeros(Extent3(1, 8, 8), 1)
    input_path = tmp_path / "input.lvol"
    write_lvol(vol, input_path)
    return tmp_path, input_path


def toy_config(input_path, tmp_path, extra: str = "") -> str:
    return f"""
seed = 21

[input]
path = "{input_path}"

[plan]
tile = [1, 5, 5]
overlap = [0, 2, 2]
mode = "valid_region"

[schedule]
steps = 10

[backend]
kind = "toy"
[backend.toy]
default_mean = 0.25

[extractor]
kind = "stub"
mode = "local"

[output]
raw = "{tmp_path / 'out.lvol'}"
report = "{tmp_path / 'report.json'}"
{extra}
"""


def test_health(client):
    response = client.get("/v1/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_plan_endpoint(client, workspace):
    tmp_path, input_path = workspace
    response = client.post("/v1/plan", json={"config_toml": toy_config(input_path, tmp_path)})
    assert response.status_code == 200
    body = response.json()
    assert body["mode"] == "valid_region"
    assert len(body["regions"]) == 4
    assert body["regions"][0] == {"index": 1, "origin": [0, 0, 0], "size": [1, 5, 5]}
    assert "tile    1" in body["listing"]


def test_plan_missing_config(client):
    response = client.post("/v1/plan", json={})
    assert response.status_code == 400
    assert response.json()["error"]["category"] == "usage"


def test_config_error_category(client, workspace):
    tmp_path, input_path = workspace
    bad = toy_config(input_path, tmp_path).replace("overlap = [0, 2, 2]", "overlap = [0, 9, 9]")
    response = client.post("/v1/run", json={"config_toml": bad})
    assert response.status_code == 400
    assert response.json()["error"]["category"] == "config"


def test_prompts_endpoint_writes_manifest(client, workspace):
    tmp_path, input_path = workspace
    manifest_path = tmp_path / "manifest.json"
    config = toy_config(input_path, tmp_path, extra=f'manifest = "{manifest_path}"')
    response = client.post("/v1/prompts", json={"config_toml": config})
    assert response.status_code == 200
    body = response.json()
    assert body["path"] == str(manifest_path)
    assert len(body["manifest"]["records"]) == 4
    assert json.loads(manifest_path.read_text())["records"][0]["tile_index"] == 1


def test_run_endpoint_end_to_end(client, workspace):
    tmp_path, input_path = workspace
    response = client.post("/v1/run", json={"config_toml": toy_config(input_path, tmp_path)})
    assert response.status_code == 200
    report = response.json()["report"]
    assert report["tile_count"] == 4
    assert report["steps"] == 10
    assert str(tmp_path / "out.lvol") in report["output_checksums"]
    out = read_lvol(tmp_path / "out.lvol")
    np.testing.assert_allclose(out.data, 0.25, atol=1e-4)
    saved_report = json.loads((tmp_path / "report.json").read_text())
    assert saved_report["config_hash"] == report["config_hash"]


def test_run_overrides(client, workspace):
    tmp_path, input_path = workspace
    overrides = {"extractor.mode": "global", "seed": 5}
    response = client.post(
        "/v1/run",
        json={"config_toml": toy_config(input_path, tmp_path), "overrides": overrides},
    )
    assert response.status_code == 200
    report = response.json()["report"]
    assert report["mode"] == "global"
    assert report["seed"] == 5


def test_diagnose_endpoint(client, workspace):
    tmp_path, input_path = workspace
    config = toy_config(input_path, tmp_path)
    response = client.post(
        "/v1/diagnose",
        json={"config_toml": config, "overrides": {"extractor.mode": "global"}},
    )
    assert response.status_code == 200
    body = response.json()
    lines = body["csv"].splitlines()
    assert lines[0] == "tile_index,timestep,delta_norm,guidance_norm,reference_condition"
    assert len(body["reports"]) == 4 * 10
    assert all(seam["monotone"] for seam in body["seams"])


def test_bench_endpoint(client, workspace):
    tmp_path, input_path = workspace
    response = client.post("/v1/bench", json={"config_toml": toy_config(input_path, tmp_path)})
    assert response.status_code == 200
    body = response.json()
    labels = [row["label"] for row in body["rows"]]
    assert labels[0].startswith("baseline")
    assert labels[1] == "+ tiled prompts (4)"
    assert body["overhead_ratio"] > 0
    assert "overhead ratio" in body["table"]


def test_video_run_end_to_end(client, tmp_path):
    frames = np.stack(
        [np.full((12, 12, 1), 0.1 + 0.05 * t, dtype=np.float32) for t in range(8)]
    )
    frames_dir = tmp_path / "frames"
    from tilesr.media import save_media

    save_media(LatentVolume(frames), frames_dir, kind="video")
    out_dir = tmp_path / "out_frames"
    config = f"""
seed = 9

[input]
path = "{frames_dir}"

[plan]
kind = "video"
tile = [4, 6, 6]
overlap = [2, 2, 2]

[schedule]
steps = 8

[backend]
kind = "toy"
[backend.toy]
default_mean = 0.5

[extractor]
kind = "stub"
mode = "local"

[output]
path = "{out_dir}"
raw = "{tmp_path / 'out.lvol'}"
"""
    response = client.post("/v1/run", json={"config_toml": config})
    assert response.status_code == 200, response.text
    report = response.json()["report"]
    assert report["tile_count"] == 27  # 3 origins per axis at stride tile - overlap
    out = read_lvol(tmp_path / "out.lvol")
    assert out.data.shape == (8, 12, 12, 1)
    np.testing.assert_allclose(out.data, 0.5, atol=1e-4)
    assert sorted(p.name for p in out_dir.iterdir()) == [f"{i:06d}.png" for i in range(8)]
    assert str(out_dir) in report["output_checksums"]


def test_manifest_reuse_and_stale_rejection(client, workspace):
    tmp_path, input_path = workspace
    manifest_path = tmp_path / "manifest.json"
    config = toy_config(input_path, tmp_path, extra=f'manifest = "{manifest_path}"')
    assert client.post("/v1/prompts", json={"config_toml": config}).status_code == 200

    run_config = toy_config(input_path, tmp_path)
    response = client.post(
        "/v1/run",
        json={
            "config_toml": run_config,
            "overrides": {"prompts.path": str(manifest_path)},
        },
    )
    assert response.status_code == 200

    # A different input must be rejected through the fingerprint.
    other_input = tmp_path / "other.lvol"
    write_lvol(LatentVolume.full(Extent3(1, 8, 8), 1, 0.5), other_input)
    response = client.post(
        "/v1/run",
        json={
            "config_toml": run_config,
            "overrides": {
                "prompts.path": str(manifest_path),
                "input.path": str(other_input),
            },
        },
    )
    assert response.status_code == 502
    assert response.json()["error"]["category"] == "extraction"
    assert "different input" in response.json()["error"]["message"]
