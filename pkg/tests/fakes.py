"""Scripted fake services: a denoiser endpoint and a vision-chat endpoint.

Both record every request so tests can assert wire-format details, and both
expose small state knobs (failure injection, canned captions, wrong-extent
responses) for exercising the client's retry and contract checks.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import threading
from dataclasses import dataclass, field

import numpy as np
import uvicorn
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse

from tilesr.volume import LatentVolume, from_lvol_bytes, to_lvol_bytes


@dataclass
class DenoiserState:
    fail_next: int = 0
    wrong_extent: bool = False
    mode: str = "echo"  # "echo" | "constant"
    constant: float = 0.0
    requests: list = field(default_factory=list)
    concurrent: int = 0
    max_concurrent: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)
    delay: float = 0.0


def make_denoiser_app(state: DenoiserState) -> FastAPI:
    app = FastAPI()

    def _encode(vol: LatentVolume) -> str:
        return base64.b64encode(to_lvol_bytes(vol)).decode()

    @app.post("/denoise")
    async def denoise(
        header: str = Form(...),
        latent: UploadFile = File(...),
        lr: UploadFile = File(...),
    ):
        with state.lock:
            if state.fail_next > 0:
                state.fail_next -= 1
                return JSONResponse(status_code=503, content={"detail": "scripted failure"})
            state.concurrent += 1
            state.max_concurrent = max(state.max_concurrent, state.concurrent)
        try:
            if state.delay:
                import time

                time.sleep(state.delay)
            meta = json.loads(header)
            latent_vol = from_lvol_bytes(await latent.read())
            lr_vol = from_lvol_bytes(await lr.read())
            state.requests.append(
                {"header": meta, "latent_shape": latent_vol.data.shape, "lr_shape": lr_vol.data.shape}
            )
            if state.wrong_extent:
                bad = LatentVolume(np.zeros((1, 1, 1, 1), dtype=np.float32))
                return {"e_cond": _encode(bad), "e_uncond": None}
            if state.mode == "constant":
                out = LatentVolume(np.full_like(latent_vol.data, state.constant))
            else:
                out = latent_vol
            uncond = _encode(out) if meta.get("want_uncond") else None
            return {"e_cond": _encode(out), "e_uncond": uncond}
        finally:
            with state.lock:
                state.concurrent -= 1

    @app.post("/decode")
    async def decode(header: str = Form(...), latent: UploadFile = File(...)):
        with state.lock:
            if state.fail_next > 0:
                state.fail_next -= 1
                return JSONResponse(status_code=503, content={"detail": "scripted failure"})
        blob = await latent.read()
        state.requests.append({"decode": json.loads(header)})
        return {"decoded": base64.b64encode(blob).decode()}

    return app


@dataclass
class VisionChatState:
    fail_next: int = 0
    caption: str | None = None  # fixed caption; None = digest of last media part
    empty_caption: bool = False
    requests: list = field(default_factory=list)


def caption_for_media(image_bytes: bytes) -> str:
    return "scene-" + hashlib.sha256(image_bytes).hexdigest()[:8]


def make_vision_chat_app(state: VisionChatState) -> FastAPI:
    app = FastAPI()

    @app.post("/v1/chat/completions")
    async def complete(body: dict):
        if state.fail_next > 0:
            state.fail_next -= 1
            return JSONResponse(status_code=503, content={"detail": "scripted failure"})
        state.requests.append(body)
        if state.empty_caption:
            text = "   "
        elif state.caption is not None:
            text = state.caption
        else:
            media = [
                part["image_url"]["url"]
                for message in body["messages"]
                for part in message["content"]
                if part.get("type") == "image_url"
            ]
            if not media:
                return JSONResponse(status_code=400, content={"detail": "no media parts"})
            payload = base64.b64decode(media[-1].split(",", 1)[1])
            text = caption_for_media(payload)
        return {"choices": [{"message": {"role": "assistant", "content": text}}]}

    return app


class ServerThread:
    """A uvicorn server on a free localhost port, running in a thread."""

    def __init__(self, app: FastAPI):
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            self.port = probe.getsockname()[1]
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="error")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def __enter__(self) -> "ServerThread":
        self.thread.start()
        import time

        deadline = time.time() + 10.0
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("fake server failed to start")
            time.sleep(0.01)
        return self

    def __exit__(self, *_exc) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5.0)
