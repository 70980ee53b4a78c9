"""HTTP session service: JSON + base64-PNG bodies, raw PNG streams.

Endpoints:
    POST /sessions                       create a session
    GET  /sessions/{id}                  state view
    GET  /sessions/{id}/segmap           current segmentation (PNG)
    PUT  /sessions/{id}/segmap           replace segmentation (PNG body) -> 204
    POST /sessions/{id}/apply            run an instruction
    POST /sessions/{id}/undo | /redo     move the history cursor
    GET  /sessions/{id}/output           visible result (PNG)
    GET  /sessions/{id}/steps/{k}/output|seg_out|seg_used   step artifacts (PNG)
"""

from __future__ import annotations

import base64
import io

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .engine import Engine, EngineConfig
from .errors import (
    BackendError,
    NumericError,
    SegEditError,
    SessionNotFoundError,
)
from .imagecore import ImageBuffer, SegMap
from .session import SessionManager

__all__ = ["create_app"]


def _png_bytes_image(image: ImageBuffer) -> bytes:
    arr = np.round(image.data * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _png_bytes_segmap(seg: SegMap) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(seg.data.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _image_from_png(raw: bytes) -> ImageBuffer:
    with Image.open(io.BytesIO(raw)) as im:
        return ImageBuffer(np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0)


def _segmap_from_png(raw: bytes, palette: dict[int, str]) -> SegMap:
    with Image.open(io.BytesIO(raw)) as im:
        data = np.asarray(im.convert("L"), dtype=np.int32)
    # ids outside the session palette are a client error (PaletteError -> 422)
    return SegMap(data, palette)


def _b64_image(image: ImageBuffer) -> str:
    return base64.b64encode(_png_bytes_image(image)).decode("ascii")


class CreateSessionBody(BaseModel):
    image: str  # base64 PNG
    instruction: str = ""


class ApplyBody(BaseModel):
    instruction: str
    background: str | None = None  # base64 PNG


def create_app(
    engine: Engine | None = None,
    config: EngineConfig | None = None,
    ui_dir: str | None = None,
) -> FastAPI:
    config = config or EngineConfig()
    engine = engine or Engine(config)
    manager = SessionManager(engine, config.session_root)
    app = FastAPI(title="segedit session service")
    app.state.manager = manager
    app.state.engine = engine

    from pathlib import Path

    ui_root = Path(ui_dir) if ui_dir else Path("frontend")
    if (ui_root / "index.html").exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_root, html=True), name="ui")

    @app.exception_handler(SegEditError)
    async def _segedit_error(_request: Request, exc: SegEditError):
        if isinstance(exc, SessionNotFoundError):
            status = 404
        elif isinstance(exc, BackendError):
            status = 502
        elif isinstance(exc, NumericError):
            status = 500
        else:
            status = 422
        return JSONResponse(
            status_code=status,
            content={"detail": str(exc), "stage": exc.stage},
        )

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        image = _image_from_png(base64.b64decode(body.image))
        session = manager.create(image, body.instruction)
        return {
            "id": session.id,
            "seg": base64.b64encode(_png_bytes_segmap(session.seg_current)).decode("ascii"),
            "palette": {str(k): v for k, v in session.seg_current.palette.items()},
            "target": session.target_label,
            "state": session.state,
            "warning": session.warning,
        }

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        view = manager.get_state(session_id)
        session = manager.get(session_id)
        view["palette"] = {str(k): v for k, v in session.seg_current.palette.items()}
        return view

    @app.get("/sessions/{session_id}/segmap")
    def get_segmap(session_id: str):
        session = manager.get(session_id)
        return Response(content=_png_bytes_segmap(session.seg_current), media_type="image/png")

    @app.put("/sessions/{session_id}/segmap", status_code=204)
    async def put_segmap(session_id: str, request: Request):
        raw = await request.body()
        session = manager.get(session_id)
        seg = _segmap_from_png(raw, session.seg_current.palette)
        manager.update_segmap(session_id, seg)
        return Response(status_code=204)

    @app.post("/sessions/{session_id}/apply")
    def apply_instruction(session_id: str, body: ApplyBody):
        background = None
        if body.background:
            background = _image_from_png(base64.b64decode(body.background))
        manager.apply_instruction(session_id, body.instruction, background)
        session = manager.get(session_id)
        k = session.cursor - 1
        return {
            "step_index": k,
            "output_url": f"/sessions/{session_id}/steps/{k}/output",
            "seg_out_url": f"/sessions/{session_id}/steps/{k}/seg_out",
        }

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        manager.undo(session_id)
        return manager.get_state(session_id)

    @app.post("/sessions/{session_id}/redo")
    def redo(session_id: str):
        manager.redo(session_id)
        return manager.get_state(session_id)

    @app.get("/sessions/{session_id}/output")
    def get_output(session_id: str):
        session = manager.get(session_id)
        return Response(
            content=_png_bytes_image(session.visible_output()), media_type="image/png"
        )

    @app.get("/sessions/{session_id}/steps/{k}/output")
    def get_step_output(session_id: str, k: int):
        session = manager.get(session_id)
        if not 0 <= k < len(session.steps):
            raise SessionNotFoundError(f"session {session_id} has no step {k}")
        return Response(
            content=_png_bytes_image(session.steps[k].output), media_type="image/png"
        )

    @app.get("/sessions/{session_id}/steps/{k}/seg_out")
    def get_step_seg_out(session_id: str, k: int):
        session = manager.get(session_id)
        if not 0 <= k < len(session.steps):
            raise SessionNotFoundError(f"session {session_id} has no step {k}")
        return Response(
            content=_png_bytes_segmap(session.steps[k].seg_out), media_type="image/png"
        )

    @app.get("/sessions/{session_id}/steps/{k}/seg_used")
    def get_step_seg_used(session_id: str, k: int):
        session = manager.get(session_id)
        if not 0 <= k < len(session.steps):
            raise SessionNotFoundError(f"session {session_id} has no step {k}")
        return Response(
            content=_png_bytes_segmap(session.steps[k].seg_used), media_type="image/png"
        )

    return app
