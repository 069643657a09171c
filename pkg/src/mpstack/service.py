"""Session service: build a stack once, edit it many times, render on demand.

Sessions are in-memory. Within a session writes are serialized (a second
concurrent writer gets :class:`Busy`); reads render an immutable snapshot
and never block. Undo replays the edit log from the initial stack, which
also makes the log the single source of truth for reproducing state.
"""

from __future__ import annotations

import io
import os
import tempfile
import threading
import time
import uuid
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import edit, imgio
from .core import SceneStack, sort_by_depth, validate_stack
from .errors import (
    Busy,
    EmptyInstance,
    InvalidTarget,
    LoadError,
    MpstackError,
    OrderViolation,
    PlacementFailure,
    SessionLimitExceeded,
    UnknownPlane,
    UnknownSession,
)

MAX_SESSIONS_ENV = "MPSTACK_MAX_SESSIONS"
DEFAULT_MAX_SESSIONS = 64

# quantized 16-bit alphas off disk sum to 1 only up to ~planes * 0.5/65535
LOADED_ALPHA_SUM_TOLERANCE = 1e-3


@dataclass
class Session:
    session_id: str
    initial_stack: SceneStack
    stack: SceneStack
    ops: list[edit.EditOp] = field(default_factory=list)
    op_latencies_ms: list[float] = field(default_factory=list)
    build_ms: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass(frozen=True)
class OpResult:
    op_index: int
    latency_ms: float
    affected_plane_ids: tuple[str, ...]
    log_length: int
    plane_count: int


def _load_and_validate(manifest_path) -> SceneStack:
    manifest = imgio.load_manifest(manifest_path)
    stack = sort_by_depth(imgio.load_stack(manifest))
    report = validate_stack(stack, tolerance=LOADED_ALPHA_SUM_TOLERANCE)
    if not report.ok:
        raise LoadError(f"loaded stack fails validation:\n{report.summary()}")
    return stack


class SessionStore:
    """In-memory session registry, capped via MPSTACK_MAX_SESSIONS."""

    def __init__(self, max_sessions: int | None = None):
        if max_sessions is None:
            max_sessions = int(os.environ.get(MAX_SESSIONS_ENV, DEFAULT_MAX_SESSIONS))
        self.max_sessions = max_sessions
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()

    def _register(self, stack: SceneStack, build_ms: float) -> Session:
        session = Session(
            session_id=uuid.uuid4().hex[:12],
            initial_stack=stack,
            stack=stack,
            build_ms=build_ms,
        )
        with self._registry_lock:
            if len(self._sessions) >= self.max_sessions:
                raise SessionLimitExceeded(f"session cap {self.max_sessions} reached")
            self._sessions[session.session_id] = session
        return session

    def create_from_manifest(self, manifest_path) -> Session:
        start = time.perf_counter()
        stack = _load_and_validate(manifest_path)
        build_ms = (time.perf_counter() - start) * 1000.0
        return self._register(stack, build_ms)

    def create_from_bundle(self, data: bytes) -> Session:
        start = time.perf_counter()
        try:
            archive = zipfile.ZipFile(io.BytesIO(data))
        except zipfile.BadZipFile as exc:
            raise LoadError(f"uploaded bundle is not a zip archive: {exc}") from exc
        with tempfile.TemporaryDirectory(prefix="mpstack-bundle-") as tmp:
            archive.extractall(tmp)
            manifests = sorted(Path(tmp).rglob(imgio.MANIFEST_NAME))
            if not manifests:
                raise LoadError(f"bundle contains no {imgio.MANIFEST_NAME}", field="bundle")
            stack = _load_and_validate(manifests[0])
        build_ms = (time.perf_counter() - start) * 1000.0
        return self._register(stack, build_ms)

    def get(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise UnknownSession(f"no session '{session_id}'") from None

    def apply_op(self, session_id: str, op: edit.EditOp) -> OpResult:
        session = self.get(session_id)
        if not session.lock.acquire(blocking=False):
            raise Busy(f"session '{session_id}' has a writer in progress")
        try:
            before = session.stack
            start = time.perf_counter()
            after = edit.apply_op(before, op)
            latency_ms = (time.perf_counter() - start) * 1000.0
            session.stack = after
            session.ops.append(op)
            session.op_latencies_ms.append(latency_ms)
            return OpResult(
                op_index=len(session.ops) - 1,
                latency_ms=latency_ms,
                affected_plane_ids=_affected_planes(before, after, op),
                log_length=len(session.ops),
                plane_count=len(after),
            )
        finally:
            session.lock.release()

    def undo(self, session_id: str, to: int) -> Session:
        session = self.get(session_id)
        if not session.lock.acquire(blocking=False):
            raise Busy(f"session '{session_id}' has a writer in progress")
        try:
            if not (0 <= to <= len(session.ops)):
                raise ValueError(f"undo target {to} outside log of length {len(session.ops)}")
            stack = session.initial_stack
            for op in session.ops[:to]:
                stack = edit.apply_op(stack, op)
            session.stack = stack
            session.ops = session.ops[:to]
            session.op_latencies_ms = session.op_latencies_ms[:to]
            return session
        finally:
            session.lock.release()

    def export_bundle(self, session_id: str) -> bytes:
        session = self.get(session_id)
        stack = session.stack
        log = tuple(edit.op_to_dict(op) for op in session.ops)
        with tempfile.TemporaryDirectory(prefix="mpstack-export-") as tmp:
            imgio.write_stack_bundle(stack, tmp, edit_log=log)
            buf = io.BytesIO()
            with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as archive:
                for path in sorted(Path(tmp).iterdir()):
                    archive.write(path, arcname=path.name)
        return buf.getvalue()


def _affected_planes(before: SceneStack, after: SceneStack, op: edit.EditOp) -> tuple[str, ...]:
    prior = {p.plane_id: p for p in before.planes}
    current = {p.plane_id: p for p in after.planes}
    affected = []
    for pid, plane in current.items():
        old = prior.get(pid)
        if old is None or old.alpha is not plane.alpha or old.mean_depth != plane.mean_depth:
            affected.append(pid)
    affected.extend(pid for pid in prior if pid not in current)
    if isinstance(op, edit.Reorder):
        affected.extend(pid for pid in (op.p, op.q) if pid not in affected)
    return tuple(sorted(affected))


def session_summary(session: Session) -> dict:
    return {
        "session_id": session.session_id,
        "plane_count": len(session.stack),
        "planes": [
            {
                "id": p.plane_id,
                "kind": p.kind.value,
                "mean_depth": None if p.is_background else p.mean_depth,
            }
            for p in session.stack.planes
        ],
        "log_length": len(session.ops),
        "build_ms": session.build_ms,
        "op_latencies_ms": list(session.op_latencies_ms),
    }


def create_app(store: SessionStore | None = None) -> FastAPI:
    """Build the HTTP app exposing the session API."""
    app = FastAPI(title="mpstack", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.store = store or SessionStore()

    status_by_error = [
        (UnknownSession, 404),
        (UnknownPlane, 404),
        (Busy, 409),
        (SessionLimitExceeded, 429),
        (LoadError, 400),
        (InvalidTarget, 422),
        (OrderViolation, 422),
        (PlacementFailure, 422),
        (EmptyInstance, 422),
    ]

    @app.exception_handler(MpstackError)
    async def handle_engine_error(request: Request, exc: MpstackError):
        status = next((code for cls, code in status_by_error if isinstance(exc, cls)), 422)
        body = {"error": type(exc).__name__, "detail": str(exc)}
        if isinstance(exc, LoadError) and exc.field:
            body["field"] = exc.field
        return JSONResponse(status_code=status, content=body)

    @app.exception_handler(ValueError)
    async def handle_value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"error": "ValueError", "detail": str(exc)})

    def _store() -> SessionStore:
        return app.state.store

    @app.post("/scenes")
    async def create_scene(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("application/json"):
            doc = await request.json()
            manifest_path = doc.get("manifest_path")
            if not manifest_path:
                raise LoadError("JSON body must carry 'manifest_path'", field="manifest_path")
            session = _store().create_from_manifest(manifest_path)
        else:
            data = await request.body()
            if not data:
                raise LoadError("request body must be a zip bundle or a JSON manifest reference")
            session = _store().create_from_bundle(data)
        return session_summary(session)

    @app.get("/scenes/{session_id}")
    def scene_summary(session_id: str):
        return session_summary(_store().get(session_id))

    @app.get("/scenes/{session_id}/render")
    def render_scene(session_id: str):
        stack = _store().get(session_id).stack
        return Response(content=imgio.encode_rgb8(edit.render(stack)), media_type="image/png")

    @app.get("/scenes/{session_id}/planes/{plane_id}/color")
    def plane_color(session_id: str, plane_id: str):
        plane = _store().get(session_id).stack.plane(plane_id)
        return Response(content=imgio.encode_rgb8(plane.color), media_type="image/png")

    @app.get("/scenes/{session_id}/planes/{plane_id}/alpha")
    def plane_alpha(session_id: str, plane_id: str):
        plane = _store().get(session_id).stack.plane(plane_id)
        return Response(content=imgio.encode_gray16(plane.alpha), media_type="image/png")

    @app.post("/scenes/{session_id}/ops")
    async def apply_scene_op(session_id: str, request: Request):
        doc = await request.json()
        op = edit.op_from_dict(doc)
        result = _store().apply_op(session_id, op)
        return {
            "op_index": result.op_index,
            "latency_ms": result.latency_ms,
            "affected_plane_ids": list(result.affected_plane_ids),
            "log_length": result.log_length,
            "plane_count": result.plane_count,
        }

    @app.post("/scenes/{session_id}/undo")
    def undo_scene(session_id: str, to: int = 0):
        return session_summary(_store().undo(session_id, to))

    @app.get("/scenes/{session_id}/export")
    def export_scene(session_id: str):
        data = _store().export_bundle(session_id)
        return Response(content=data, media_type="application/zip")

    return app
