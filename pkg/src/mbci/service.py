"""HTTP + WebSocket front door for live sessions.

One active session per service instance. Control requests are plain POSTs;
the ordered event stream fans out over `/ws` as JSON objects with the same
shape as the persisted event log (broadcast is a subset of persistence).
"""

from __future__ import annotations

import asyncio
import queue
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel

from .errors import (CorruptSessionError, IngestError, MbciError,
                     ResponseValidationError, SessionError, WeightsError)
from .feedback import SessionMode
from .ingest import StreamConfig, SynthControl
from .model import fixture_weights, load_weights
from .session import SessionDescriptor, SessionRunner, load_session


class StartRequest(BaseModel):
    mode: str
    source_kind: str = "synthetic"
    source_locator: str = ""
    sampling_rate: float = 250.0
    duration_seconds: float | None = None
    seed: int = 0
    subject_id: str = "anon"
    session_id: str | None = None
    weights_path: str | None = None
    latent: float = 0.5
    pace: bool = True


class MiscRequest(BaseModel):
    prompt_minute: float
    value: int
    label: str


class LikertRequest(BaseModel):
    value: int


class SessionService:
    """Owns at most one runner and its fan-out queues."""

    def __init__(self, data_dir: str | Path, default_weights_path: str | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.default_weights_path = default_weights_path
        self._lock = threading.Lock()
        self.runner: SessionRunner | None = None
        self._thread: threading.Thread | None = None
        self._queues: list[queue.Queue] = []

    def _fan_out(self, event: dict) -> None:
        for q in list(self._queues):
            q.put(event)

    def attach_queue(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        self._queues.append(q)
        return q

    def detach_queue(self, q: queue.Queue) -> None:
        if q in self._queues:
            self._queues.remove(q)

    def start(self, req: StartRequest) -> str:
        with self._lock:
            if self.runner is not None and not self.runner.finalized \
                    and self._thread is not None and self._thread.is_alive():
                raise SessionError("a session is already active")
            if req.weights_path:
                weights = load_weights(req.weights_path)
                weights_ref = req.weights_path
            elif self.default_weights_path:
                weights = load_weights(self.default_weights_path)
                weights_ref = self.default_weights_path
            else:
                weights = fixture_weights()
                weights_ref = "<fixture>"
            session_id = req.session_id or uuid.uuid4().hex[:12]
            descriptor = SessionDescriptor(
                session_id=session_id,
                mode=SessionMode(req.mode.upper()),
                subject_id=req.subject_id,
                source=StreamConfig(sampling_rate=req.sampling_rate,
                                    source_kind=req.source_kind,
                                    source_locator=req.source_locator),
                weights_ref=weights_ref,
                seed=req.seed,
                synth_control=SynthControl(latent_mindfulness=req.latent),
                duration_seconds=req.duration_seconds,
            )
            runner = SessionRunner(descriptor, weights, self.data_dir, pace=req.pace)
            runner.subscribe(self._fan_out)
            self.runner = runner
            self._thread = threading.Thread(target=runner.run, daemon=True)
            self._thread.start()
            return session_id

    def stop(self) -> dict:
        with self._lock:
            if self.runner is None:
                raise SessionError("no session to stop")
            runner, thread = self.runner, self._thread
        runner.request_stop()
        if thread is not None:
            thread.join(timeout=30.0)
        runner.stop()
        return {"session_id": runner.descriptor.session_id,
                "status": "complete" if runner.completed else "aborted",
                "directory": str(runner.dir)}

    def status(self) -> dict:
        runner = self.runner
        if runner is None:
            return {"active": False}
        running = self._thread is not None and self._thread.is_alive()
        last_score = next((e["payload"]["score"]
                           for e in reversed(runner.events)
                           if e["type"] == "score_update"), None)
        return {"active": running and not runner.finalized,
                "session_id": runner.descriptor.session_id,
                "mode": runner.descriptor.mode.mode,
                "t": runner._stream_t,
                "finalized": runner.finalized,
                "last_score": last_score,
                "n_events": len(runner.events)}


def create_app(data_dir: str | Path, weights_path: str | None = None) -> FastAPI:
    app = FastAPI(title="mbci session service")
    service = SessionService(data_dir, weights_path)
    app.state.service = service

    def http_error(exc: Exception) -> HTTPException:
        if isinstance(exc, ResponseValidationError):
            return HTTPException(status_code=422, detail=str(exc))
        if isinstance(exc, SessionError):
            return HTTPException(status_code=409, detail=str(exc))
        if isinstance(exc, (IngestError, WeightsError, ValueError)):
            return HTTPException(status_code=400, detail=str(exc))
        return HTTPException(status_code=500, detail=str(exc))

    @app.post("/control/start")
    def control_start(req: StartRequest):
        try:
            return {"session_id": service.start(req)}
        except (MbciError, ValueError) as exc:
            raise http_error(exc)

    @app.post("/control/stop")
    def control_stop():
        try:
            return service.stop()
        except MbciError as exc:
            raise http_error(exc)

    @app.post("/control/misc")
    def control_misc(req: MiscRequest):
        if service.runner is None:
            raise HTTPException(status_code=409, detail="no session")
        try:
            event = service.runner.submit_misc(req.prompt_minute, req.value, req.label)
            return {"ok": True, "event": event}
        except MbciError as exc:
            raise http_error(exc)

    @app.post("/control/likert")
    def control_likert(req: LikertRequest):
        if service.runner is None:
            raise HTTPException(status_code=409, detail="no session")
        try:
            service.runner.submit_likert(req.value)
            return {"ok": True}
        except MbciError as exc:
            raise http_error(exc)

    @app.get("/status")
    def status():
        return service.status()

    @app.get("/misc-table")
    def misc_table():
        from .feedback import MISC_LABELS
        return {"labels": {str(k): v for k, v in MISC_LABELS.items()}}

    @app.get("/sessions/{session_id}/events")
    def session_events(session_id: str):
        # live sessions replay from memory, finished ones from disk
        runner = service.runner
        if runner is not None and runner.descriptor.session_id == session_id:
            return {"events": runner.events, "finalized": runner.finalized}
        try:
            log = load_session(service.data_dir / session_id)
        except CorruptSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"events": log.events, "finalized": True,
                "status": log.status, "likert": log.likert}

    @app.websocket("/ws")
    async def ws_events(ws: WebSocket):
        await ws.accept()
        q = service.attach_queue()
        try:
            while True:
                try:
                    event = await asyncio.get_event_loop().run_in_executor(
                        None, lambda: q.get(timeout=0.5))
                except queue.Empty:
                    # liveness probe keeps the connection responsive
                    await asyncio.sleep(0)
                    continue
                await ws.send_json(event)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            service.detach_queue(q)

    return app
