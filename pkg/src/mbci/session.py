"""Live-session orchestration: source -> windows -> score -> scene -> events,
with everything persisted for offline analysis.

A session directory holds `eeg.raw` (binary recording), `events.log` (one
JSON record per line: type, t, payload) and `manifest.json` (descriptor,
checksums, completion status). Broadcast is a strict subset of persistence:
every message a subscriber sees is already on the persisted event path.
Event times are seconds of stream time from session start; the manifest
carries the single wall-clock anchor.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time as _time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import recording
from .errors import CorruptSessionError, SessionError
from .feedback import (PseudofeedbackGenerator, SceneState, SessionMode,
                       build_schedule, validate_likert, validate_misc)
from .ingest import StreamConfig, SynthControl, WindowAssembler, open_source
from .model import GapMarker, ModelWeights, ScoringPipeline

MANIFEST_VERSION = 1


@dataclass
class SessionDescriptor:
    session_id: str
    mode: SessionMode
    subject_id: str
    source: StreamConfig
    weights_ref: str = ""
    seed: int = 0
    synth_control: SynthControl | None = None
    duration_seconds: float | None = None  # truncate the schedule for desk runs
    scene_id: str = "candle"
    guidance_volume: float = 0.5


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class SessionRunner:
    """Single-owner pipeline for one session; safe to drive from one thread
    while control calls (submit_misc, stop) arrive from others."""

    def __init__(self, descriptor: SessionDescriptor, weights: ModelWeights,
                 data_dir: str | Path, pace: bool = False):
        self.descriptor = descriptor
        self.weights = weights
        self.pace = pace
        self.dir = Path(data_dir) / descriptor.session_id
        if self.dir.exists():
            raise SessionError(f"session directory already exists: {self.dir}")
        self.dir.mkdir(parents=True)

        self._lock = threading.Lock()
        self._subscribers: list[Callable[[dict], None]] = []
        self._stop_flag = threading.Event()
        self._events_fh = open(self.dir / "events.log", "w")
        self._recorder = recording.RecordingWriter(self.dir / "eeg.raw",
                                                   descriptor.source.sampling_rate)
        self.events: list[dict] = []
        self.completed = False
        self.finalized = False
        self.likert_value: int | None = None
        self.started_at = datetime.now(timezone.utc).isoformat()
        self._answered_prompts: set[float] = set()
        self._prompted: set[float] = set()
        self._stream_t = 0.0
        self.pipeline: ScoringPipeline | None = None

    # -- broadcast / persistence ------------------------------------------

    def subscribe(self, callback: Callable[[dict], None]) -> None:
        with self._lock:
            self._subscribers.append(callback)

    def _emit(self, kind: str, t: float, payload: dict) -> dict:
        event = {"type": kind, "t": round(float(t), 6), "payload": payload}
        with self._lock:
            if self.finalized:
                raise SessionError("session already finalized")
            self._events_fh.write(json.dumps(event, sort_keys=True) + "\n")
            self.events.append(event)
            subscribers = list(self._subscribers)
        for cb in subscribers:
            cb(event)
        return event

    # -- control api -------------------------------------------------------

    def submit_misc(self, prompt_minute: float, value: int, label: str) -> dict:
        response = validate_misc(value, label, prompt_time=prompt_minute)
        with self._lock:
            if prompt_minute not in self._prompted:
                raise SessionError(f"no MISC prompt was issued at minute {prompt_minute}")
            if prompt_minute in self._answered_prompts:
                raise SessionError(f"prompt at minute {prompt_minute} already answered")
            self._answered_prompts.add(prompt_minute)
        return self._emit("misc_ack", self._stream_t,
                          {"prompt_minute": prompt_minute, "value": response.value,
                           "label": response.label})

    def submit_likert(self, value: int) -> None:
        checked = validate_likert(value)
        with self._lock:
            if self.finalized:
                raise SessionError("session already finalized")
            self.likert_value = checked.value

    def request_stop(self) -> None:
        self._stop_flag.set()

    # -- pipeline ----------------------------------------------------------

    def run(self) -> None:
        d = self.descriptor
        stream = open_source(d.source, duration=d.duration_seconds, seed=d.seed,
                             control=d.synth_control)
        assembler = WindowAssembler(d.source)
        self.pipeline = ScoringPipeline(self.weights, d.source.sampling_rate,
                                        deadline_seconds=d.source.hop_seconds)
        pseudo = PseudofeedbackGenerator(seed=d.seed + 7919)
        scene = SceneState(scene_id=d.scene_id, guidance_volume=d.guidance_volume)
        schedule = [(e.minute * 60.0, e) for e in build_schedule(d.mode)]
        next_event = 0
        stop_t = d.duration_seconds
        wall_start = _time.perf_counter()

        self._emit("session_status", 0.0,
                   {"status": "running", "mode": d.mode.mode, "session_id": d.session_id})

        def fire_schedule(now: float):
            nonlocal next_event, scene
            while next_event < len(schedule) and schedule[next_event][0] <= now:
                t_ev, ev = schedule[next_event]
                next_event += 1
                if ev.kind == "misc_prompt":
                    with self._lock:
                        self._prompted.add(float(ev.payload["prompt_minute"]))
                    self._emit("misc_prompt", t_ev, dict(ev.payload))
                elif ev.kind == "scene_reset":
                    scene = self._reset_scene(scene)
                    self._emit("scene_reset", t_ev,
                               {"interval_start": ev.payload["interval_start"],
                                "scene_id": scene.scene_id})
                elif ev.kind == "session_end":
                    self._emit("session_status", t_ev, {"status": "schedule_complete"})
                    self.completed = True

        for rec in stream:
            self._stream_t = rec.timestamp
            fire_schedule(rec.timestamp)
            self._recorder.append(np.float32([rec.value]))
            for window in assembler.push(rec):
                t_done = window.start_time + d.source.window_seconds
                result = self.pipeline.score_window(window)
                if isinstance(result, GapMarker):
                    self._emit("gap", t_done, {"window_start": result.window_start,
                                               "reason": result.reason})
                    continue
                self._emit("score_update", t_done,
                           {"score": result.score, "probability": result.probability,
                            "window_start": result.window_start,
                            "latency_ms": round(result.latency_ms, 3)})
                if result.latency_ms > d.source.hop_seconds * 1e3:
                    self._emit("overrun", t_done,
                               {"window_start": result.window_start,
                                "latency_ms": round(result.latency_ms, 3)})
                if d.mode.feedback_enabled:
                    if d.mode.mode == "PMS":
                        driving = pseudo.next()
                        source = "pseudo"
                    else:
                        driving = result.score
                        source = "cnn"
                    from .feedback import map_score_to_scene
                    scene = map_score_to_scene(driving, scene, timestamp=t_done)
                    self._emit("scene_state", t_done, {
                        "scene_id": scene.scene_id,
                        "element_intensity": scene.element_intensity,
                        "background_brightness": scene.background_brightness,
                        "background_volume": scene.background_volume,
                        "guidance_volume": scene.guidance_volume,
                        "source": source,
                        "driving_score": driving,
                    })
            if self.pace:
                target = wall_start + rec.timestamp
                lag = target - _time.perf_counter()
                if lag > 0:
                    _time.sleep(min(lag, 0.25))
            if self._stop_flag.is_set():
                break
            if self.completed:
                break
            if stop_t is not None and rec.timestamp >= stop_t:
                break
        else:
            # stream exhausted: it covered [0, T), so the clock now reads T
            if not self._stop_flag.is_set():
                self._stream_t += 1.0 / d.source.sampling_rate
                fire_schedule(self._stream_t)

    def _reset_scene(self, scene: SceneState) -> SceneState:
        from .feedback import SCENE_CATALOG
        idx = (SCENE_CATALOG.index(scene.scene_id) + 1) % len(SCENE_CATALOG)
        return SceneState(scene_id=SCENE_CATALOG[idx], element_intensity=0.0,
                          background_brightness=0.0, background_volume=0.0,
                          guidance_volume=scene.guidance_volume,
                          timestamp=scene.timestamp)

    # -- finalization ------------------------------------------------------

    def stop(self) -> Path:
        """Flush, fsync, and write the manifest; returns the session directory."""
        with self._lock:
            if self.finalized:
                return self.dir
            self.finalized = True
            status = "complete" if self.completed else "aborted"
            self._events_fh.write(json.dumps(
                {"type": "session_status", "t": round(self._stream_t, 6),
                 "payload": {"status": status}}, sort_keys=True) + "\n")
            self._events_fh.flush()
            os.fsync(self._events_fh.fileno())
            self._events_fh.close()
            self._recorder.close()
        d = self.descriptor
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "session_id": d.session_id,
            "subject_id": d.subject_id,
            "mode": d.mode.mode,
            "misc_interval_minutes": d.mode.misc_interval_minutes,
            "duration_minutes": d.mode.duration_minutes,
            "sampling_rate": d.source.sampling_rate,
            "source_kind": d.source.source_kind,
            "weights_ref": d.weights_ref,
            "seed": d.seed,
            "started_wall_clock": self.started_at,
            "status": status,
            "likert": self.likert_value,
            "n_samples": self._recorder.n_samples,
            "n_events": len(self.events) + 1,
            "eeg_sha256": _sha256_file(self.dir / "eeg.raw"),
            "events_sha256": _sha256_file(self.dir / "events.log"),
        }
        tmp = self.dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        tmp.rename(self.dir / "manifest.json")
        return self.dir


# ---------------------------------------------------------------------------
# Persisted-session loading
# ---------------------------------------------------------------------------


@dataclass
class SessionLog:
    session_id: str
    mode: str
    subject_id: str
    sampling_rate: float
    status: str
    likert: int | None
    events: list[dict]
    samples: np.ndarray
    manifest: dict = field(repr=False, default_factory=dict)

    def events_of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["type"] == kind]


def load_session(session_dir: str | Path) -> SessionLog:
    """Load a persisted session; incomplete or tampered data never parses as
    a complete session."""
    session_dir = Path(session_dir)
    manifest_path = session_dir / "manifest.json"
    if not manifest_path.exists():
        raise CorruptSessionError(
            f"incomplete session (no manifest; killed mid-write?): {session_dir}")
    manifest = json.loads(manifest_path.read_text())
    for name, key in (("eeg.raw", "eeg_sha256"), ("events.log", "events_sha256")):
        path = session_dir / name
        if not path.exists():
            raise CorruptSessionError(f"incomplete session: missing {name}")
        if _sha256_file(path) != manifest.get(key):
            raise CorruptSessionError(f"checksum mismatch for {name} in {session_dir}")
    header, samples = recording.read_recording(session_dir / "eeg.raw")
    events = []
    with open(session_dir / "events.log") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    ts = [e["t"] for e in events]
    if ts != sorted(ts):
        raise CorruptSessionError("event log timestamps are not non-decreasing")
    return SessionLog(
        session_id=manifest["session_id"], mode=manifest["mode"],
        subject_id=manifest["subject_id"], sampling_rate=manifest["sampling_rate"],
        status=manifest["status"], likert=manifest.get("likert"),
        events=events, samples=samples, manifest=manifest)


def run_headless_session(descriptor: SessionDescriptor, weights: ModelWeights,
                         data_dir: str | Path) -> Path:
    """Run a session start-to-stop in the calling thread (CLI / test path)."""
    runner = SessionRunner(descriptor, weights, data_dir)
    try:
        runner.run()
    finally:
        runner.stop()
    return runner.dir
