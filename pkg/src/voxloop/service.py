"""HTTP surface: session endpoints, the per-session event stream, annotations, admin.

One ordered server-push stream per session (server-sent events); request
bodies and events are JSON mirroring the canonical formats of the underlying
modules. Command execution runs on a short-lived thread per command so the
stream shows progress and "stop" can interrupt a running task.
"""
from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from . import parser as parser_mod
from .grammar import GeneratorGrammar
from .lf import InvalidForm, from_canonical, validate
from .loop import derive_seed
from .pipeline import ErrorRecord, TERMINALS, funnel_stats
from .session import (
    EmptyCommand,
    NoPendingRouting,
    RoutingPending,
    Session,
    SessionClosed,
    SessionConfig,
)
from .workers import WorkerProfile, WorkerRegistry
from .world import snapshot_from_text


class CommandBody(BaseModel):
    text: str


class RoutingBody(BaseModel):
    answer: bool


class SessionBody(BaseModel):
    worker_id: str


class AnnotationBody(BaseModel):
    lf: Optional[str] = None
    mask: Optional[list[list[int]]] = None


@dataclass
class ServiceState:
    """Everything the endpoints share; sessions own their own locks."""

    parser_model: object
    seg_model: object = None
    session_config: SessionConfig = field(default_factory=lambda: SessionConfig(
        simulated=False, auto_accept_clarifications=False, tick_sleep=0.02))
    worker_registry: WorkerRegistry = field(default_factory=WorkerRegistry)
    registry_dir: Optional[str] = None
    sessions: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    annotation_tasks: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    _task_ids: itertools.count = field(default_factory=lambda: itertools.count(1))

    def next_task_id(self) -> str:
        return f"task{next(self._task_ids):06d}"


def default_service_state(seed: int = 0, seed_pairs: int = 400) -> ServiceState:
    """A ready-to-serve state with a grammar-seeded parser."""
    grammar = GeneratorGrammar()
    pairs = grammar.generate(seed_pairs, iteration=0, seed=derive_seed(seed, "tranche0"))
    model = parser_mod.train(parser_mod.ParserModel(), pairs, 0)
    return ServiceState(parser_model=model)


def _session_or_404(state: ServiceState, session_id: str) -> Session:
    session = state.sessions.get(session_id)
    if session is None:
        raise HTTPException(status_code=404, detail="unknown session")
    return session


def create_app(state: Optional[ServiceState] = None) -> FastAPI:
    state = state or default_service_state()
    app = FastAPI(title="voxloop")
    app.state.service = state

    @app.post("/sessions")
    def create_session(body: SessionBody):
        with state.lock:
            if state.worker_registry.is_blacklisted(body.worker_id):
                raise HTTPException(status_code=403, detail="worker is blacklisted")
            entry = state.worker_registry.status.get(body.worker_id)
            if entry is not None and entry.qualified is False:
                raise HTTPException(status_code=403, detail="worker is not qualified")
            if entry is None:
                # live humans register on first contact
                state.worker_registry.add(WorkerProfile(id=body.worker_id))
                state.worker_registry.status[body.worker_id].qualified = True
            session = Session(body.worker_id, state.parser_model,
                              state.session_config, seg_model=state.seg_model)
            state.sessions[session.id] = session
        return {"session_id": session.id, "status_phase": session.status_phase}

    @app.post("/sessions/{session_id}/command")
    def submit_command(session_id: str, body: CommandBody):
        session = _session_or_404(state, session_id)

        def schedule_clear(delay_ms: int, fn) -> None:
            timer = threading.Timer(delay_ms / 1000.0, fn)
            timer.daemon = True
            timer.start()

        def run() -> None:
            try:
                session.submit_command(body.text, schedule_clear)
            except (EmptyCommand, RoutingPending, SessionClosed) as exc:
                # lost the race with another request; tell the stream
                session._emit("error", {"message": str(exc)})

        # validation failures surface synchronously; the cycle itself runs on
        # a worker thread so the stream shows live progress
        try:
            session._precheck(body.text)
        except EmptyCommand as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except RoutingPending as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except SessionClosed as exc:
            raise HTTPException(status_code=410, detail=str(exc))
        thread = threading.Thread(target=run, daemon=True)
        thread.start()
        return {"accepted": True}

    @app.post("/sessions/{session_id}/routing")
    def answer_routing(session_id: str, body: RoutingBody):
        session = _session_or_404(state, session_id)
        try:
            nxt = session.answer_routing(body.answer)
        except NoPendingRouting as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        if nxt in TERMINALS:
            record = session.records[-1]
            with state.lock:
                state.records.append(record)
                if nxt == "nlu_error":
                    task_id = state.next_task_id()
                    state.annotation_tasks[task_id] = ErrorRecord(
                        "nlu", record.text, parse_canonical=record.parse_canonical,
                        task_id=task_id)
                elif nxt == "vision_error" and record.vision_snapshot:
                    task_id = state.next_task_id()
                    state.annotation_tasks[task_id] = ErrorRecord(
                        "vision", record.vision_query or record.text,
                        snapshot=record.vision_snapshot, task_id=task_id)
            return {"terminal": nxt}
        return {"question": session.routing_question()}

    @app.get("/sessions/{session_id}/events")
    def event_stream(session_id: str, since: int = 0, limit: int = 0):
        """Ordered server-push stream; a positive limit ends it after N events."""
        session = _session_or_404(state, session_id)

        def generate():
            seq = since
            sent = 0
            # late subscribers start from a full snapshot
            snapshot = {"seq": seq - 1, "kind": "snapshot", "data": session.snapshot()}
            yield f"data: {json.dumps(snapshot, sort_keys=True)}\n\n"
            while not session.closed:
                events = session.wait_for_events(seq, timeout=1.0)
                for event in events:
                    seq = event["seq"] + 1
                    sent += 1
                    yield f"data: {json.dumps(event, sort_keys=True)}\n\n"
                    if limit and sent >= limit:
                        return
                if limit and sent >= limit:
                    return

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/sessions/{session_id}/events/poll")
    def poll_events(session_id: str, since: int = 0, wait: float = 0.0):
        """Long-poll fallback used by scripted clients."""
        session = _session_or_404(state, session_id)
        events = session.wait_for_events(since, timeout=wait) if wait else session.events_since(since)
        return {"events": events}

    @app.get("/sessions/{session_id}/score")
    def get_score(session_id: str):
        session = _session_or_404(state, session_id)
        return session.score_payload()

    @app.get("/sessions/{session_id}/gate")
    def get_gate(session_id: str):
        session = _session_or_404(state, session_id)
        # the worker-facing surface never learns why submission is blocked
        return {"allowed": session.gate().allowed}

    @app.post("/annotations/{task_id}")
    def submit_annotation(task_id: str, body: AnnotationBody):
        with state.lock:
            task = state.annotation_tasks.get(task_id)
        if task is None:
            raise HTTPException(status_code=404, detail="unknown annotation task")
        if task.annotated:
            raise HTTPException(status_code=409, detail="task already annotated")
        if task.kind == "nlu":
            if body.lf is None:
                raise HTTPException(status_code=400, detail="nlu task needs an lf payload")
            try:
                form = from_canonical(body.lf)
            except (InvalidForm, json.JSONDecodeError) as exc:
                raise HTTPException(status_code=400, detail=f"unparseable form: {exc}")
            problems = validate(form)
            if problems:
                raise HTTPException(status_code=400, detail="; ".join(problems))
            task.annotation = body.lf
        else:
            if body.mask is None:
                raise HTTPException(status_code=400, detail="vision task needs a mask payload")
            grid, _, _ = snapshot_from_text(task.snapshot)
            voxels = [tuple(v) for v in body.mask]
            for voxel in voxels:
                if len(voxel) != 3 or not grid.in_bounds(voxel):
                    raise HTTPException(status_code=400, detail=f"voxel {voxel} out of bounds")
                if grid.is_air(voxel):
                    raise HTTPException(status_code=400, detail=f"voxel {voxel} is empty space")
            task.annotation = json.dumps(sorted(voxels))
        task.annotated = True
        return {"accepted": True}

    @app.get("/admin/annotations")
    def open_annotations():
        with state.lock:
            return {
                "tasks": [
                    {"task_id": t.task_id, "kind": t.kind, "text": t.text,
                     "parse": t.parse_canonical, "snapshot": t.snapshot,
                     "annotated": t.annotated}
                    for t in state.annotation_tasks.values()
                ]
            }

    @app.get("/admin/funnel")
    def admin_funnel():
        with state.lock:
            stats = funnel_stats(state.records)
        payload = dict(stats.as_rows())
        payload["precision"] = stats.precision
        payload["recall_estimate"] = stats.recall_estimate
        return payload

    @app.get("/admin/gate/{session_id}")
    def admin_gate(session_id: str):
        session = _session_or_404(state, session_id)
        gate = session.gate()
        return {"allowed": gate.allowed, "reasons": list(gate.reasons)}

    @app.get("/admin/registry/{n}")
    def admin_registry(n: int):
        if state.registry_dir is None:
            raise HTTPException(status_code=404, detail="no registry attached")
        import os

        manifest = os.path.join(state.registry_dir, f"tranche_{n:03d}", "manifest.json")
        if not os.path.exists(manifest):
            raise HTTPException(status_code=404, detail=f"no tranche {n}")
        with open(manifest) as f:
            return json.load(f)

    return app
