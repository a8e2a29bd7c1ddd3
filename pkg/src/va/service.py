"""HTTP facade: ask/clarify dialogue, feedback capture, health and latency stats.

Sessions live in memory with a 30-minute idle eviction; per-session turns
are serialized behind an exclusive lock so concurrent requests on one
session never interleave transcripts. Feedback additionally lands in an
append-only JSONL log so survey-style analysis survives restarts, and
every asked question is logged for later topic analysis.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import AppConfig, build_pipeline
from .evalharness import timing_stats
from .llm import CallLog
from .reflection import (
    FALLBACK_CLARIFICATION,
    ReflectionSession,
    State,
    TurnDeps,
    TurnOutcome,
    run_turn,
)
from .retrieval import PipelineDeps

SESSION_IDLE_SECONDS = 30 * 60


class AskRequest(BaseModel):
    session_id: str | None = None
    question: str = ""


class ClarifyRequest(BaseModel):
    clarification_answer: str = ""


class FeedbackRequest(BaseModel):
    session_id: str = ""
    turn_index: int = -1
    helpfulness: int = 0


@dataclass
class SessionRecord:
    session_id: str
    created_at: float
    reflection: ReflectionSession
    turns: list[TurnOutcome] = field(default_factory=list)
    feedback: list[tuple[int, int]] = field(default_factory=list)
    last_active: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock)


class ServiceState:
    def __init__(self, deps: TurnDeps, config: AppConfig):
        self.deps = deps
        self.config = config
        self.sessions: dict[str, SessionRecord] = {}
        self.latencies_ms: list[float] = []
        self.lock = threading.Lock()

    def new_session(self) -> SessionRecord:
        session_id = secrets.token_hex(16)
        record = SessionRecord(
            session_id=session_id,
            created_at=time.time(),
            reflection=ReflectionSession(session_id=session_id),
            last_active=time.time(),
        )
        with self.lock:
            self.sessions[session_id] = record
        return record

    def get_session(self, session_id: str) -> SessionRecord | None:
        with self.lock:
            record = self.sessions.get(session_id)
            if record is not None:
                record.last_active = time.time()
            return record

    def evict_idle(self) -> None:
        cutoff = time.time() - SESSION_IDLE_SECONDS
        with self.lock:
            stale = [sid for sid, rec in self.sessions.items() if rec.last_active < cutoff]
            for sid in stale:
                del self.sessions[sid]

    def record_latency(self, latency_ms: float) -> None:
        with self.lock:
            self.latencies_ms.append(latency_ms)

    def append_log(self, path: str | None, payload: dict) -> None:
        if not path:
            return
        line = json.dumps(payload, sort_keys=True) + "\n"
        with self.lock:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(line)


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def _provider_unreachable(outcome: TurnOutcome) -> bool:
    return any(note.startswith("provider_unreachable") for _, note in outcome.trace)


def _turn_response(state: ServiceState, record: SessionRecord, outcome: TurnOutcome) -> dict:
    answered = outcome.kind == "answer"
    return {
        "session_id": record.session_id,
        "status": "answered" if answered else "clarification_needed",
        "answer": outcome.text if answered else None,
        "clarification_question": None if answered else outcome.text,
        "sources": [
            {"chunk_id": chunk_id, "score": score} for chunk_id, score in outcome.sources
        ],
        "trace": {
            "rewrites": record.reflection.rewrites_used,
            "regenerations": record.reflection.regenerations_used_total,
            "elapsed_ms": outcome.elapsed_ms,
        },
    }


def create_app(config: AppConfig, deps: TurnDeps | None = None) -> FastAPI:
    """Build the service; `deps` may be injected pre-built (tests) or loaded from config."""
    if deps is None:
        pipeline = build_pipeline(config, call_log=CallLog())
        deps = TurnDeps(pipeline=pipeline, config=config.reflection)
    state = ServiceState(deps, config)
    app = FastAPI(title="va-assistant")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=config.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def run_and_respond(record: SessionRecord, user_input: str) -> JSONResponse:
        started = time.monotonic()
        with record.lock:
            outcome = run_turn(record.reflection, user_input, state.deps)
            record.turns.append(outcome)
        state.record_latency((time.monotonic() - started) * 1000.0)
        if _provider_unreachable(outcome):
            return JSONResponse(status_code=503, content={"detail": outcome.text})
        return JSONResponse(status_code=200, content=_turn_response(state, record, outcome))

    @app.post("/api/ask")
    def ask(body: AskRequest) -> JSONResponse:
        state.evict_idle()
        question = body.question.strip()
        if not question:
            return JSONResponse(status_code=400, content={"detail": "question must be non-empty"})
        if body.session_id is not None:
            record = state.get_session(body.session_id)
            if record is None:
                return JSONResponse(status_code=404, content={"detail": "unknown session"})
        else:
            record = state.new_session()
        state.append_log(
            state.config.question_log_path,
            {"ts": _now_iso(), "session_id": record.session_id, "question": question},
        )
        # Asking anew while a clarification is pending starts a fresh lifecycle.
        if record.reflection.state is State.AWAIT_CLARIFICATION:
            record.reflection.state = State.RETRIEVE
        return run_and_respond(record, question)

    @app.post("/api/sessions/{session_id}/clarify")
    def clarify(session_id: str, body: ClarifyRequest) -> JSONResponse:
        state.evict_idle()
        record = state.get_session(session_id)
        if record is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        if record.reflection.state is not State.AWAIT_CLARIFICATION:
            return JSONResponse(
                status_code=409, content={"detail": "session is not awaiting clarification"}
            )
        reply = body.clarification_answer.strip()
        if not reply:
            return JSONResponse(
                status_code=400, content={"detail": "clarification_answer must be non-empty"}
            )
        return run_and_respond(record, reply)

    @app.post("/api/feedback")
    def feedback(body: FeedbackRequest) -> Response:
        if body.helpfulness not in (1, 2, 3, 4, 5):
            return JSONResponse(
                status_code=400, content={"detail": "helpfulness must be between 1 and 5"}
            )
        record = state.get_session(body.session_id)
        if record is None:
            return JSONResponse(status_code=404, content={"detail": "unknown session"})
        if not 0 <= body.turn_index < len(record.turns):
            return JSONResponse(status_code=404, content={"detail": "unknown turn"})
        with record.lock:
            record.feedback.append((body.turn_index, body.helpfulness))
        state.append_log(
            state.config.feedback_log_path,
            {
                "ts": _now_iso(),
                "session_id": record.session_id,
                "turn_index": body.turn_index,
                "helpfulness": body.helpfulness,
            },
        )
        return Response(status_code=204)

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/api/stats")
    def stats() -> dict:
        with state.lock:
            latencies = list(state.latencies_ms)
        if not latencies:
            return {"count": 0, "mean_ms": None, "std_ms": None}
        mean, std = timing_stats(latencies)
        return {"count": len(latencies), "mean_ms": mean, "std_ms": std}

    static_dir = config.static_dir
    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def make_turn_deps(pipeline: PipelineDeps, config: AppConfig) -> TurnDeps:
    return TurnDeps(pipeline=pipeline, config=config.reflection)
