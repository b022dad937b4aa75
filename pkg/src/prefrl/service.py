"""HTTP facade over a live labeling session.

One active session per process. All mutations serialize through a single
lock; a background thread runs retraining so polls stay responsive, and
GET handlers only ever see fully published snapshots.
"""

from __future__ import annotations

import json
import threading
import uuid
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from prefrl.config import ExperimentConfig
from prefrl.experiment import LoopSession


class SegmentView(BaseModel):
    trajectory_index: int
    start: int
    states: list[int]
    actions: list[int]


class GridGeometry(BaseModel):
    kind: str
    width: int
    height: int
    goal_states: list[int]
    start_state: int


class QueryDocument(BaseModel):
    query_id: str
    round: int
    of_rounds: int
    segment_length: int
    seg1: SegmentView
    seg2: SegmentView
    geometry: GridGeometry


class SessionDocument(BaseModel):
    session_id: str
    config_digest: str
    round: int
    of_rounds: int
    status: str  # awaiting_label | training | done
    has_pending_query: bool
    metrics: list[dict]
    final_suboptimality: Optional[float] = None


class AnswerBody(BaseModel):
    label: str  # "1" | "0" | "tie"


LABEL_MAP = {"1": 1.0, "0": 0.0, "tie": 0.5}


def _geometry(cfg: ExperimentConfig, session: LoopSession) -> GridGeometry:
    env = cfg.environment
    mdp = session.mdp
    if env.kind == "grid":
        width, height = env.width, env.height
    else:
        width, height = mdp.n_states, 1
    # goal cells: states whose reward is maximal for every action
    per_state = mdp.true_reward.min(axis=1)
    goal_states = [int(s) for s in np.flatnonzero(per_state >= per_state.max())
                   ] if per_state.max() > 0 else []
    return GridGeometry(
        kind=env.kind,
        width=width,
        height=height,
        goal_states=goal_states,
        start_state=mdp.start_state,
    )


class SessionRunner:
    """Owns the loop session and the single background training job."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.session = LoopSession(cfg)
        self.session_id = uuid.uuid4().hex
        self.config_digest = self.session.mdp.content_hash()[:16]
        self._lock = threading.Lock()
        self._status = "training"
        self._query_doc: QueryDocument | None = None
        self._final_subopt: float | None = None
        self._worker: threading.Thread | None = None
        self._start_training()

    # -- internals ---------------------------------------------------------

    def _start_training(self) -> None:
        self._status = "training"
        self._worker = threading.Thread(target=self._train_step, daemon=True)
        self._worker.start()

    def _train_step(self) -> None:
        session = self.session
        if session.done:
            policy, _ = session.finalize()
            from prefrl.mdp import suboptimality

            final = suboptimality(session.mdp, policy)
            with self._lock:
                self._final_subopt = final
                self._status = "done"
                self._query_doc = None
            return
        pair = session.next_query()
        doc = QueryDocument(
            query_id=uuid.uuid4().hex,
            round=session.round + 1,
            of_rounds=self.cfg.query_budget,
            segment_length=self.cfg.segment_length,
            seg1=SegmentView(
                trajectory_index=pair.seg1.trajectory_index,
                start=pair.seg1.start,
                states=pair.seg1.states.tolist(),
                actions=pair.seg1.actions.tolist(),
            ),
            seg2=SegmentView(
                trajectory_index=pair.seg2.trajectory_index,
                start=pair.seg2.start,
                states=pair.seg2.states.tolist(),
                actions=pair.seg2.actions.tolist(),
            ),
            geometry=_geometry(self.cfg, session),
        )
        with self._lock:
            self._query_doc = doc
            self._status = "awaiting_label"

    def join(self, timeout: float | None = None) -> None:
        worker = self._worker
        if worker is not None:
            worker.join(timeout)

    # -- snapshot reads ----------------------------------------------------

    def session_document(self) -> SessionDocument:
        with self._lock:
            return SessionDocument(
                session_id=self.session_id,
                config_digest=self.config_digest,
                round=self.session.round,
                of_rounds=self.cfg.query_budget,
                status=self._status,
                has_pending_query=self._query_doc is not None
                and self._status == "awaiting_label",
                metrics=[
                    {
                        "round": m.round,
                        "suboptimality": m.suboptimality,
                        "reward_correlation": m.reward_correlation,
                        "query_score": m.query_score,
                        "wall_ms": m.wall_ms,
                    }
                    for m in self.session.metrics
                ],
                final_suboptimality=self._final_subopt,
            )

    def query_document(self) -> QueryDocument:
        with self._lock:
            if self._status != "awaiting_label" or self._query_doc is None:
                raise HTTPException(
                    status_code=409, detail=f"status is {self._status}"
                )
            return self._query_doc

    def answer(self, query_id: str, label: str) -> None:
        if label not in LABEL_MAP:
            raise HTTPException(status_code=400, detail=f"bad label {label!r}")
        with self._lock:
            if self._status != "awaiting_label" or self._query_doc is None:
                raise HTTPException(status_code=409, detail="no query awaiting a label")
            if self._query_doc.query_id != query_id:
                raise HTTPException(status_code=409, detail="stale or unknown query id")
            self.session.submit_label(LABEL_MAP[label])
            self._query_doc = None
            self._start_training()


def create_app(
    cfg: ExperimentConfig, static_dir: str | None = None
) -> FastAPI:
    app = FastAPI(title="preference labeling service")
    runner = SessionRunner(cfg)
    app.state.runner = runner

    @app.get("/api/session")
    def get_session() -> SessionDocument:
        return runner.session_document()

    @app.get("/api/query/next")
    def get_next_query() -> QueryDocument:
        return runner.query_document()

    @app.post("/api/query/{query_id}/answer", status_code=202)
    def post_answer(query_id: str, body: AnswerBody) -> dict:
        runner.answer(query_id, body.label)
        return {"accepted": True, "query_id": query_id}

    @app.get("/api/metrics")
    def get_metrics() -> Response:
        doc = runner.session_document()
        lines = "".join(json.dumps(m) + "\n" for m in doc.metrics)
        return Response(content=lines, media_type="application/json")

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
