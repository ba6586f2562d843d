"""Session-oriented HTTP API for scenario editing and generation.

Checkpoints load once and are shared read-only across sessions; each session
holds only scene state (working scenario, pending conditions, undo/redo
stacks, cached rollouts).  Every mutating request carries the client's
``base_revision`` and conflicts with a 409 if the session moved on.  A
server-push channel (server-sent events) streams per-denoise-step progress
and rollout-ready events.

Endpoints (all JSON):
    POST   /sessions                              create (inline scenario or path+index)
    GET    /sessions/{sid}                        scene summary
    DELETE /sessions/{sid}
    POST   /sessions/{sid}/agents                 add agent
    POST   /sessions/{sid}/agents/{aid}/edit      move/rotate/resize/revelocity
    DELETE /sessions/{sid}/agents/{aid}           remove agent
    PUT    /sessions/{sid}/conditions/{aid}       set condition
    DELETE /sessions/{sid}/conditions/{aid}       clear condition
    POST   /sessions/{sid}/undo | /redo
    POST   /sessions/{sid}/generate               run the experts; summary + rollout id
    GET    /sessions/{sid}/rollouts/{rid}         full rollout payload
    GET    /sessions/{sid}/rollouts/{rid}/metrics summary metrics only
    GET    /sessions/{sid}/events                 SSE push channel
    POST   /sessions/{sid}/export                 save the working scenario to a file
"""
from __future__ import annotations

import asyncio
import itertools
import json
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from . import dataio
from .experts import ExpertRegistry, SceneRollout
from .metrics import scenario_collision_rate
from .scene import (
    Agent,
    AgentState,
    AgentType,
    ConditionContext,
    Scenario,
    SceneError,
)


# ---------------------------------------------------------------------------
# request/response models


class CreateSession(BaseModel):
    scenario: dict | None = None  # inline scenario record
    path: str | None = None  # or a server-side NDJSON file
    index: int = 0


class EditAgent(BaseModel):
    base_revision: int
    x: float | None = None
    y: float | None = None
    heading: float | None = None
    vx: float | None = None
    vy: float | None = None
    length: float | None = None
    width: float | None = None


class AddAgent(BaseModel):
    base_revision: int
    agent_type: str = "vehicle"
    x: float
    y: float
    heading: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    length: float = 4.6
    width: float = 2.0
    agent_id: str | None = None


class SetCondition(BaseModel):
    base_revision: int
    target_x: float
    target_y: float
    target_speed: float = 0.0
    target_heading: float = 0.0
    length: float | None = None
    width: float | None = None


class GenerateRequest(BaseModel):
    base_revision: int
    seed: int = 0
    replan_interval: int | None = None  # steps; None: single open-loop pass
    horizon_steps: int | None = None


class ExportRequest(BaseModel):
    path: str


class MutateRequest(BaseModel):
    base_revision: int


# ---------------------------------------------------------------------------
# session state


@dataclass
class _Snapshot:
    scenario: Scenario
    conditions: dict[str, ConditionContext]


@dataclass
class Session:
    sid: str
    scenario: Scenario
    conditions: dict[str, ConditionContext] = field(default_factory=dict)
    revision: int = 0
    undo_stack: list[_Snapshot] = field(default_factory=list)
    redo_stack: list[_Snapshot] = field(default_factory=list)
    rollouts: dict[str, dict] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)
    generate_cache: dict[tuple, str] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    next_agent_id: int = 0

    def snapshot(self) -> _Snapshot:
        return _Snapshot(self.scenario, dict(self.conditions))

    def push_undo(self) -> None:
        self.undo_stack.append(self.snapshot())
        self.redo_stack.clear()

    def emit(self, kind: str, **payload) -> None:
        self.events.append({"id": len(self.events), "kind": kind, **payload})


def scene_summary(session: Session) -> dict:
    sc = session.scenario
    return {
        "session_id": session.sid,
        "revision": session.revision,
        "scenario_id": sc.scenario_id,
        "ego_id": sc.ego_id,
        "dt": sc.dt,
        "history_length": len(sc.agents[0].history) if sc.agents else 0,
        "map": {
            "lanes": [
                {"id": ln.id, "points": ln.points.tolist(), "attributes": ln.attributes.tolist()}
                for ln in sc.roadmap.lanes
            ]
        },
        "agents": [
            {
                "id": a.id,
                "type": a.agent_type.value,
                "x": a.current.position[0],
                "y": a.current.position[1],
                "heading": a.current.heading,
                "vx": a.current.velocity[0],
                "vy": a.current.velocity[1],
                "speed": a.current.speed,
                "length": a.current.length,
                "width": a.current.width,
                "valid": a.current.valid,
                "history": [s.position.tolist() for s in a.history if s.valid],
            }
            for a in sc.agents
        ],
        "conditions": {
            aid: {
                "target_x": c.target_position[0],
                "target_y": c.target_position[1],
                "target_speed": c.target_speed,
                "target_heading": c.target_heading,
                "length": c.length,
                "width": c.width,
            }
            for aid, c in session.conditions.items()
        },
    }


def _replace_agent(scenario: Scenario, agent: Agent) -> Scenario:
    agents = tuple(agent if a.id == agent.id else a for a in scenario.agents)
    return scenario.with_agents(agents)


def _edited_state(state: AgentState, req: EditAgent) -> AgentState:
    return AgentState(
        (state.position[0] if req.x is None else req.x, state.position[1] if req.y is None else req.y),
        (state.velocity[0] if req.vx is None else req.vx, state.velocity[1] if req.vy is None else req.vy),
        state.heading if req.heading is None else req.heading,
        state.length if req.length is None else req.length,
        state.width if req.width is None else req.width,
        state.agent_type,
        True,
    )


def rollout_summary(rollout: SceneRollout, conditions: dict[str, ConditionContext],
                    iou_threshold: float = 0.1) -> dict:
    per_agent = []
    for a in rollout.agents:
        endpoint = a.trajectory.positions[-1]
        entry = {
            "agent_id": a.agent_id,
            "expert": a.expert,
            "chosen_index": a.chosen_index,
            "endpoint": endpoint.tolist(),
            "target": None,
            "endpoint_error": None,
        }
        cond = conditions.get(a.agent_id)
        if cond is not None and cond.valid:
            entry["target"] = cond.target_position.tolist()
            entry["endpoint_error"] = float(np.linalg.norm(endpoint - cond.target_position))
        per_agent.append(entry)
    scr = scenario_collision_rate([rollout], threshold=iou_threshold) if rollout.agents else 0.0
    return {"agents": per_agent, "scr_percent": scr, "seed": rollout.seed,
            "replan_interval": rollout.replan_interval}


# ---------------------------------------------------------------------------
# app factory


def create_app(registry: ExpertRegistry, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="trafficlab", version="0.1.0")
    sessions: dict[str, Session] = {}
    counter = itertools.count(1)

    def get_session(sid: str) -> Session:
        session = sessions.get(sid)
        if session is None:
            raise HTTPException(404, f"unknown session {sid!r}")
        return session

    def check_revision(session: Session, base_revision: int) -> None:
        if base_revision != session.revision:
            raise HTTPException(
                409,
                f"stale revision {base_revision}: session is at {session.revision}",
            )

    @app.post("/sessions")
    def create_session(req: CreateSession):
        if (req.scenario is None) == (req.path is None):
            raise HTTPException(422, "provide exactly one of 'scenario' or 'path'")
        try:
            if req.scenario is not None:
                record = dataio.record_from_dict(req.scenario, where="request")
            else:
                stream = dataio.load(req.path)
                record = next(
                    (r for i, r in enumerate(stream) if i == req.index), None
                )
                if record is None:
                    raise HTTPException(404, f"no record {req.index} in {req.path}")
        except dataio.SchemaError as e:
            raise HTTPException(422, str(e)) from None
        except FileNotFoundError as e:
            raise HTTPException(404, str(e)) from None
        if not isinstance(record, Scenario):
            raise HTTPException(422, "record is a raw recording; preprocess it into scenario windows first")
        session = Session(sid=f"s{next(counter):05d}", scenario=record)
        sessions[session.sid] = session
        return scene_summary(session)

    @app.get("/sessions/{sid}")
    def get_summary(sid: str):
        return scene_summary(get_session(sid))

    @app.delete("/sessions/{sid}")
    def delete_session(sid: str):
        get_session(sid)
        del sessions[sid]
        return {"deleted": sid}

    @app.post("/sessions/{sid}/agents/{aid}/edit")
    def edit_agent(sid: str, aid: str, req: EditAgent):
        session = get_session(sid)
        with session.lock:
            check_revision(session, req.base_revision)
            sc = session.scenario
            if not sc.has_agent(aid):
                raise HTTPException(404, f"unknown agent {aid!r}")
            agent = sc.agent(aid)
            try:
                new_state = _edited_state(agent.current, req)
            except SceneError as e:
                raise HTTPException(422, f"invalid pose: {e}") from None
            session.push_undo()
            updated = Agent(agent.id, agent.history[:-1] + (new_state,), agent.future)
            session.scenario = _replace_agent(sc, updated)
            session.revision += 1
            session.emit("scene_edited", agent_id=aid, revision=session.revision)
            return scene_summary(session)

    @app.post("/sessions/{sid}/agents")
    def add_agent(sid: str, req: AddAgent):
        session = get_session(sid)
        with session.lock:
            check_revision(session, req.base_revision)
            sc = session.scenario
            aid = req.agent_id or f"user{session.next_agent_id:03d}"
            session.next_agent_id += 1
            if sc.has_agent(aid):
                raise HTTPException(409, f"agent {aid!r} already exists")
            try:
                agent_type = AgentType.from_tag(req.agent_type)
                state = AgentState((req.x, req.y), (req.vx, req.vy), req.heading,
                                   req.length, req.width, agent_type, True)
            except SceneError as e:
                raise HTTPException(422, f"invalid agent: {e}") from None
            # histories stay aligned: pad the new agent with invalid copies
            n_hist = len(sc.agents[0].history) if sc.agents else 1
            pad = tuple(
                AgentState(state.position, state.velocity, state.heading, state.length,
                           state.width, agent_type, False)
                for _ in range(n_hist - 1)
            )
            session.push_undo()
            session.scenario = sc.with_agents(sc.agents + (Agent(aid, pad + (state,)),))
            session.revision += 1
            session.emit("agent_added", agent_id=aid, revision=session.revision)
            out = scene_summary(session)
            out["agent_id"] = aid
            return out

    @app.delete("/sessions/{sid}/agents/{aid}")
    def remove_agent(sid: str, aid: str, req: MutateRequest):
        session = get_session(sid)
        with session.lock:
            check_revision(session, req.base_revision)
            sc = session.scenario
            if not sc.has_agent(aid):
                raise HTTPException(404, f"unknown agent {aid!r}")
            if aid == sc.ego_id:
                raise HTTPException(422, "cannot remove the ego agent")
            session.push_undo()
            session.scenario = sc.with_agents(tuple(a for a in sc.agents if a.id != aid))
            session.conditions.pop(aid, None)
            session.revision += 1
            session.emit("agent_removed", agent_id=aid, revision=session.revision)
            return scene_summary(session)

    @app.put("/sessions/{sid}/conditions/{aid}")
    def set_condition(sid: str, aid: str, req: SetCondition):
        session = get_session(sid)
        with session.lock:
            check_revision(session, req.base_revision)
            sc = session.scenario
            if not sc.has_agent(aid):
                raise HTTPException(404, f"unknown agent {aid!r}")
            agent = sc.agent(aid)
            session.push_undo()
            session.conditions[aid] = ConditionContext(
                (req.target_x, req.target_y),
                req.target_speed,
                req.target_heading,
                req.length if req.length is not None else agent.current.length,
                req.width if req.width is not None else agent.current.width,
                True,
            )
            session.revision += 1
            session.emit("condition_set", agent_id=aid, revision=session.revision)
            return scene_summary(session)

    @app.delete("/sessions/{sid}/conditions/{aid}")
    def clear_condition(sid: str, aid: str, req: MutateRequest):
        session = get_session(sid)
        with session.lock:
            check_revision(session, req.base_revision)
            if aid in session.conditions:
                session.push_undo()
                del session.conditions[aid]
                session.revision += 1
                session.emit("condition_cleared", agent_id=aid, revision=session.revision)
            return scene_summary(session)

    @app.post("/sessions/{sid}/undo")
    def undo(sid: str):
        session = get_session(sid)
        with session.lock:
            if not session.undo_stack:
                raise HTTPException(409, "nothing to undo")
            session.redo_stack.append(session.snapshot())
            snap = session.undo_stack.pop()
            session.scenario, session.conditions = snap.scenario, dict(snap.conditions)
            session.revision += 1
            session.emit("undo", revision=session.revision)
            return scene_summary(session)

    @app.post("/sessions/{sid}/redo")
    def redo(sid: str):
        session = get_session(sid)
        with session.lock:
            if not session.redo_stack:
                raise HTTPException(409, "nothing to redo")
            session.undo_stack.append(session.snapshot())
            snap = session.redo_stack.pop()
            session.scenario, session.conditions = snap.scenario, dict(snap.conditions)
            session.revision += 1
            session.emit("redo", revision=session.revision)
            return scene_summary(session)

    @app.post("/sessions/{sid}/generate")
    def generate(sid: str, req: GenerateRequest):
        session = get_session(sid)
        with session.lock:
            check_revision(session, req.base_revision)
            cache_key = (session.revision, req.seed, req.replan_interval, req.horizon_steps)
            if cache_key in session.generate_cache:
                rid = session.generate_cache[cache_key]
                return {"rollout_id": rid, "revision": session.revision,
                        "summary": session.rollouts[rid]["summary"], "cached": True}
            session.emit("generate_started", revision=session.revision, seed=req.seed)

            def progress(agent_id, step, total):
                session.emit("denoise_progress", agent_id=agent_id, step=step, total=total,
                             revision=session.revision)

            try:
                rollout = _generate_with_progress(registry, session, req, progress)
            except Exception as e:
                session.emit("generate_failed", error=str(e))
                raise HTTPException(422, f"generation failed: {e}") from None
            rid = f"r{len(session.rollouts):04d}"
            summary = rollout_summary(rollout, session.conditions)
            session.rollouts[rid] = {"rollout": rollout.to_dict(), "summary": summary}
            session.generate_cache[cache_key] = rid
            session.emit("rollout_ready", rollout_id=rid, revision=session.revision)
            return {"rollout_id": rid, "revision": session.revision, "summary": summary,
                    "cached": False}

    @app.get("/sessions/{sid}/rollouts/{rid}")
    def fetch_rollout(sid: str, rid: str):
        session = get_session(sid)
        entry = session.rollouts.get(rid)
        if entry is None:
            raise HTTPException(404, f"unknown rollout {rid!r}")
        return {"rollout_id": rid, **entry["rollout"], "summary": entry["summary"]}

    @app.get("/sessions/{sid}/rollouts/{rid}/metrics")
    def fetch_metrics(sid: str, rid: str):
        session = get_session(sid)
        entry = session.rollouts.get(rid)
        if entry is None:
            raise HTTPException(404, f"unknown rollout {rid!r}")
        return entry["summary"]

    @app.post("/sessions/{sid}/export")
    def export(sid: str, req: ExportRequest):
        session = get_session(sid)
        dataio.save(req.path, [session.scenario])
        return {"path": req.path, "records": 1}

    @app.get("/sessions/{sid}/events")
    async def events(sid: str, after: int = -1):
        session = get_session(sid)

        async def stream():
            cursor = after + 1
            idle = 0
            while idle < 200:  # ~10 s of quiet closes the stream
                backlog = session.events[cursor:]
                if backlog:
                    for event in backlog:
                        yield f"id: {event['id']}\ndata: {json.dumps(event)}\n\n"
                    cursor += len(backlog)
                    idle = 0
                else:
                    idle += 1
                    await asyncio.sleep(0.05)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def _generate_with_progress(registry: ExpertRegistry, session: Session,
                            req: GenerateRequest, progress) -> SceneRollout:
    if req.replan_interval:
        return registry.rollout_closed_loop(
            session.scenario,
            session.conditions,
            horizon_steps=req.horizon_steps or req.replan_interval,
            replan_interval=req.replan_interval,
            seed=req.seed,
        )
    return registry.generate(session.scenario, session.conditions, seed=req.seed,
                             progress=progress)
