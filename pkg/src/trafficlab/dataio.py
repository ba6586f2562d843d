"""Scenario ingestion, filtering/splitting, and the synthetic corpus.

File format (newline-delimited JSON, one record per line, schema_version 1):

    {
      "schema_version": 1,
      "scenario_id": "...", "source_id": "...", "dt": 0.1,
      "ego_id": "ego", "current_index": 10,         // null for raw recordings
      "map": {"lanes": [{"id": "...", "points": [[x, y], ...],
                          "attributes": [[lane, intersection, crosswalk, edge], ...]}]},
      "agents": [{"id": "...", "type": "vehicle|pedestrian|cyclist",
                   "length": 4.6, "width": 2.0,
                   "x": [...], "y": [...], "vx": [...], "vy": [...],
                   "heading": [...], "valid": [1, 0, ...]}]
    }

All agent arrays share one timestep grid.  ``current_index`` splits history
(frames 0..i) from the ground-truth future; records without it are raw
recordings that :func:`preprocess` windows into scenarios.  Angles are
radians, distances meters.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .scene import (
    CROP_SIZE,
    DT,
    NUM_LANE_ATTRS,
    T_FUTURE,
    T_HISTORY,
    Agent,
    AgentFrame,
    AgentState,
    AgentType,
    Lane,
    RoadMap,
    Scenario,
    Trajectory,
)

SCHEMA_VERSION = 1

MIN_AGENTS = 32
MIN_VALID_FRAMES = 30


class SchemaError(ValueError):
    """A record violated the scenario file schema."""


@dataclass(frozen=True)
class RecordedAgent:
    """One agent's aligned state arrays over a full recording."""

    id: str
    agent_type: AgentType
    length: float
    width: float
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    heading: np.ndarray
    valid: np.ndarray

    def state_at(self, i: int) -> AgentState:
        return AgentState(
            np.array((self.x[i], self.y[i])),
            np.array((self.vx[i], self.vy[i])),
            self.heading[i],
            self.length,
            self.width,
            self.agent_type,
            bool(self.valid[i]),
        )

    def __len__(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class RawRecording:
    scenario_id: str
    source_id: str
    dt: float
    ego_id: str
    roadmap: RoadMap
    agents: tuple[RecordedAgent, ...]

    @property
    def num_frames(self) -> int:
        return len(self.agents[0]) if self.agents else 0


@dataclass(frozen=True)
class DropRecord:
    source_id: str
    window_index: int
    reason: str


# ---------------------------------------------------------------------------
# (de)serialization


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise SchemaError(f"{where}: missing field {key!r}")
    return record[key]


def _agent_from_dict(d: dict, where: str) -> RecordedAgent:
    aid = _require(d, "id", where)
    where = f"{where}, agent {aid!r}"
    tag = _require(d, "type", where)
    try:
        agent_type = AgentType(tag)
    except ValueError:
        raise SchemaError(f"{where}: unknown agent type tag {tag!r}") from None
    arrays = {}
    for key in ("x", "y", "vx", "vy", "heading", "valid"):
        arrays[key] = np.asarray(_require(d, key, where), dtype=np.float64)
    n = len(arrays["x"])
    for key, arr in arrays.items():
        if arr.ndim != 1 or len(arr) != n:
            raise SchemaError(f"{where}: field {key!r} length {len(arr)} != {n}")
    return RecordedAgent(
        str(aid),
        agent_type,
        float(_require(d, "length", where)),
        float(_require(d, "width", where)),
        arrays["x"],
        arrays["y"],
        arrays["vx"],
        arrays["vy"],
        arrays["heading"],
        arrays["valid"].astype(bool),
    )


def _agent_to_dict(a: RecordedAgent) -> dict:
    return {
        "id": a.id,
        "type": a.agent_type.value,
        "length": a.length,
        "width": a.width,
        "x": a.x.tolist(),
        "y": a.y.tolist(),
        "vx": a.vx.tolist(),
        "vy": a.vy.tolist(),
        "heading": a.heading.tolist(),
        "valid": a.valid.astype(int).tolist(),
    }


def _lane_from_dict(d: dict, where: str) -> Lane:
    lid = _require(d, "id", where)
    pts = np.asarray(_require(d, "points", f"{where}, lane {lid!r}"), dtype=np.float64)
    attrs = np.asarray(_require(d, "attributes", f"{where}, lane {lid!r}"), dtype=np.float64)
    if attrs.ndim != 2 or attrs.shape[1] != NUM_LANE_ATTRS:
        raise SchemaError(f"{where}, lane {lid!r}: attributes must be (N, {NUM_LANE_ATTRS})")
    return Lane(str(lid), pts, attrs)


def record_from_dict(record: dict, where: str = "record"):
    """Parse one schema dict into a Scenario (windowed) or RawRecording."""
    version = _require(record, "schema_version", where)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{where}: unsupported schema_version {version}")
    scenario_id = str(_require(record, "scenario_id", where))
    source_id = str(record.get("source_id", scenario_id))
    dt = float(_require(record, "dt", where))
    ego_id = str(_require(record, "ego_id", where))
    lanes = tuple(_lane_from_dict(d, where) for d in _require(record, "map", where).get("lanes", []))
    agents = tuple(_agent_from_dict(d, where) for d in _require(record, "agents", where))
    if not agents:
        raise SchemaError(f"{where}: no agents")
    if ego_id not in {a.id for a in agents}:
        raise SchemaError(f"{where}: ego_id {ego_id!r} not among agents")
    lengths = {len(a) for a in agents}
    if len(lengths) != 1:
        raise SchemaError(f"{where}: agent state arrays not aligned, lengths {sorted(lengths)}")
    raw = RawRecording(scenario_id, source_id, dt, ego_id, RoadMap(lanes), agents)
    current_index = record.get("current_index")
    if current_index is None:
        return raw
    current_index = int(current_index)
    if not (0 <= current_index < raw.num_frames):
        raise SchemaError(f"{where}: current_index {current_index} outside 0..{raw.num_frames - 1}")
    return _scenario_from_recording(raw, current_index)


def _scenario_from_recording(raw: RawRecording, current_index: int) -> Scenario:
    agents = []
    n = raw.num_frames
    for a in raw.agents:
        history = tuple(a.state_at(i) for i in range(0, current_index + 1))
        future = None
        if current_index + 1 < n:
            future = Trajectory(tuple(a.state_at(i) for i in range(current_index + 1, n)), raw.dt)
        agents.append(Agent(a.id, history, future))
    return Scenario(raw.roadmap, tuple(agents), raw.ego_id, raw.scenario_id, raw.source_id, raw.dt)


def _recorded_agent_from_agent(agent: Agent) -> RecordedAgent:
    states = list(agent.history) + (list(agent.future.states) if agent.future else [])
    cur = agent.current
    return RecordedAgent(
        agent.id,
        cur.agent_type,
        cur.length,
        cur.width,
        np.array([s.position[0] for s in states]),
        np.array([s.position[1] for s in states]),
        np.array([s.velocity[0] for s in states]),
        np.array([s.velocity[1] for s in states]),
        np.array([s.heading for s in states]),
        np.array([s.valid for s in states], dtype=bool),
    )


def record_to_dict(item) -> dict:
    """Serialize a Scenario or RawRecording to the schema dict."""
    if isinstance(item, Scenario):
        agents = [_recorded_agent_from_agent(a) for a in item.agents]
        current_index = len(item.agents[0].history) - 1
        raw = RawRecording(item.scenario_id, item.source_id, item.dt, item.ego_id, item.roadmap, tuple(agents))
    elif isinstance(item, RawRecording):
        raw, current_index = item, None
    else:
        raise TypeError(f"cannot serialize {type(item).__name__}")
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": raw.scenario_id,
        "source_id": raw.source_id,
        "dt": raw.dt,
        "ego_id": raw.ego_id,
        "current_index": current_index,
        "map": {
            "lanes": [
                {"id": ln.id, "points": ln.points.tolist(), "attributes": ln.attributes.tolist()}
                for ln in raw.roadmap.lanes
            ]
        },
        "agents": [_agent_to_dict(a) for a in raw.agents],
    }


def dumps_record(item) -> str:
    return json.dumps(record_to_dict(item), sort_keys=True, separators=(",", ":"))


def load(path: str | Path) -> Iterator:
    """Stream scenarios/recordings from an NDJSON file; empty file -> empty stream."""
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({e})") from None
            yield record_from_dict(record, where=f"{path}:{lineno}")


def save(path: str | Path, items: Iterable) -> int:
    """Write scenarios/recordings as NDJSON; returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w") as fh:
        for item in items:
            fh.write(dumps_record(item))
            fh.write("\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class PreprocessConfig:
    t_history: int = T_HISTORY
    t_future: int = T_FUTURE
    min_agents: int = MIN_AGENTS
    min_valid_frames: int = MIN_VALID_FRAMES
    crop_size: float = CROP_SIZE


@dataclass
class PreprocessResult:
    datasets: dict[AgentType, list[Scenario]] = field(
        default_factory=lambda: {t: [] for t in AgentType}
    )
    drops: list[DropRecord] = field(default_factory=list)

    @property
    def kept(self) -> int:
        return sum(len(v) for v in self.datasets.values())


def _as_recording(item) -> RawRecording:
    if isinstance(item, RawRecording):
        return item
    if isinstance(item, Scenario):
        agents = tuple(_recorded_agent_from_agent(a) for a in item.agents)
        return RawRecording(item.scenario_id, item.source_id, item.dt, item.ego_id, item.roadmap, agents)
    raise TypeError(f"cannot preprocess {type(item).__name__}")


def preprocess(stream: Iterable, config: PreprocessConfig = PreprocessConfig()) -> PreprocessResult:
    """Window recordings, apply the dataset filters, classify by center type.

    Windows tile the future non-overlapping: window w covers frames
    [w*t_future, w*t_future + t_history + t_future).  Filters, applied in
    order, with drop reasons: fewer than ``min_agents`` agents valid at the
    window's current frame ("min_agents"); center agent invalid at the
    current frame ("invalid_center_state"); fewer than ``min_valid_frames``
    valid center frames in the window ("min_frames"); center agent invalid
    at the window's final frame ("invalid_endpoint").  The surviving window
    is cropped to the ``crop_size`` square around the center agent (lane
    segments and agents outside it are dropped, coordinates stay global).
    """
    result = PreprocessResult()
    window_len = config.t_history + config.t_future
    for item in stream:
        raw = _as_recording(item)
        center = next(a for a in raw.agents if a.id == raw.ego_id)
        n = raw.num_frames
        for w in range(max((n - config.t_history) // config.t_future, 0)):
            start = w * config.t_future
            if start + window_len > n:
                break
            cur = start + config.t_history - 1
            end = start + window_len - 1

            n_agents = sum(1 for a in raw.agents if a.valid[cur])
            if n_agents < config.min_agents:
                result.drops.append(DropRecord(raw.source_id, w, "min_agents"))
                continue
            if not center.valid[cur]:
                result.drops.append(DropRecord(raw.source_id, w, "invalid_center_state"))
                continue
            if center.valid[start : end + 1].sum() < config.min_valid_frames:
                result.drops.append(DropRecord(raw.source_id, w, "min_frames"))
                continue
            if not center.valid[end]:
                result.drops.append(DropRecord(raw.source_id, w, "invalid_endpoint"))
                continue

            scenario = _extract_window(raw, start, cur, end, config)
            result.datasets[center.agent_type].append(scenario)
    return result


def _extract_window(raw: RawRecording, start: int, cur: int, end: int, config: PreprocessConfig) -> Scenario:
    center = next(a for a in raw.agents if a.id == raw.ego_id)
    frame = AgentFrame((center.x[cur], center.y[cur]), center.heading[cur])
    half = config.crop_size / 2.0

    lanes = []
    for lane in raw.roadmap.lanes:
        local = frame.to_local(lane.points)
        keep = (np.abs(local[:, 0]) <= half) & (np.abs(local[:, 1]) <= half)
        if keep.any():
            lanes.append(Lane(lane.id, lane.points[keep], lane.attributes[keep]))

    agents = []
    for a in raw.agents:
        if not a.valid[cur] and a.id != raw.ego_id:
            continue
        local = frame.to_local(np.array([[a.x[cur], a.y[cur]]]))[0]
        if a.id != raw.ego_id and (abs(local[0]) > half or abs(local[1]) > half):
            continue
        history = tuple(a.state_at(i) for i in range(start, cur + 1))
        future = Trajectory(tuple(a.state_at(i) for i in range(cur + 1, end + 1)), raw.dt)
        agents.append(Agent(a.id, history, future))

    window_id = f"{raw.scenario_id}::w{(start // config.t_future)}"
    return Scenario(RoadMap(tuple(lanes)), tuple(agents), raw.ego_id, window_id, raw.source_id, raw.dt)


def check_filters(scenario: Scenario, config: PreprocessConfig = PreprocessConfig()) -> list[str]:
    """Re-check the preprocessing filters on an emitted window (should be [])."""
    violations = []
    if len(scenario.agents) < config.min_agents:
        violations.append("min_agents")
    center = scenario.agent(scenario.ego_id)
    if not center.current.valid:
        violations.append("invalid_center_state")
    n_valid = sum(s.valid for s in center.history) + (
        int(center.future.valid.sum()) if center.future else 0
    )
    if n_valid < config.min_valid_frames:
        violations.append("min_frames")
    if center.future is None or not center.future.states[-1].valid:
        violations.append("invalid_endpoint")
    return violations


# ---------------------------------------------------------------------------
# splitting


def split(
    scenarios: list[Scenario], ratios: tuple[float, float, float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[list[Scenario], list[Scenario], list[Scenario]]:
    """Split disjointly by source id; windows of one recording never straddle."""
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    source_ids = sorted({s.source_id for s in scenarios})
    rng = np.random.default_rng(seed)
    rng.shuffle(source_ids)
    n = len(source_ids)
    n_train = int(n * ratios[0])
    n_val = int(n * (ratios[0] + ratios[1])) - n_train
    train_ids = set(source_ids[:n_train])
    val_ids = set(source_ids[n_train : n_train + n_val])
    buckets = ([], [], [])
    for s in scenarios:
        if s.source_id in train_ids:
            buckets[0].append(s)
        elif s.source_id in val_ids:
            buckets[1].append(s)
        else:
            buckets[2].append(s)
    return buckets


# ---------------------------------------------------------------------------
# synthetic corpus

BEHAVIORS = ("straight", "left_turn", "right_turn", "stop", "yield", "crossing_pedestrian", "cyclist_merge")

DEFAULT_MIX = {
    "straight": 0.30,
    "left_turn": 0.15,
    "right_turn": 0.15,
    "stop": 0.10,
    "yield": 0.10,
    "crossing_pedestrian": 0.10,
    "cyclist_merge": 0.10,
}

_LANE_ATTR = np.array([1.0, 0.0, 0.0, 0.0])
_INTERSECTION_ATTR = np.array([0.0, 1.0, 0.0, 0.0])
_CROSSWALK_ATTR = np.array([0.0, 0.0, 1.0, 0.0])
_EDGE_ATTR = np.array([0.0, 0.0, 0.0, 1.0])


def _polyline(points: np.ndarray, spacing: float = 5.0) -> np.ndarray:
    """Resample a polyline at roughly uniform spacing."""
    points = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=-1)
    total = seg.sum()
    n = max(int(total / spacing) + 1, 2)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    samples = np.linspace(0.0, total, n)
    return np.column_stack(
        [np.interp(samples, s, points[:, 0]), np.interp(samples, s, points[:, 1])]
    )


def _lane(lid: str, pts: np.ndarray, attr: np.ndarray, spacing: float = 5.0) -> Lane:
    pts = _polyline(pts, spacing)
    return Lane(lid, pts, np.tile(attr, (len(pts), 1)))


def _arc(center: np.ndarray, radius: float, a0: float, a1: float, n: int = 12) -> np.ndarray:
    ang = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def straight_road_map(half_length: float = 120.0) -> RoadMap:
    L = half_length
    lanes = [
        _lane("eb0", np.array([[-L, -1.75], [L, -1.75]]), _LANE_ATTR),
        _lane("eb1", np.array([[-L, -5.25], [L, -5.25]]), _LANE_ATTR),
        _lane("wb0", np.array([[L, 1.75], [-L, 1.75]]), _LANE_ATTR),
        _lane("wb1", np.array([[L, 5.25], [-L, 5.25]]), _LANE_ATTR),
        _lane("edge_s", np.array([[-L, -7.0], [L, -7.0]]), _EDGE_ATTR),
        _lane("edge_n", np.array([[-L, 7.0], [L, 7.0]]), _EDGE_ATTR),
    ]
    return RoadMap(tuple(lanes))


def crossroad_map(half_length: float = 120.0) -> RoadMap:
    L, e = half_length, 7.0
    lanes = [
        # arm lanes, ordered along travel direction
        _lane("eb_in", np.array([[-L, -1.75], [-e, -1.75]]), _LANE_ATTR),
        _lane("eb_out", np.array([[e, -1.75], [L, -1.75]]), _LANE_ATTR),
        _lane("wb_in", np.array([[L, 1.75], [e, 1.75]]), _LANE_ATTR),
        _lane("wb_out", np.array([[-e, 1.75], [-L, 1.75]]), _LANE_ATTR),
        _lane("nb_in", np.array([[1.75, -L], [1.75, -e]]), _LANE_ATTR),
        _lane("nb_out", np.array([[1.75, e], [1.75, L]]), _LANE_ATTR),
        _lane("sb_in", np.array([[-1.75, L], [-1.75, e]]), _LANE_ATTR),
        _lane("sb_out", np.array([[-1.75, -e], [-1.75, -L]]), _LANE_ATTR),
        # straight-through connectors
        _lane("x_eb", np.array([[-e, -1.75], [e, -1.75]]), _INTERSECTION_ATTR, spacing=3.0),
        _lane("x_wb", np.array([[e, 1.75], [-e, 1.75]]), _INTERSECTION_ATTR, spacing=3.0),
        _lane("x_nb", np.array([[1.75, -e], [1.75, e]]), _INTERSECTION_ATTR, spacing=3.0),
        _lane("x_sb", np.array([[-1.75, e], [-1.75, -e]]), _INTERSECTION_ATTR, spacing=3.0),
        # turning connectors for the eastbound approach (used by ego templates)
        Lane("x_eb_left", _arc(np.array([-e, e]), e + 1.75, -np.pi / 2, 0.0), np.tile(_INTERSECTION_ATTR, (12, 1))),
        Lane("x_eb_right", _arc(np.array([-e, -e]), e - 1.75, np.pi / 2, 0.0), np.tile(_INTERSECTION_ATTR, (12, 1))),
        # crosswalks across each arm
        _lane("cw_w", np.array([[-8.5, -e], [-8.5, e]]), _CROSSWALK_ATTR, spacing=3.0),
        _lane("cw_e", np.array([[8.5, -e], [8.5, e]]), _CROSSWALK_ATTR, spacing=3.0),
        _lane("cw_s", np.array([[-e, -8.5], [e, -8.5]]), _CROSSWALK_ATTR, spacing=3.0),
        _lane("cw_n", np.array([[-e, 8.5], [e, 8.5]]), _CROSSWALK_ATTR, spacing=3.0),
        # road edges
        _lane("edge_sw", np.array([[-L, -e], [-9.0, -e]]), _EDGE_ATTR),
        _lane("edge_se", np.array([[9.0, -e], [L, -e]]), _EDGE_ATTR),
        _lane("edge_nw", np.array([[-L, e], [-9.0, e]]), _EDGE_ATTR),
        _lane("edge_ne", np.array([[9.0, e], [L, e]]), _EDGE_ATTR),
    ]
    return RoadMap(tuple(lanes))


class _PathWalker:
    """Arc-length lookup along a dense polyline."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64)
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=-1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.total = float(self.s[-1])

    def at(self, s: float) -> tuple[np.ndarray, float]:
        pos, heading = self.at_many(np.array([s]))
        return pos[0], float(heading[0])

    def at_many(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.total)
        x = np.interp(s, self.s, self.points[:, 0])
        y = np.interp(s, self.s, self.points[:, 1])
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.points) - 2)
        d = self.points[i + 1] - self.points[i]
        return np.column_stack([x, y]), np.arctan2(d[:, 1], d[:, 0])


def _dense_path(*chunks: np.ndarray) -> _PathWalker:
    pts = np.concatenate(chunks, axis=0)
    # deduplicate joints
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=-1) > 1e-9
    return _PathWalker(_polyline(pts[keep], spacing=0.5))


def _speed_profile(rng, frames: int, v0: float, kind: str, dt: float) -> np.ndarray:
    """Per-frame speeds, accel-bounded and kinematically smooth."""
    t = np.arange(frames) * dt
    if kind == "cruise":
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.15) * v0
        v = v0 + amp * np.sin(2 * np.pi * t / (frames * dt) + phase)
    elif kind == "stop":
        t_stop = rng.uniform(2.5, 4.0)
        v = np.clip(v0 * (1.0 - t / t_stop), 0.0, None)
    elif kind == "dip":
        mid, width = rng.uniform(2.5, 4.0), 1.8
        v = v0 * (1.0 - 0.7 * np.exp(-((t - mid) ** 2) / (2 * width**2)))
    elif kind == "turn":
        mid, width = rng.uniform(2.0, 3.5), 1.5
        v = v0 * (1.0 - 0.4 * np.exp(-((t - mid) ** 2) / (2 * width**2)))
    else:
        raise ValueError(kind)
    # enforce |accel| <= 4 m/s^2
    for i in range(1, frames):
        v[i] = np.clip(v[i], v[i - 1] - 4.0 * dt, v[i - 1] + 4.0 * dt)
    return np.clip(v, 0.0, None)


def _agent_along_path(
    aid: str,
    agent_type: AgentType,
    length: float,
    width: float,
    path: _PathWalker,
    s0: float,
    speeds: np.ndarray,
    dt: float,
) -> RecordedAgent:
    n = len(speeds)
    s = s0 + np.concatenate([[0.0], np.cumsum(speeds[:-1] * dt)])
    pos, hs = path.at_many(s)
    vx = speeds * np.cos(hs)
    vy = speeds * np.sin(hs)
    return RecordedAgent(aid, agent_type, length, width, pos[:, 0], pos[:, 1], vx, vy, hs, np.ones(n, dtype=bool))


def _static_agent(aid, agent_type, length, width, pos, heading, frames) -> RecordedAgent:
    ones = np.ones(frames)
    return RecordedAgent(
        aid,
        agent_type,
        length,
        width,
        ones * pos[0],
        ones * pos[1],
        np.zeros(frames),
        np.zeros(frames),
        ones * heading,
        np.ones(frames, dtype=bool),
    )


def _allocate(mix: dict[str, float], count: int) -> list[str]:
    """Largest-remainder allocation of behavior templates to ``count`` scenes."""
    total = sum(mix.values())
    shares = {k: v / total * count for k, v in mix.items()}
    counts = {k: int(math.floor(v)) for k, v in shares.items()}
    leftovers = sorted(shares, key=lambda k: (counts[k] - shares[k], k))
    i = 0
    while sum(counts.values()) < count:
        counts[leftovers[i % len(leftovers)]] += 1
        i += 1
    out = []
    for k in BEHAVIORS:
        out.extend([k] * counts.get(k, 0))
    return out


def _ego_path_and_speed(behavior: str, rng, frames: int, dt: float):
    """Returns (map, path walker, s at current frame, speed profile, type, dims)."""
    e = 7.0
    if behavior == "straight":
        roadmap = straight_road_map()
        path = _dense_path(np.array([[-120.0, -1.75], [120.0, -1.75]]))
        v0 = rng.uniform(6.0, 13.0)
        speeds = _speed_profile(rng, frames, v0, "cruise", dt)
        s_cur = path.total / 2.0 + rng.uniform(-20.0, 0.0)
        return roadmap, path, s_cur, speeds, AgentType.VEHICLE, (4.6, 2.0)
    roadmap = crossroad_map()
    if behavior in ("left_turn", "right_turn", "stop", "yield"):
        approach = np.array([[-120.0, -1.75], [-e, -1.75]])
        if behavior == "left_turn":
            mid = _arc(np.array([-e, e]), e + 1.75, -np.pi / 2, 0.0)
            exit_ = np.array([[1.75, e], [1.75, 120.0]])
        elif behavior == "right_turn":
            mid = _arc(np.array([-e, -e]), e - 1.75, np.pi / 2, 0.0)
            exit_ = np.array([[-1.75, -e], [-1.75, -120.0]])
        else:
            mid = np.array([[-e, -1.75], [e, -1.75]])
            exit_ = np.array([[e, -1.75], [120.0, -1.75]])
        path = _dense_path(approach, mid, exit_)
        enter = 120.0 - e  # arc length from path start to the intersection entry
        v0 = rng.uniform(5.0, 10.0)
        kind = {"left_turn": "turn", "right_turn": "turn", "stop": "stop", "yield": "dip"}[behavior]
        speeds = _speed_profile(rng, frames, v0, kind, dt)
        s_cur = enter - rng.uniform(8.0, 18.0)
        return roadmap, path, s_cur, speeds, AgentType.VEHICLE, (4.6, 2.0)
    if behavior == "crossing_pedestrian":
        x = rng.choice([-8.5, 8.5])
        direction = rng.choice([-1.0, 1.0])
        path = _dense_path(np.array([[x, -9.0 * direction], [x, 9.0 * direction]]))
        speeds = _speed_profile(rng, frames, rng.uniform(1.1, 1.5), "cruise", dt)
        s_cur = rng.uniform(1.0, 4.0)
        return roadmap, path, s_cur, speeds, AgentType.PEDESTRIAN, (0.8, 0.8)
    if behavior == "cyclist_merge":
        # along the south edge, drifting into the outer eastbound lane
        path = _dense_path(
            np.array([[-120.0, -6.2], [-40.0, -6.2], [-15.0, -3.0], [20.0, -1.9], [120.0, -1.9]])
        )
        speeds = _speed_profile(rng, frames, rng.uniform(4.0, 6.5), "cruise", dt)
        s_cur = 120.0 - 40.0 + rng.uniform(-10.0, 10.0)
        return roadmap, path, s_cur, speeds, AgentType.CYCLIST, (1.9, 0.7)
    raise ValueError(f"unknown behavior {behavior!r}")


_BG_LANE_PATHS = {
    "straight": [
        np.array([[-120.0, -1.75], [120.0, -1.75]]),
        np.array([[-120.0, -5.25], [120.0, -5.25]]),
        np.array([[120.0, 1.75], [-120.0, 1.75]]),
        np.array([[120.0, 5.25], [-120.0, 5.25]]),
    ],
    "crossroad": [
        np.array([[-120.0, -1.75], [120.0, -1.75]]),
        np.array([[120.0, 1.75], [-120.0, 1.75]]),
        np.array([[1.75, -120.0], [1.75, 120.0]]),
        np.array([[-1.75, 120.0], [-1.75, -120.0]]),
    ],
}


def _spawn_s_near(path: _PathWalker, rng, anchor: np.ndarray, speeds: np.ndarray,
                  dt: float, clearance: float, max_offset: float = 45.0) -> float:
    """Start arc-length so the agent's current-frame position lies near
    ``anchor`` (inside the crop square) but at least ``clearance`` meters
    from it."""
    lead = float(np.sum(speeds[: T_HISTORY - 1] * dt))
    for _ in range(25):
        target = anchor + rng.uniform(-max_offset, max_offset, 2)
        d = np.linalg.norm(path.points - target, axis=1)
        k = int(d.argmin())
        s_cur = float(path.s[k])
        pos, _ = path.at(s_cur)
        if np.hypot(pos[0] - anchor[0], pos[1] - anchor[1]) >= clearance:
            return float(np.clip(s_cur - lead, 0.0, path.total))
    return float(np.clip(path.total * 0.1 - lead, 0.0, path.total))


def _background_agents(rng, map_kind: str, frames: int, dt: float, ego: RecordedAgent) -> list[RecordedAgent]:
    """Exactly 36 background agents, all within ~50 m of the ego's current
    pose so the 120 m crop retains the full headcount."""
    agents: list[RecordedAgent] = []
    paths = [_PathWalker(_polyline(p, 2.0)) for p in _BG_LANE_PATHS[map_kind]]
    ego_cur = np.array([ego.x[T_HISTORY - 1], ego.y[T_HISTORY - 1]])

    idx = 0
    for path in paths:
        for _ in range(3):
            v0 = rng.uniform(4.0, 11.0)
            speeds = _speed_profile(rng, frames, v0, "cruise", dt)
            s0 = _spawn_s_near(path, rng, ego_cur, speeds, dt, clearance=8.0)
            agents.append(
                _agent_along_path(f"v{idx:02d}", AgentType.VEHICLE, 4.6, 2.0, path, s0, speeds, dt)
            )
            idx += 1

    # curbside parked vehicles
    ys = (-6.3, 6.3) if map_kind == "straight" else (-5.9, 5.9)
    for row in range(8):
        for side, ybase in enumerate(ys):
            x = ego_cur[0] - 44.0 + row * 11.0 + rng.uniform(-1.0, 1.0)
            if map_kind == "crossroad" and abs(x) < 12.0:
                x = math.copysign(13.0, x if x != 0 else 1.0) + rng.uniform(0.0, 2.0)
            pos = np.array([x, ybase + rng.uniform(-0.2, 0.2)])
            if np.hypot(pos[0] - ego_cur[0], pos[1] - ego_cur[1]) < 7.0:
                pos[0] = ego_cur[0] + math.copysign(16.0, pos[0] - ego_cur[0] or 1.0)
            agents.append(
                _static_agent(f"pk{row}{side}", AgentType.VEHICLE, 4.6, 2.0, pos, 0.0 if ybase < 0 else np.pi, frames)
            )

    # pedestrians on the margins
    for i in range(5):
        y0 = float(rng.choice([-8.2, 8.2]))
        x0 = float(np.clip(ego_cur[0] + rng.uniform(-45.0, 45.0), -110.0, 80.0))
        walk = _PathWalker(np.array([[x0, y0], [x0 + rng.uniform(15.0, 30.0), y0]]))
        agents.append(
            _agent_along_path(
                f"p{i:02d}", AgentType.PEDESTRIAN, 0.8, 0.8, walk, 0.0,
                _speed_profile(rng, frames, rng.uniform(1.0, 1.5), "cruise", dt), dt,
            )
        )

    # cyclists along the edges
    for i in range(3):
        y0 = -6.1 if i % 2 == 0 else 6.1
        edge = _PathWalker(
            _polyline(np.array([[-120.0, y0], [120.0, y0]]) if y0 < 0 else np.array([[120.0, y0], [-120.0, y0]]), 2.0)
        )
        speeds = _speed_profile(rng, frames, rng.uniform(3.5, 6.0), "cruise", dt)
        s0 = _spawn_s_near(edge, rng, ego_cur, speeds, dt, clearance=4.0)
        agents.append(
            _agent_along_path(f"c{i:02d}", AgentType.CYCLIST, 1.9, 0.7, edge, s0, speeds, dt)
        )
    return agents


def synth(seed: int, count: int, mix: dict[str, float] | None = None) -> list[RawRecording]:
    """Generate single-window recordings (t_history + t_future frames).

    Each recording designates a center agent whose behavior follows the
    drawn template; per-type coverage follows ``mix`` by largest-remainder
    allocation.  Futures are kinematically smooth by construction (paths are
    straight segments and arcs; speeds are accel-bounded).
    """
    mix = dict(mix or DEFAULT_MIX)
    unknown = set(mix) - set(BEHAVIORS)
    if unknown:
        raise ValueError(f"unknown behaviors in mix: {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    behaviors = _allocate(mix, count)
    rng.shuffle(behaviors)
    frames = T_HISTORY + T_FUTURE
    out = []
    for i, behavior in enumerate(behaviors):
        roadmap, path, s_cur, speeds, ego_type, dims = _ego_path_and_speed(behavior, rng, frames, DT)
        s0 = s_cur - float(np.sum(speeds[: T_HISTORY - 1] * DT))
        ego = _agent_along_path("ego", ego_type, dims[0], dims[1], path, s0, speeds, DT)
        map_kind = "straight" if behavior == "straight" else "crossroad"
        agents = [ego] + _background_agents(rng, map_kind, frames, DT, ego)
        sid = f"synth-{seed}-{i:05d}"
        out.append(RawRecording(sid, sid, DT, "ego", roadmap, tuple(agents)))
    return out
