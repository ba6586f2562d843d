"""Domain types for agents, maps, scenarios, and agent-centric transforms.

Scenario values are immutable after construction (transforms return new
values), so they are safe to share across threads and sessions.  All
distances are meters, all angles radians wrapped to (-pi, pi], all
velocities m/s; the timestep is 0.1 s.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

DT = 0.1  # seconds per step
T_FUTURE = 60  # 6 s futures
T_HISTORY = 11  # 1 s of history plus the current frame
CROP_SIZE = 120.0  # side length of the square cropped around the target agent
MAX_AGENTS = 32
LANE_ATTRS = ("lane", "intersection", "crosswalk", "edge")
NUM_LANE_ATTRS = len(LANE_ATTRS)
AGENT_FEATURE_DIM = 11  # x, y, vx, vy, cos h, sin h, length, width, one-hot(3)
LANE_FEATURE_DIM = 4 + NUM_LANE_ATTRS  # midpoint, direction, attribute flags


class SceneError(ValueError):
    """Invalid scene construction or transform request."""


class AgentType(enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"

    @classmethod
    def from_tag(cls, tag: str) -> "AgentType":
        try:
            return cls(tag)
        except ValueError:
            raise SceneError(f"unknown agent type tag {tag!r}") from None


def wrap_angle(theta):
    """Wrap to (-pi, pi]: |result| <= pi and exp(i*result) == exp(i*theta)."""
    if isinstance(theta, float):
        return -((-theta + math.pi) % (2.0 * math.pi) - math.pi)
    return -((-np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray  # (2,)
    velocity: np.ndarray  # (2,)
    heading: float
    length: float
    width: float
    agent_type: AgentType
    valid: bool = True

    def __post_init__(self):
        sa = object.__setattr__
        pos, vel = self.position, self.velocity
        if not (isinstance(pos, np.ndarray) and pos.dtype == np.float64 and pos.shape == (2,)):
            sa(self, "position", np.asarray(pos, dtype=np.float64).reshape(2))
        if not (isinstance(vel, np.ndarray) and vel.dtype == np.float64 and vel.shape == (2,)):
            sa(self, "velocity", np.asarray(vel, dtype=np.float64).reshape(2))
        sa(self, "heading", wrap_angle(float(self.heading)))
        if not (self.length >= self.width > 0):
            raise SceneError(f"need length >= width > 0, got {self.length} x {self.width}")

    @property
    def speed(self) -> float:
        return float(np.hypot(self.velocity[0], self.velocity[1]))


@dataclass(frozen=True)
class Trajectory:
    """Fixed-length sequence of states on the 0.1 s grid."""

    states: tuple[AgentState, ...]
    dt: float = DT

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) < 1:
            raise SceneError("trajectory must have at least one state")

    def __len__(self) -> int:
        return len(self.states)

    @cached_property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.states])

    @cached_property
    def headings(self) -> np.ndarray:
        return np.array([s.heading for s in self.states])

    @cached_property
    def velocities(self) -> np.ndarray:
        return np.array([s.velocity for s in self.states])

    @cached_property
    def valid(self) -> np.ndarray:
        return np.array([s.valid for s in self.states], dtype=bool)

    @classmethod
    def from_positions(
        cls,
        positions: np.ndarray,
        template: AgentState,
        dt: float = DT,
        initial_heading: float | None = None,
    ) -> "Trajectory":
        """Build a trajectory from positions, deriving kinematics.

        Velocity/heading come from finite differences of successive
        positions; steps displaced less than 1 mm inherit the previous
        heading (seeded by ``initial_heading`` or the template's heading).
        """
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        heading = template.heading if initial_heading is None else float(initial_heading)
        states = []
        prev = None
        for i, p in enumerate(positions):
            nxt = positions[i + 1] if i + 1 < len(positions) else None
            if nxt is not None:
                delta = nxt - p
            elif prev is not None:
                delta = p - prev
            else:
                delta = np.zeros(2)
            vel = delta / dt
            if np.hypot(delta[0], delta[1]) >= 1e-3:
                heading = float(np.arctan2(delta[1], delta[0]))
            states.append(
                AgentState(p, vel, heading, template.length, template.width, template.agent_type, True)
            )
            prev = p
        return cls(tuple(states), dt=dt)


@dataclass(frozen=True)
class Lane:
    id: str
    points: np.ndarray  # (N, 2) segment midpoints
    attributes: np.ndarray  # (N, NUM_LANE_ATTRS) semantic flags

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        attrs = np.asarray(self.attributes, dtype=np.float64).reshape(-1, NUM_LANE_ATTRS)
        if len(pts) < 1:
            raise SceneError(f"lane {self.id}: need at least one segment")
        if len(attrs) != len(pts):
            raise SceneError(f"lane {self.id}: {len(pts)} points but {len(attrs)} attribute rows")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "attributes", attrs)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RoadMap:
    lanes: tuple[Lane, ...]

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))


@dataclass(frozen=True)
class Agent:
    id: str
    history: tuple[AgentState, ...]  # oldest first; last entry is the current state
    future: Trajectory | None = None

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(self.history))
        if len(self.history) < 1:
            raise SceneError(f"agent {self.id}: history must include the current state")

    @property
    def current(self) -> AgentState:
        return self.history[-1]

    @property
    def agent_type(self) -> AgentType:
        return self.current.agent_type


@dataclass(frozen=True)
class Scenario:
    roadmap: RoadMap
    agents: tuple[Agent, ...]
    ego_id: str
    scenario_id: str = "scenario"
    source_id: str = "source"
    dt: float = DT

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise SceneError("duplicate agent ids")
        if self.ego_id not in ids:
            raise SceneError(f"ego id {self.ego_id!r} not among agents")
        lengths = {len(a.history) for a in self.agents}
        if len(lengths) > 1:
            raise SceneError(f"agent histories not aligned: lengths {sorted(lengths)}")

    def agent(self, agent_id: str) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise SceneError(f"unknown agent id {agent_id!r}")

    def has_agent(self, agent_id: str) -> bool:
        return any(a.id == agent_id for a in self.agents)

    def with_agents(self, agents: tuple[Agent, ...], ego_id: str | None = None) -> "Scenario":
        return replace(self, agents=tuple(agents), ego_id=ego_id or self.ego_id)


@dataclass(frozen=True)
class AgentFrame:
    """Rigid 2-D frame: local = R(-rotation) @ (global - origin)."""

    origin: np.ndarray
    rotation: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(2))
        object.__setattr__(self, "rotation", float(self.rotation))

    def _rot(self, angle: float) -> np.ndarray:
        c, s = math.cos(angle), math.sin(angle)
        return np.array([[c, -s], [s, c]])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.origin) @ self._rot(-self.rotation).T

    def to_global(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self._rot(self.rotation).T + self.origin

    def rotate_to_local(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self._rot(-self.rotation).T

    def rotate_to_global(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self._rot(self.rotation).T


@dataclass(frozen=True)
class ConditionContext:
    """Per-agent 8-dim target descriptor steering generation.

    Layout of :meth:`as_vector`: [target_x, target_y, target_speed,
    cos(target_heading), sin(target_heading), length, width, valid_flag].
    Target pose is stored in the global frame and converted on encode;
    valid_flag 0 means "no condition" so one network serves conditioned and
    unconditioned generation.
    """

    target_position: np.ndarray
    target_speed: float
    target_heading: float
    length: float
    width: float
    valid: bool = True

    DIM = 8

    def __post_init__(self):
        object.__setattr__(self, "target_position", np.asarray(self.target_position, dtype=np.float64).reshape(2))
        object.__setattr__(self, "target_heading", float(wrap_angle(self.target_heading)))

    @classmethod
    def none(cls) -> "ConditionContext":
        return cls(np.zeros(2), 0.0, 0.0, 1.0, 1.0, valid=False)

    @classmethod
    def from_state(cls, state: AgentState) -> "ConditionContext":
        return cls(state.position.copy(), state.speed, state.heading, state.length, state.width, True)

    def as_vector(self, frame: AgentFrame | None = None) -> np.ndarray:
        if not self.valid:
            return np.zeros(self.DIM)
        if frame is None:
            pos, heading = self.target_position, self.target_heading
        else:
            pos = frame.to_local(self.target_position)
            heading = float(wrap_angle(self.target_heading - frame.rotation))
        return np.array(
            [pos[0], pos[1], self.target_speed, math.cos(heading), math.sin(heading), self.length, self.width, 1.0]
        )


# ---------------------------------------------------------------------------
# transforms


def _transform_state(state: AgentState, frame: AgentFrame, inverse: bool = False) -> AgentState:
    if inverse:
        pos = frame.to_global(state.position)
        vel = frame.rotate_to_global(state.velocity)
        heading = wrap_angle(state.heading + frame.rotation)
    else:
        pos = frame.to_local(state.position)
        vel = frame.rotate_to_local(state.velocity)
        heading = wrap_angle(state.heading - frame.rotation)
    return AgentState(pos, vel, float(heading), state.length, state.width, state.agent_type, state.valid)


def to_agent_frame(
    scenario: Scenario, agent_id: str, crop_size: float = CROP_SIZE
) -> tuple[Scenario, AgentFrame]:
    """Re-express a scenario in the frame of one agent and crop the map.

    The target agent lands at the origin with heading 0; every position,
    velocity and heading is rotated consistently.  Lane segments outside the
    axis-aligned ``crop_size`` square centered on the agent are dropped, as
    are lanes left with no segments.
    """
    target = scenario.agent(agent_id)
    if not target.current.valid:
        raise SceneError(f"agent {agent_id!r} has no valid current state")
    frame = AgentFrame(target.current.position.copy(), target.current.heading)
    half = crop_size / 2.0

    lanes = []
    for lane in scenario.roadmap.lanes:
        pts = frame.to_local(lane.points)
        keep = (np.abs(pts[:, 0]) <= half) & (np.abs(pts[:, 1]) <= half)
        if keep.any():
            lanes.append(Lane(lane.id, pts[keep], lane.attributes[keep]))

    agents = []
    for agent in scenario.agents:
        history = tuple(_transform_state(s, frame) for s in agent.history)
        future = None
        if agent.future is not None:
            future = Trajectory(tuple(_transform_state(s, frame) for s in agent.future.states), agent.future.dt)
        agents.append(Agent(agent.id, history, future))

    local = replace(scenario, roadmap=RoadMap(tuple(lanes)), agents=tuple(agents))
    return local, frame


def from_agent_frame(traj: Trajectory, frame: AgentFrame) -> Trajectory:
    """Inverse of the agent-frame transform for one trajectory."""
    return Trajectory(tuple(_transform_state(s, frame, inverse=True) for s in traj.states), traj.dt)


# ---------------------------------------------------------------------------
# vectorization


@dataclass(frozen=True)
class SceneTensors:
    """Fixed-shape vectorized scene; row 0 of the agent axis is the target."""

    agent_features: np.ndarray  # (A, T_h, AGENT_FEATURE_DIM)
    agent_mask: np.ndarray  # (A,) agent slot used
    agent_step_mask: np.ndarray  # (A, T_h) valid history step
    lane_features: np.ndarray  # (L, S, LANE_FEATURE_DIM)
    lane_mask: np.ndarray  # (L,)
    lane_seg_mask: np.ndarray  # (L, S)
    agent_ids: tuple[str, ...]


def _state_features(state: AgentState) -> np.ndarray:
    one_hot = np.zeros(3)
    one_hot[[AgentType.VEHICLE, AgentType.PEDESTRIAN, AgentType.CYCLIST].index(state.agent_type)] = 1.0
    return np.array(
        [
            state.position[0],
            state.position[1],
            state.velocity[0],
            state.velocity[1],
            math.cos(state.heading),
            math.sin(state.heading),
            state.length,
            state.width,
            *one_hot,
        ]
    )


def lane_feature_rows(lane: Lane) -> np.ndarray:
    """Per-segment rows: midpoint, unit direction to the next segment, flags.

    The last segment inherits the previous direction; single-segment lanes
    get a zero direction.
    """
    n = len(lane)
    dirs = np.zeros((n, 2))
    if n > 1:
        delta = lane.points[1:] - lane.points[:-1]
        norm = np.hypot(delta[:, 0], delta[:, 1])
        norm = np.where(norm < 1e-12, 1.0, norm)
        dirs[:-1] = delta / norm[:, None]
        dirs[-1] = dirs[-2]
    return np.concatenate([lane.points, dirs, lane.attributes], axis=1)


def vectorize(
    scenario: Scenario,
    target_id: str | None = None,
    max_agents: int = MAX_AGENTS,
    max_lanes: int = 32,
    max_lane_segments: int = 12,
    t_history: int = T_HISTORY,
) -> SceneTensors:
    """Vectorize an agent-centric scenario into padded feature tensors.

    The target agent occupies row 0; remaining slots hold the nearest agents
    (by current position) with valid current states.  Histories shorter than
    ``t_history`` are left-padded and masked.  Lanes beyond ``max_lanes``
    are dropped farthest-first; lanes longer than ``max_lane_segments`` are
    subsampled evenly.
    """
    target_id = target_id or scenario.ego_id
    target = scenario.agent(target_id)
    if not target.current.valid:
        raise SceneError(f"target agent {target_id!r} has no valid current state")

    candidates = [a for a in scenario.agents if a.current.valid and a.id != target_id]
    candidates.sort(key=lambda a: (float(np.hypot(*a.current.position)), a.id))
    chosen = [target] + candidates[: max_agents - 1]

    agent_features = np.zeros((max_agents, t_history, AGENT_FEATURE_DIM))
    agent_step_mask = np.zeros((max_agents, t_history), dtype=bool)
    agent_mask = np.zeros(max_agents, dtype=bool)
    for row, agent in enumerate(chosen):
        agent_mask[row] = True
        history = agent.history[-t_history:]
        offset = t_history - len(history)
        for j, state in enumerate(history):
            if state.valid:
                agent_features[row, offset + j] = _state_features(state)
                agent_step_mask[row, offset + j] = True

    if not agent_mask.any():
        raise SceneError("no valid agents to vectorize")

    lanes = list(scenario.roadmap.lanes)
    if len(lanes) > max_lanes:
        lanes.sort(key=lambda ln: (float(np.min(np.hypot(ln.points[:, 0], ln.points[:, 1]))), ln.id))
        lanes = lanes[:max_lanes]
    lane_features = np.zeros((max_lanes, max_lane_segments, LANE_FEATURE_DIM))
    lane_seg_mask = np.zeros((max_lanes, max_lane_segments), dtype=bool)
    lane_mask = np.zeros(max_lanes, dtype=bool)
    for row, lane in enumerate(lanes):
        if len(lane) > max_lane_segments:
            idx = np.linspace(0, len(lane) - 1, max_lane_segments).round().astype(int)
            lane = Lane(lane.id, lane.points[idx], lane.attributes[idx])
        rows = lane_feature_rows(lane)
        lane_features[row, : len(rows)] = rows
        lane_seg_mask[row, : len(rows)] = True
        lane_mask[row] = True

    return SceneTensors(
        agent_features,
        agent_mask,
        agent_step_mask,
        lane_features,
        lane_mask,
        lane_seg_mask,
        tuple(a.id for a in chosen),
    )
