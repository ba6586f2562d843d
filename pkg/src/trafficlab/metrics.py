"""Displacement, kinematic, and collision metrics.

Endpoint convention: the mode used for minADE/minFDE (and heading/speed
errors) is the one whose *penultimate* point is closest to the ground
truth's penultimate point, and minFDE is measured there too.  The condition
context occupies the final point, so the step before it is treated as the
endpoint.
"""
from __future__ import annotations

import math

import numpy as np

from .initializer import TrajectoryBatch
from .scene import DT, AgentState, Trajectory

STATIONARY_EPS = 1e-3  # m of displacement below which a step inherits heading
DEFAULT_IOU_THRESHOLD = 0.1


class MetricsError(ValueError):
    pass


def _positions(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.positions
    return np.asarray(traj, dtype=np.float64)


def _endpoint_index(t_f: int) -> int:
    if t_f < 2:
        raise MetricsError("trajectory must have at least 2 steps")
    return t_f - 2


def select_mode_by_endpoint(batch: TrajectoryBatch, gt) -> int:
    """Index of the mode whose penultimate point is nearest the ground truth's."""
    gt_pos = _positions(gt)
    if gt_pos.shape[0] != batch.positions.shape[1]:
        raise MetricsError(
            f"mode length {batch.positions.shape[1]} != ground truth length {gt_pos.shape[0]}"
        )
    e = _endpoint_index(gt_pos.shape[0])
    d = np.linalg.norm(batch.positions[:, e] - gt_pos[e], axis=-1)
    return int(d.argmin())


def min_ade_k(batch: TrajectoryBatch, gt) -> float:
    """Mean per-step displacement of the endpoint-closest mode (meters)."""
    gt_pos = _positions(gt)
    idx = select_mode_by_endpoint(batch, gt_pos)
    return float(np.linalg.norm(batch.positions[idx] - gt_pos, axis=-1).mean())


def min_fde_k(batch: TrajectoryBatch, gt) -> float:
    """Displacement at the penultimate step of the endpoint-closest mode."""
    gt_pos = _positions(gt)
    idx = select_mode_by_endpoint(batch, gt_pos)
    e = _endpoint_index(gt_pos.shape[0])
    return float(np.linalg.norm(batch.positions[idx, e] - gt_pos[e]))


def derive_headings(positions: np.ndarray, initial_heading: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Headings from successive displacements; stationary steps inherit.

    Returns (headings, valid): steps before any motion (and without an
    ``initial_heading`` seed) are flagged invalid.  The final step inherits
    the last established heading.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    headings = np.zeros(n)
    valid = np.zeros(n, dtype=bool)
    h = initial_heading
    for t in range(n):
        if t < n - 1:
            d = positions[t + 1] - positions[t]
            if math.hypot(d[0], d[1]) >= STATIONARY_EPS:
                h = math.atan2(d[1], d[0])
        if h is not None:
            headings[t] = h
            valid[t] = True
    return headings, valid


def derive_speeds(positions: np.ndarray, dt: float = DT) -> np.ndarray:
    """Per-step speeds from displacements; the final step inherits."""
    positions = np.asarray(positions, dtype=np.float64)
    d = np.linalg.norm(np.diff(positions, axis=0), axis=-1) / dt
    if len(d) == 0:
        return np.zeros(1)
    return np.concatenate([d, d[-1:]])


def _wrapped_abs_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.mod(a - b + np.pi, 2.0 * np.pi) - np.pi
    return np.abs(d)


def heading_error(best_mode, gt, endpoint_only: bool = False) -> float:
    """Mean absolute wrapped heading difference over jointly valid steps.

    Returns NaN when either trajectory is stationary throughout (no heading
    can be derived), which callers aggregate with nanmean.
    """
    pred = _positions(best_mode)
    gt_pos = _positions(gt)
    if pred.shape != gt_pos.shape:
        raise MetricsError(f"shape mismatch {pred.shape} vs {gt_pos.shape}")
    hp, vp = derive_headings(pred)
    hg, vg = derive_headings(gt_pos)
    valid = vp & vg
    if endpoint_only:
        e = _endpoint_index(len(gt_pos))
        if not valid[e]:
            return float("nan")
        return float(_wrapped_abs_diff(hp[e], hg[e]))
    if not valid.any():
        return float("nan")
    return float(_wrapped_abs_diff(hp[valid], hg[valid]).mean())


def speed_error(best_mode, gt, dt: float = DT, endpoint_only: bool = False) -> float:
    """Mean absolute speed difference (m/s) over the trajectory."""
    pred = _positions(best_mode)
    gt_pos = _positions(gt)
    if pred.shape != gt_pos.shape:
        raise MetricsError(f"shape mismatch {pred.shape} vs {gt_pos.shape}")
    sp = derive_speeds(pred, dt)
    sg = derive_speeds(gt_pos, dt)
    if endpoint_only:
        e = _endpoint_index(len(gt_pos))
        return float(abs(sp[e] - sg[e]))
    return float(np.abs(sp - sg).mean())


# ---------------------------------------------------------------------------
# oriented boxes and collisions


class OrientedBox:
    """Axis-oriented rectangle: center, heading, length (along heading), width."""

    __slots__ = ("center", "heading", "length", "width")

    def __init__(self, center, heading: float, length: float, width: float):
        if not (length > 0 and width > 0):
            raise MetricsError(f"box extents must be positive, got {length} x {width}")
        self.center = np.asarray(center, dtype=np.float64).reshape(2)
        self.heading = float(heading)
        self.length = float(length)
        self.width = float(width)

    def corners(self) -> np.ndarray:
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])  # CCW
        c, s = math.cos(self.heading), math.sin(self.heading)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center

    def _key(self):
        return (self.center[0], self.center[1], self.heading, self.length, self.width)

    @classmethod
    def from_state(cls, state: AgentState) -> "OrientedBox":
        return cls(state.position, state.heading, state.length, state.width)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW ``clip``."""
    output = list(subject)
    m = len(clip)
    for i in range(m):
        a, b = clip[i], clip[(i + 1) % m]
        edge = b - a
        if not output:
            break
        acc = []
        prev = output[-1]
        prev_in = edge[0] * (prev[1] - a[1]) - edge[1] * (prev[0] - a[0]) >= 0.0
        for cur in output:
            cur_in = edge[0] * (cur[1] - a[1]) - edge[1] * (cur[0] - a[0]) >= 0.0
            if cur_in != prev_in:
                d = cur - prev
                denom = edge[0] * d[1] - edge[1] * d[0]
                t = (edge[0] * (a[1] - prev[1]) - edge[1] * (a[0] - prev[0])) / denom
                acc.append(prev + t * d)
            if cur_in:
                acc.append(cur)
            prev, prev_in = cur, cur_in
        output = acc
    return np.asarray(output) if output else np.zeros((0, 2))


def obb_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Exact intersection-over-union via convex polygon clipping.

    The operand order is canonicalized first, so iou(a, b) and iou(b, a) are
    the same computation bit-for-bit.
    """
    if b._key() < a._key():
        a, b = b, a
    # cheap reject: circumscribed circles cannot touch
    ra = math.hypot(a.length, a.width) / 2.0
    rb = math.hypot(b.length, b.width) / 2.0
    if math.hypot(*(a.center - b.center)) > ra + rb:
        return 0.0
    ca, cb = a.corners(), b.corners()
    inter = _polygon_area(_clip_polygon(ca, cb))
    if inter == 0.0:
        return 0.0
    union = a.length * a.width + b.length * b.width - inter
    return float(inter / union)


def collision_geometry(rollout) -> list[tuple[np.ndarray, np.ndarray, float, float]]:
    """Normalize a rollout into per-agent (positions, headings, length, width)."""
    if hasattr(rollout, "collision_boxes"):
        return rollout.collision_boxes()
    return list(rollout)


def scenario_collision_rate(rollouts, threshold: float = DEFAULT_IOU_THRESHOLD) -> float:
    """Mean percentage of agents per scenario colliding with any other agent.

    An agent collides if at any future step the IOU of its box with another
    agent's box at the same step exceeds ``threshold``.
    """
    if not (0.0 < threshold <= 1.0):
        raise MetricsError(f"threshold must be in (0, 1], got {threshold}")
    rollouts = list(rollouts)
    if not rollouts:
        raise MetricsError("empty rollout list")
    fractions = []
    for rollout in rollouts:
        geo = collision_geometry(rollout)
        m = len(geo)
        if m == 0:
            fractions.append(0.0)
            continue
        colliding = np.zeros(m, dtype=bool)
        steps = min(len(g[0]) for g in geo)
        for i in range(m):
            pi, hi, li, wi = geo[i]
            for j in range(i + 1, m):
                if colliding[i] and colliding[j]:
                    continue
                pj, hj, lj, wj = geo[j]
                reach = (math.hypot(li, wi) + math.hypot(lj, wj)) / 2.0
                near = np.linalg.norm(pi[:steps] - pj[:steps], axis=-1) <= reach
                for t in np.nonzero(near)[0]:
                    box_i = OrientedBox(pi[t], hi[t], li, wi)
                    box_j = OrientedBox(pj[t], hj[t], lj, wj)
                    if obb_iou(box_i, box_j) > threshold:
                        colliding[i] = True
                        colliding[j] = True
                        break
        fractions.append(colliding.mean())
    return float(np.mean(fractions) * 100.0)


def constant_velocity_batch(state: AgentState, t_f: int, dt: float = DT, k: int = 1) -> TrajectoryBatch:
    """Constant-velocity baseline (in the same frame as ``state``)."""
    steps = np.arange(1, t_f + 1)[:, None] * dt
    positions = state.position[None, :] + steps * state.velocity[None, :]
    return TrajectoryBatch(np.repeat(positions[None], k, axis=0), np.zeros(k))
