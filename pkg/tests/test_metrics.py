"""Displacement/kinematic/collision metrics against independent oracles."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trafficlab.initializer import TrajectoryBatch
from trafficlab.metrics import (
    MetricsError,
    OrientedBox,
    constant_velocity_batch,
    derive_headings,
    heading_error,
    min_ade_k,
    min_fde_k,
    obb_iou,
    scenario_collision_rate,
    select_mode_by_endpoint,
    speed_error,
)
from trafficlab.scene import AgentState, AgentType


# ---------------------------------------------------------------------------
# independent oracles


def mc_iou(a: OrientedBox, b: OrientedBox, n=1_000_000, seed=0) -> float:
    """Monte-Carlo IOU over the bounding region of both boxes."""
    rng = np.random.default_rng(seed)
    corners = np.concatenate([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(box, p):
        d = p - box.center
        c, s = math.cos(box.heading), math.sin(box.heading)
        local = np.column_stack([d @ np.array([c, s]), d @ np.array([-s, c])])
        return (np.abs(local[:, 0]) <= box.length / 2) & (np.abs(local[:, 1]) <= box.width / 2)

    in_a, in_b = inside(a, pts), inside(b, pts)
    union = (in_a | in_b).sum()
    return float((in_a & in_b).sum() / union) if union else 0.0


def brute_force_scr(scenes, threshold) -> float:
    """All pairs, all steps, no shortcuts."""
    fracs = []
    for geo in scenes:
        m = len(geo)
        hit = np.zeros(m, dtype=bool)
        steps = min(len(g[0]) for g in geo)
        for i in range(m):
            for j in range(m):
                if i == j:
                    continue
                for t in range(steps):
                    bi = OrientedBox(geo[i][0][t], geo[i][1][t], geo[i][2], geo[i][3])
                    bj = OrientedBox(geo[j][0][t], geo[j][1][t], geo[j][2], geo[j][3])
                    if obb_iou(bi, bj) > threshold:
                        hit[i] = True
                        break
        fracs.append(hit.mean())
    return float(np.mean(fracs) * 100)


def brute_force_min_ade_fde(positions, gt):
    e = len(gt) - 2
    d_end = [np.linalg.norm(m[e] - gt[e]) for m in positions]
    idx = int(np.argmin(d_end))
    ade = float(np.mean(np.linalg.norm(positions[idx] - gt, axis=-1)))
    fde = float(np.linalg.norm(positions[idx][e] - gt[e]))
    return ade, fde


def random_boxes(rng, n):
    out = []
    for _ in range(n):
        out.append(
            OrientedBox(
                rng.uniform(-3, 3, 2),
                rng.uniform(-math.pi, math.pi),
                rng.uniform(1.0, 6.0),
                rng.uniform(0.5, 3.0),
            )
        )
    return out


# ---------------------------------------------------------------------------


class TestMinAdeFde:
    def test_exact_mode_is_zero(self, rng):
        gt = rng.standard_normal((10, 2)).cumsum(axis=0)
        batch = TrajectoryBatch(np.stack([gt + 4.0, gt]), np.zeros(2))
        assert min_ade_k(batch, gt) == 0.0
        assert min_fde_k(batch, gt) == 0.0

    def test_pythagorean_offset(self, rng):
        gt = rng.standard_normal((10, 2))
        batch = TrajectoryBatch((gt + np.array([3.0, 4.0]))[None], np.zeros(1))
        assert min_ade_k(batch, gt) == pytest.approx(5.0)

    def test_endpoint_selection_not_min_over_ade(self):
        # DERIVED counterexample: mode A has the nearer endpoint but larger mean
        # error than B; the metric must report A's ADE.
        t = 10
        gt = np.zeros((t, 2))
        mode_a = np.zeros((t, 2))
        mode_a[:-2, 0] = 10.0  # huge error early, perfect at the penultimate step
        mode_b = np.full((t, 2), 0.0)
        mode_b[:, 0] = 1.0  # constant 1 m offset everywhere
        batch = TrajectoryBatch(np.stack([mode_a, mode_b]), np.zeros(2))
        assert select_mode_by_endpoint(batch, gt) == 0
        expected_a_ade = np.linalg.norm(mode_a - gt, axis=-1).mean()
        assert min_ade_k(batch, gt) == pytest.approx(expected_a_ade)
        ade, fde = brute_force_min_ade_fde(batch.positions, gt)
        assert min_ade_k(batch, gt) == pytest.approx(ade)
        assert min_fde_k(batch, gt) == pytest.approx(fde)

    def test_divergence_at_final_step_masked(self, rng):
        gt = rng.standard_normal((10, 2))
        mode = gt.copy()
        mode[-1] += 100.0  # penultimate convention hides the final step
        batch = TrajectoryBatch(mode[None], np.zeros(1))
        assert min_fde_k(batch, gt) == 0.0

    def test_constant_offset_fde(self, rng):
        gt = rng.standard_normal((10, 2))
        batch = TrajectoryBatch((gt + np.array([0.0, 2.0]))[None], np.zeros(1))
        assert min_fde_k(batch, gt) == pytest.approx(2.0)

    def test_matches_brute_force_on_random_fixtures(self, rng):
        for _ in range(200):
            t = rng.integers(3, 20)
            k = rng.integers(1, 7)
            gt = rng.standard_normal((t, 2)).cumsum(axis=0)
            modes = gt[None] + rng.standard_normal((k, t, 2))
            batch = TrajectoryBatch(modes, np.zeros(k))
            ade, fde = brute_force_min_ade_fde(modes, gt)
            assert min_ade_k(batch, gt) == pytest.approx(ade)
            assert min_fde_k(batch, gt) == pytest.approx(fde)

    def test_too_short_rejected(self):
        batch = TrajectoryBatch(np.zeros((1, 1, 2)), np.zeros(1))
        with pytest.raises(MetricsError):
            min_fde_k(batch, np.zeros((1, 2)))


class TestHeadingSpeedErrors:
    def test_identical_trajectories_zero(self, rng):
        traj = rng.standard_normal((10, 2)).cumsum(axis=0) * 3
        assert heading_error(traj, traj) == 0.0
        assert speed_error(traj, traj) == 0.0

    def test_wrapped_heading_difference(self):
        # headings 3.1 vs -3.1: wrapped error is 2*pi - 6.2
        t = np.arange(5)[:, None]
        a = t * np.array([math.cos(3.1), math.sin(3.1)])
        b = t * np.array([math.cos(-3.1), math.sin(-3.1)])
        err = heading_error(a, b)
        assert err == pytest.approx(2 * math.pi - 6.2, abs=1e-9)
        assert err == pytest.approx(0.0832, abs=1e-4)

    def test_constant_speed_difference(self):
        t = np.arange(10)[:, None] * 0.1
        a = t * np.array([5.0, 0.0])
        b = t * np.array([4.0, 0.0])
        assert speed_error(a, b) == pytest.approx(1.0)

    def test_stationary_inherits_heading(self):
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        headings, valid = derive_headings(pos)
        assert valid.all()
        np.testing.assert_allclose(headings, 0.0)

    def test_all_stationary_flagged_nan(self):
        pos = np.zeros((6, 2))
        moving = np.arange(6)[:, None] * [1.0, 0.0]
        assert math.isnan(heading_error(pos, moving))


class TestObbIou:
    def test_identical_boxes(self):
        b = OrientedBox((1.0, 2.0), 0.7, 4.0, 2.0)
        assert obb_iou(b, b) == pytest.approx(1.0)

    def test_far_apart(self):
        a = OrientedBox((0.0, 0.0), 0.0, 4.0, 2.0)
        b = OrientedBox((100.0, 0.0), 1.0, 4.0, 2.0)
        assert obb_iou(a, b) == 0.0

    def test_unit_squares_half_offset(self):
        a = OrientedBox((0.0, 0.0), 0.0, 1.0, 1.0)
        b = OrientedBox((0.5, 0.0), 0.0, 1.0, 1.0)
        assert obb_iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert abs(obb_iou(a, b) - mc_iou(a, b)) < 0.01

    def test_matches_monte_carlo_oracle(self, rng):
        # acceptance-grade: 1e6-sample MC oracle within 0.01
        boxes = random_boxes(rng, 40)
        for i in range(0, 40, 2):
            a, b = boxes[i], boxes[i + 1]
            exact = obb_iou(a, b)
            approx = mc_iou(a, b, n=1_000_000, seed=i)
            assert abs(exact - approx) < 0.01

    def test_bitwise_symmetry(self, rng):
        for a, b in zip(random_boxes(rng, 30), random_boxes(rng, 30)):
            assert obb_iou(a, b) == obb_iou(b, a)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi))
    def test_rigid_invariance(self, tx, ty, rot):
        a = OrientedBox((0.0, 0.0), 0.3, 4.0, 2.0)
        b = OrientedBox((1.5, 0.8), -0.5, 3.0, 1.5)
        c, s = math.cos(rot), math.sin(rot)
        R = np.array([[c, -s], [s, c]])

        def moved(box):
            return OrientedBox(R @ box.center + [tx, ty], box.heading + rot, box.length, box.width)

        assert abs(obb_iou(a, b) - obb_iou(moved(a), moved(b))) < 1e-9

    def test_degenerate_extent_rejected(self):
        with pytest.raises(MetricsError):
            OrientedBox((0, 0), 0.0, 0.0, 1.0)


def random_scene_geometry(rng, n_agents, steps=8):
    geo = []
    for _ in range(n_agents):
        start = rng.uniform(-15, 15, 2)
        vel = rng.uniform(-2, 2, 2)
        pos = start + np.arange(steps)[:, None] * vel * 0.1
        headings = np.full(steps, math.atan2(vel[1], vel[0]))
        geo.append((pos, headings, rng.uniform(1.5, 5.0), rng.uniform(0.8, 2.2)))
    return geo


class TestScenarioCollisionRate:
    def test_static_far_apart_zero(self):
        geo = [
            (np.zeros((5, 2)) + [i * 50, 0], np.zeros(5), 4.0, 2.0)
            for i in range(4)
        ]
        assert scenario_collision_rate([geo]) == 0.0

    def test_two_of_ten_overlap(self):
        scenes = []
        geo = [
            (np.zeros((5, 2)) + [i * 50.0, 0.0], np.zeros(5), 4.0, 2.0)
            for i in range(8)
        ]
        # two agents colliding at step 2
        a = np.zeros((5, 2)) + [0.0, 30.0]
        b = np.zeros((5, 2)) + [4.0, 30.0]
        b[2] = [1.0, 30.0]
        geo += [(a, np.zeros(5), 4.0, 2.0), (b, np.zeros(5), 4.0, 2.0)]
        scenes.append(geo)
        assert scenario_collision_rate(scenes, threshold=0.1) == pytest.approx(20.0)

    def test_matches_brute_force_oracle_exactly(self, rng):
        scenes = [random_scene_geometry(rng, int(rng.integers(2, 8))) for _ in range(50)]
        assert scenario_collision_rate(scenes, 0.1) == brute_force_scr(scenes, 0.1)

    def test_threshold_monotonicity(self, rng):
        scenes = [random_scene_geometry(rng, 6) for _ in range(20)]
        values = [scenario_collision_rate(scenes, th) for th in (0.05, 0.1, 0.3, 0.6, 0.9)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_empty_rollout_list_rejected(self):
        with pytest.raises(MetricsError, match="empty"):
            scenario_collision_rate([])

    def test_invalid_threshold(self):
        with pytest.raises(MetricsError):
            scenario_collision_rate([[]], threshold=0.0)


class TestConstantVelocity:
    def test_ray_from_state(self):
        s = AgentState((1.0, 2.0), (2.0, 0.0), 0.0, 4.0, 2.0, AgentType.VEHICLE)
        batch = constant_velocity_batch(s, t_f=5, dt=0.1)
        np.testing.assert_allclose(batch.positions[0, -1], [2.0, 2.0])
        np.testing.assert_allclose(np.diff(batch.positions[0], axis=0), 0.2 * np.array([[1.0, 0.0]] * 4))


class TestRigidInvariance:
    def test_metrics_invariant_under_frame_roundtrip(self, rng):
        # displacement metrics agree in the global frame and after an
        # agent-frame round-trip within 1e-6
        from trafficlab.scene import AgentFrame

        gt = rng.standard_normal((12, 2)).cumsum(axis=0) * 3
        modes = gt[None] + rng.standard_normal((4, 12, 2))
        batch = TrajectoryBatch(modes, np.zeros(4))
        frame = AgentFrame(rng.uniform(-50, 50, 2), rng.uniform(-math.pi, math.pi))

        local_modes = np.stack([frame.to_local(m) for m in modes])
        local_gt = frame.to_local(gt)
        roundtrip = TrajectoryBatch(np.stack([frame.to_global(m) for m in local_modes]), np.zeros(4))
        gt_roundtrip = frame.to_global(local_gt)

        local_batch = TrajectoryBatch(local_modes, np.zeros(4))
        for fn in (min_ade_k, min_fde_k):
            g = fn(batch, gt)
            assert abs(fn(local_batch, local_gt) - g) < 1e-6
            assert abs(fn(roundtrip, gt_roundtrip) - g) < 1e-6
        assert abs(speed_error(modes[0], gt) - speed_error(local_modes[0], local_gt)) < 1e-6
        assert abs(heading_error(modes[0], gt) - heading_error(local_modes[0], local_gt)) < 1e-6
