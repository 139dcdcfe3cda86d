import math

import numpy as np
import pytest

from wallsim.geometry import RigidPose
from wallsim.nav import (FREE, GateState, MotionPlan, NoPath, OCCUPIED,
                         OccupancyGrid, PlanSegment, PlannerParams,
                         VelocityLimits, build_costmap, clamp_velocity,
                         count_switches, gate_plan, goal_reached, plan_path,
                         rollout)

LIMITS = VelocityLimits()


class TestCostmap:
    def grid(self, pts, z_low=0.1, z_high=1.0):
        return build_costmap(np.array(pts), z_low, z_high, 0.1, 5.0, 5.0)

    def test_below_band_free(self):
        g = self.grid([[1.0, 1.0, 0.05]])
        assert not g.is_occupied(1.0, 1.0)

    def test_in_band_occupied(self):
        g = self.grid([[1.0, 1.0, 0.5]])
        assert g.is_occupied(1.0, 1.0)

    def test_above_band_free(self):
        g = self.grid([[1.0, 1.0, 1.2]])
        assert not g.is_occupied(1.0, 1.0)

    def test_monotone_in_points(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform([0, 0, 0], [5, 5, 1.5], size=(300, 3))
        g1 = self.grid(pts[:150])
        g2 = self.grid(pts)
        # adding points never flips occupied -> free
        assert np.all((g1.data != OCCUPIED) | (g2.data == OCCUPIED))

    def test_band_validation(self):
        with pytest.raises(ValueError):
            build_costmap(np.zeros((0, 3)), 1.0, 0.5, 0.1, 5, 5)


class TestClampVelocity:
    def test_ratio_preserving_scale(self):
        v, w = clamp_velocity(2.0, 1.0, LIMITS)
        assert (v, w) == (1.0, 0.5)

    def test_omega_limited(self):
        v, w = clamp_velocity(0.5, 4.0, VelocityLimits(w_max=2.0))
        assert (v, w) == (0.25, 2.0)

    def test_within_limits_unchanged(self):
        v, w = clamp_velocity(0.5, 0.5, LIMITS)
        assert (v, w) == (0.5, 0.5)

    def test_zero_passthrough(self):
        assert clamp_velocity(0.0, 0.0, LIMITS) == (0.0, 0.0)

    def test_reverse_asymmetric(self):
        v, w = clamp_velocity(-0.6, 0.0, LIMITS)
        assert v == pytest.approx(LIMITS.v_min)

    def test_idempotent_and_never_increases(self):
        rng = np.random.default_rng(0)
        v = rng.uniform(-3, 3, 1000)
        w = rng.uniform(-4, 4, 1000)
        v1, w1 = clamp_velocity(v, w, LIMITS)
        v2, w2 = clamp_velocity(v1, w1, LIMITS)
        assert np.allclose(v1, v2, atol=1e-12)
        assert np.allclose(w1, w2, atol=1e-12)
        assert np.all(np.abs(v1) <= np.abs(v) + 1e-12)
        assert np.all(np.abs(w1) <= np.abs(w) + 1e-12)

    def test_ratio_residual_vectorized(self):
        rng = np.random.default_rng(1)
        v = rng.uniform(-5, 5, 10000)
        w = rng.uniform(-5, 5, 10000)
        vc, wc = clamp_velocity(v, w, LIMITS)
        residual = np.abs(vc * w - wc * v)
        assert np.all(residual <= 1e-9 * np.maximum(np.abs(v * w), 1e-12))


class TestGate:
    def plan(self, switches):
        segs = [PlanSegment(0.5, 0.0, 1.0)]
        for i in range(switches):
            segs.append(PlanSegment(0.5 if i % 2 else -0.3, 0.0, 0.5))
        return MotionPlan(segs, RigidPose())

    def test_suppresses_high_switch_plan(self):
        gate = GateState(max_switches=2, timeout=5.0)
        plan = self.plan(5)
        assert plan.switch_count == 5
        assert gate_plan(plan, gate, 0.1) == (0.0, 0.0)

    def test_clean_plan_emits_head(self):
        gate = GateState(max_switches=2, timeout=5.0)
        plan = self.plan(1)
        v, w = gate_plan(plan, gate, 0.1)
        assert v == 0.5

    def test_timeout_release(self):
        gate = GateState(max_switches=2, timeout=5.0, elapsed=5.0)
        plan = self.plan(5)
        v, w = gate_plan(plan, gate, 0.1)
        assert v == 0.5

    def test_scripted_sequence_exact_trace(self):
        # plans refine 5 -> 4 -> 1 switches; motion must begin exactly at
        # the 1-switch plan
        gate = GateState(max_switches=2, timeout=60.0)
        emitted = []
        for switches in (5, 4, 1):
            plan = self.plan(switches)
            emitted.append(gate_plan(plan, gate, 0.1))
        assert emitted == [(0.0, 0.0), (0.0, 0.0), (0.5, 0.0)]


class TestGoalReached:
    def test_exact(self):
        assert goal_reached(RigidPose(1, 1, yaw=0.3), RigidPose(1, 1, yaw=0.3),
                            0.1, math.radians(5))

    def test_within_tolerance(self):
        assert goal_reached(RigidPose(0.09, 0, yaw=0), RigidPose(0, 0, yaw=0),
                            0.10, math.radians(5))

    def test_yaw_out(self):
        assert not goal_reached(RigidPose(0, 0, yaw=math.radians(20)),
                                RigidPose(0, 0, yaw=0), 0.1, math.radians(10))


def empty_grid():
    return OccupancyGrid.empty(10.0, 10.0, 0.1, -5.0, -5.0)


def wall_grid():
    g = empty_grid()
    pts = [[x, 1.0, 0.5] for x in np.arange(-1.0, 2.0, 0.05)]
    return build_costmap(np.array(pts), 0.1, 1.0, 0.1, 10.0, 10.0, -5.0, -5.0)


class TestPlanner:
    def test_straight_ahead_single_segment(self):
        plan = plan_path(empty_grid(), RigidPose(0, 0, yaw=0),
                         RigidPose(3, 0, yaw=0), LIMITS)
        assert len(plan.segments) == 1
        seg = plan.segments[0]
        assert seg.w == 0.0 and seg.v > 0
        assert plan.switch_count == 0

    def test_turning_radius_respected(self):
        plan = plan_path(empty_grid(), RigidPose(0, 0, yaw=0),
                         RigidPose(2.0, 1.5, yaw=math.pi / 2), LIMITS)
        for seg in plan.segments:
            if abs(seg.w) > 1e-9:
                assert abs(seg.v / seg.w) >= LIMITS.r_min - 1e-9

    def test_reaches_goal(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            goal = RigidPose(rng.uniform(-3, 3), rng.uniform(-3, 3),
                             yaw=rng.uniform(-math.pi, math.pi))
            plan = plan_path(empty_grid(), RigidPose(0, 0, yaw=0), goal, LIMITS)
            states = rollout(plan.segments, RigidPose(0, 0, yaw=0))
            ex, ey, eyaw = states[-1]
            assert math.hypot(ex - goal.x, ey - goal.y) <= 0.12
            assert abs((eyaw - goal.yaw + math.pi) % (2 * math.pi) - math.pi) <= 0.12

    def test_swept_path_clears_wall(self):
        # DERIVED: swept-footprint oracle; every sampled pose along the plan
        # keeps the robot disc off every occupied cell center
        grid = wall_grid()
        params = PlannerParams()
        start = RigidPose(0, 0, yaw=math.pi / 2)
        goal = RigidPose(0.0, 2.2, yaw=math.pi / 2)
        plan = plan_path(grid, start, goal, LIMITS, params)
        states = rollout(plan.segments, start, step=0.01)
        occ_rows, occ_cols = np.nonzero(grid.data == OCCUPIED)
        occ_x = grid.origin_x + (occ_cols + 0.5) * grid.resolution
        occ_y = grid.origin_y + (occ_rows + 0.5) * grid.resolution
        margin = params.robot_radius - grid.resolution  # cell-center discretization
        for x, y, _ in states:
            d = np.hypot(occ_x - x, occ_y - y)
            assert d.min() >= margin

    def test_goal_inside_obstacle(self):
        grid = wall_grid()
        with pytest.raises(NoPath):
            plan_path(grid, RigidPose(0, 0, yaw=0), RigidPose(0.5, 1.0, yaw=0),
                      LIMITS)

    def test_already_at_goal(self):
        plan = plan_path(empty_grid(), RigidPose(1, 1, yaw=0.2),
                         RigidPose(1.02, 1.0, yaw=0.2), LIMITS)
        assert plan.segments == []


class TestSwitchCount:
    def test_counting(self):
        segs = [PlanSegment(0.5, 0, 1), PlanSegment(-0.3, 0, 1),
                PlanSegment(0.5, 0, 1)]
        assert count_switches(segs) == 2

    def test_no_switch(self):
        segs = [PlanSegment(0.5, 0.1, 1), PlanSegment(0.5, -0.1, 1)]
        assert count_switches(segs) == 0
