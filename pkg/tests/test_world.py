import math

import numpy as np
import pytest

from wallsim.geometry import RigidPose
from wallsim.world import (AlreadyPicked, Basket, BasketFull, BrickStack,
                           BrickUnavailable, DEFAULT_BRICKS, GraspFailed,
                           NoBrickAttached, WallFootprint, WorldState,
                           clip_polygon, ground_truth_patch_pose,
                           point_in_rect, polygon_area, rect_corners,
                           rect_overlap_fraction)

H = DEFAULT_BRICKS["red"].height


def one_stack_world(color="red", layers=1, columns=1, yaw=0.0):
    stack = BrickStack(color, 1.0, 0.0, yaw, layers=layers, columns=columns)
    return WorldState(stacks=[stack]), stack


class TestPatchPose:
    def test_single_layer(self):
        _, stack = one_stack_world()
        pose = ground_truth_patch_pose(stack, 0, 0)
        assert pose.z == pytest.approx(H)
        assert pose.yaw == 0.0

    def test_two_layers(self):
        _, stack = one_stack_world(layers=2)
        assert ground_truth_patch_pose(stack, 1, 0).z == pytest.approx(2 * H)

    def test_rotated_stack(self):
        _, stack = one_stack_world(yaw=math.radians(30))
        assert ground_truth_patch_pose(stack, 0, 0).yaw == pytest.approx(math.radians(30))

    def test_already_picked(self):
        _, stack = one_stack_world()
        stack.picked[0, 0] = True
        with pytest.raises(AlreadyPicked):
            ground_truth_patch_pose(stack, 0, 0)


class TestContact:
    def test_high_above(self):
        world, _ = one_stack_world()
        world.effector.x, world.effector.y, world.effector.z = 1.0, 0.0, H + 0.5
        assert not world.contact_triggered()

    def test_within_epsilon(self):
        world, _ = one_stack_world()
        world.effector.x, world.effector.y, world.effector.z = 1.0, 0.0, H + 0.001
        assert world.contact_triggered()

    def test_laterally_off_brick(self):
        # DERIVED from a point-in-rectangle oracle: more than half the brick
        # width off center can never touch, at any height
        world, stack = one_stack_world()
        off = stack.spec.width / 2 + 0.05
        world.effector.x, world.effector.y = 1.0, off
        oracle = point_in_rect((1.0, off), 1.0, 0.0, stack.spec.length,
                               stack.spec.width, 0.0)
        assert not oracle
        for z in (H + 0.5, H + 0.001, H, 0.05):
            world.effector.z = z
            assert not world.contact_triggered()


class TestAttach:
    def grasp_ready(self, yaw_err=0.0, offset=0.0):
        world, stack = one_stack_world()
        world.effector.x = 1.0 + offset
        world.effector.y = 0.0
        world.effector.z = H + 0.001
        # gripper long axis is effector yaw + pi/2; align to patch yaw 0
        world.effector.yaw = -math.pi / 2 + yaw_err
        world.magnet_on = True
        return world, stack

    def test_clean_grasp(self):
        world, stack = self.grasp_ready()
        world.attach_brick()
        assert world.attached is not None
        assert stack.picked[0, 0]

    def test_yaw_error_beyond_compliance(self):
        world, _ = self.grasp_ready(yaw_err=math.radians(15))
        with pytest.raises(GraspFailed):
            world.attach_brick()

    def test_boundary_inside(self):
        world, _ = self.grasp_ready(yaw_err=math.radians(9), offset=0.049)
        world.attach_brick()
        assert world.attached is not None

    def test_magnet_off(self):
        world, _ = self.grasp_ready()
        world.magnet_on = False
        with pytest.raises(GraspFailed):
            world.attach_brick()

    def test_success_region_boundary_sampling(self):
        # the success region is exactly {offset <= r_g} x {|yaw| <= 10 deg}
        for off_frac, yaw_frac in ((0.9, 0.9), (0.9, 1.1), (1.1, 0.9), (1.1, 1.1)):
            world, _ = self.grasp_ready(
                yaw_err=math.radians(10) * yaw_frac * 0.999,
                offset=world_grasp_radius() * off_frac * 0.999)
            should_pass = off_frac < 1.0 and yaw_frac < 1.0
            if should_pass:
                world.attach_brick()
                assert world.attached is not None
            else:
                if world.contact_triggered():
                    with pytest.raises(GraspFailed):
                        world.attach_brick()


def world_grasp_radius():
    return WorldState().grasp_radius


class TestPlacement:
    def carrying_world(self, fp_yaw=0.0):
        fp = WallFootprint(0.0, 0.0, fp_yaw, 2.0, 0.4, [["red"]])
        world = WorldState(stacks=[], footprint=fp)
        world.attached = None
        return world

    def attach_red(self, world):
        from wallsim.world import AttachedBrick
        world.attached = AttachedBrick(DEFAULT_BRICKS["red"])
        world.magnet_on = True

    def test_centered_release(self):
        world = self.carrying_world()
        self.attach_red(world)
        rec = world.place_brick(RigidPose(1.0, 0.0, 0.3, yaw=0.0))
        assert rec.inside_fraction == pytest.approx(1.0)
        assert rec.pose.z == 0.0

    def test_fully_outside(self):
        world = self.carrying_world()
        self.attach_red(world)
        rec = world.place_brick(RigidPose(5.0, 5.0, 0.3, yaw=0.0))
        assert rec.inside_fraction == 0.0

    def test_half_overlap_monte_carlo_oracle(self):
        # brick sticking half out across the footprint's long edge
        world = self.carrying_world()
        self.attach_red(world)
        spec = DEFAULT_BRICKS["red"]
        rec = world.place_brick(RigidPose(1.0, 0.2, 0.3, yaw=0.0))
        rng = np.random.default_rng(11)
        pts = rng.uniform([-spec.length / 2, -spec.width / 2],
                          [spec.length / 2, spec.width / 2], size=(60000, 2))
        pts = pts + np.array([1.0, 0.2])
        inside = np.array([point_in_rect(p, 1.0, 0.0, 2.0, 0.4, 0.0) for p in pts])
        assert rec.inside_fraction == pytest.approx(inside.mean(), abs=0.02)
        assert rec.inside_fraction == pytest.approx(0.5, abs=0.01)

    def test_no_brick(self):
        world = self.carrying_world()
        with pytest.raises(NoBrickAttached):
            world.place_brick(RigidPose(0, 0, 0))

    def test_placement_on_lower_brick(self):
        world = self.carrying_world()
        self.attach_red(world)
        world.place_brick(RigidPose(1.0, 0.0, 0.5, yaw=0.0))
        self.attach_red(world)
        rec = world.place_brick(RigidPose(1.0, 0.0, 0.7, yaw=0.0))
        assert rec.pose.z == pytest.approx(H)


class TestPolygonHelpers:
    def test_clip_identity(self):
        sq = rect_corners(0, 0, 2, 2, 0)
        clipped = clip_polygon(sq, rect_corners(0, 0, 4, 4, 0))
        assert polygon_area(clipped) == pytest.approx(4.0)

    def test_clip_disjoint(self):
        a = rect_corners(0, 0, 1, 1, 0)
        b = rect_corners(5, 5, 1, 1, 0)
        assert polygon_area(clip_polygon(a, b)) == pytest.approx(0.0, abs=1e-12)

    def test_rotated_overlap_against_sampling(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            cx, cy = rng.uniform(-0.5, 0.5, 2)
            yaw = rng.uniform(0, math.pi)
            inner = rect_corners(cx, cy, 0.6, 0.3, yaw)
            outer = rect_corners(0, 0, 1.0, 0.5, 0.0)
            frac = rect_overlap_fraction(inner, outer)
            pts_local = rng.uniform([-0.3, -0.15], [0.3, 0.15], size=(4000, 2))
            c, s = math.cos(yaw), math.sin(yaw)
            pts = np.column_stack([cx + c * pts_local[:, 0] - s * pts_local[:, 1],
                                   cy + s * pts_local[:, 0] + c * pts_local[:, 1]])
            mc = np.mean([point_in_rect(p, 0, 0, 1.0, 0.5, 0.0) for p in pts])
            assert frac == pytest.approx(mc, abs=0.03)


class TestConservationAndBasket:
    def test_census_conserved_through_lifecycle(self):
        stack = BrickStack("red", 1.0, 0.0, 0.0, layers=1, columns=2)
        fp = WallFootprint(3.0, 0.0, 0.0, 2.0, 0.4, [["red", "red"]])
        world = WorldState(stacks=[stack], footprint=fp)
        assert world.initial_bricks == 2
        assert world.conserved()
        world.effector.x, world.effector.y = stack.brick_center(0, 0)[:2] - np.array([0, 0])
        bc = stack.brick_center(0, 0)
        world.effector.x, world.effector.y, world.effector.z = bc[0], bc[1], H + 0.001
        world.effector.yaw = -math.pi / 2
        world.magnet_on = True
        world.attach_brick()
        assert world.conserved()
        world.stash_attached()
        assert world.conserved()
        world.fetch_from_basket("red")
        assert world.conserved()
        world.place_brick(RigidPose(3.2, 0.0, 0.4, yaw=0.0))
        assert world.conserved()
        assert world.brick_census() == {"in_stack": 1, "in_basket": 0,
                                        "attached": 0, "placed": 1}

    def test_basket_capacity(self):
        basket = Basket(capacity=4)
        basket.store("red", 1)
        basket.store("green", 2)
        with pytest.raises(BasketFull):
            basket.store("blue", 4)
        basket.store("red", 1)
        assert basket.free() == 0

    def test_basket_lifo_within_color(self):
        basket = Basket(capacity=4)
        s0 = basket.store("red", 1)
        basket.store("green", 2)
        s2 = basket.store("red", 1)
        assert basket.next_for("red") == s2
        basket.remove(s2)
        assert basket.next_for("red") == s0

    def test_basket_unavailable(self):
        basket = Basket(capacity=4)
        basket.store("red", 1)
        with pytest.raises(BrickUnavailable):
            basket.next_for("green")

    def test_store_sequence_rg_then_next_red(self):
        basket = Basket(capacity=4)
        sr = basket.store("red", 1)
        basket.store("green", 2)
        assert basket.next_for("red") == sr
