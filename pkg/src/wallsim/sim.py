"""Deterministic time-stepped simulation loop tying all subsystems together.

Tick order: (1) mission consumes pending events, (2) the active behavior
produces base commands, (3) clamp and gate, (4) base and effector
integration, (5) on camera ticks: render, noise, vision, control update,
(6) contact checks.  Everything is driven by per-subsystem RNG streams
spawned from one seed, so a (scenario, seed) pair fixes the entire run.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from . import nav as navmod
from . import render as rendermod
from . import vision as visionmod
from .control import (ApproachController, EffectorCommand, PickupSupervisor,
                      ServoObservation, ServoStage, check_reachability)
from .geometry import (DegenerateAxis, DegenerateRay, FrameTransform, RigidPose,
                       base_to_map, camera_to_base, unicycle_step, wrap_angle,
                       wrap_axis)
from .mission import Event, TopState
from .scenario import EffectorLimits, Scenario
from .vision import TrackerState
from .world import GraspFailed, WorldState, rect_corners


class OutOfEnvelope(Exception):
    """Effector command would leave the reachable workspace."""


def integrate_base(pose: RigidPose, v: float, w: float, dt: float) -> RigidPose:
    """Exact unicycle arc integration of the base over one tick."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, yaw = unicycle_step(pose.x, pose.y, pose.yaw, v, w, dt)
    return RigidPose(x, y, 0.0, 0.0, 0.0, yaw)


def move_effector(world: WorldState, cmd: EffectorCommand,
                  limits: EffectorLimits) -> EffectorCommand:
    """Apply one tick of an effector displacement, rate-limited per axis.

    Returns the part actually applied.  Raises OutOfEnvelope when the
    clamped step would leave the arm workspace; the pose is not changed.
    """
    eff = world.effector
    step = limits.max_step
    rot = limits.max_rot
    dx = float(np.clip(cmd.dx, -step, step))
    dy = float(np.clip(cmd.dy, -step, step))
    dz = float(np.clip(cmd.dz, -step, step))
    dpitch = float(np.clip(cmd.dpitch, -rot, rot))
    dyaw = float(np.clip(cmd.dyaw, -rot, rot))
    nx, ny, nz = eff.x + dx, eff.y + dy, eff.z + dz
    npitch = float(np.clip(eff.pitch + dpitch, 0.0, math.pi / 2.0))
    mx, my, mz = limits.mount
    reach = math.sqrt((nx - mx) ** 2 + (ny - my) ** 2 + (nz - mz) ** 2)
    if reach > limits.r_max or reach < limits.fold_min:
        raise OutOfEnvelope(f"reach {reach:.3f} outside [{limits.fold_min}, {limits.r_max}]")
    # support surfaces are rigid: the gripper face cannot pass through them
    if dz < 0:
        g = world.gripper_point_map()
        face = nz - (world.attached.spec.height if world.attached else 0.0)
        support = world.support_below(g[0], g[1],
                                      include_ground=world.attached is not None)
        if support is not None and face < support[0]:
            dz = max(dz + (support[0] - face), -step)
            nz = eff.z + dz
    eff.x, eff.y, eff.z = nx, ny, nz
    eff.pitch = npitch
    eff.yaw = wrap_angle(eff.yaw + dyaw)
    return EffectorCommand(dx, dy, dz, npitch - (eff.pitch - dpitch), dyaw)


def localization_estimate(true_pose: RigidPose, rng: np.random.Generator,
                          sigma_xy: float, sigma_yaw: float) -> FrameTransform:
    """Noisy base-to-map transform standing in for the SLAM estimate."""
    if sigma_xy < 0 or sigma_yaw < 0:
        raise ValueError("sigmas must be non-negative")
    dx, dy, dpsi = rng.normal(0.0, 1.0, 3)
    noisy = RigidPose(true_pose.x + dx * sigma_xy, true_pose.y + dy * sigma_xy,
                      0.0, 0.0, 0.0, true_pose.yaw + dpsi * sigma_yaw)
    return base_to_map(noisy)


def simulate_scan(world: WorldState, nav_cfg, origin: RigidPose) -> np.ndarray:
    """Planar lidar: beam endpoints on obstacle rectangles, in L_M.

    Beams at scan height hit stack bounding boxes and placed bricks so
    the costmap sees what a height-filtered submap would contain.
    """
    rects = []
    for stack in world.stacks:
        if stack.remaining() == 0:
            continue
        span = stack.columns * (stack.spec.width + stack.gap)
        rects.append((stack.x, stack.y, stack.spec.length + 0.05, span, stack.yaw))
    for pb in world.placed:
        rects.append((pb.pose.x, pb.pose.y, pb.spec.length, pb.spec.width,
                      pb.pose.yaw))
    if not rects:
        return np.zeros((0, 3))
    segs = []
    for cx, cy, ln, wd, yaw in rects:
        c = rect_corners(cx, cy, ln, wd, yaw)
        for i in range(4):
            segs.append((c[i], c[(i + 1) % 4]))
    a = np.array([s[0] for s in segs])          # (S, 2)
    b = np.array([s[1] for s in segs])
    angles = origin.yaw + np.linspace(0.0, 2.0 * math.pi, nav_cfg.scan_beams,
                                      endpoint=False)
    d = np.column_stack([np.cos(angles), np.sin(angles)])   # (B, 2)
    o = np.array([origin.x, origin.y])
    # ray o + t*d vs segment a + u*(b-a)
    e = b - a                                    # (S, 2)
    denom = d[:, None, 0] * (-e[None, :, 1]) - d[:, None, 1] * (-e[None, :, 0])
    ao = (a - o)[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[..., 0] * (-e[None, :, 1]) - ao[..., 1] * (-e[None, :, 0])) / denom
        u = (d[:, None, 0] * ao[..., 1] - d[:, None, 1] * ao[..., 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t > 0.05) & (t <= nav_cfg.scan_range) \
        & (u >= 0.0) & (u <= 1.0)
    t = np.where(hit, t, np.inf)
    t_min = t.min(axis=1)
    ok = np.isfinite(t_min)
    pts = o + d[ok] * t_min[ok][:, None]
    return np.column_stack([pts, np.full(len(pts), nav_cfg.scan_height)])


@dataclass
class CameraFrame:
    labels: np.ndarray
    depth: np.ndarray
    cloud: np.ndarray
    cam_to_base: FrameTransform
    t: float


# ---------------------------------------------------------------------------
# Behaviors (directives)


class Directive:
    name = "idle"
    wants_vision = False

    def __init__(self):
        self.finished = False

    def base_command(self, sim) -> tuple[float, float]:
        return 0.0, 0.0

    def on_camera(self, sim, frame: CameraFrame | None):
        pass

    def post_move(self, sim):
        pass


class IdleDirective(Directive):
    pass


class NavDirective(Directive):
    name = "nav"

    def __init__(self, goal: RigidPose, purpose: str, budget: float = 150.0):
        super().__init__()
        self.goal = goal
        self.purpose = purpose
        self.budget = budget
        self.plan = None
        self.t_in_plan = 0.0
        self.elapsed = 0.0
        self.next_replan = 0.0
        self.gate = None

    def _done_event(self) -> str:
        return "AlignmentReached" if self.purpose == "alignment" else "GoalReached"

    def base_command(self, sim):
        if self.finished:
            return 0.0, 0.0
        cfg = sim.sc.nav
        dt = sim.sc.timing.dt
        self.elapsed += dt
        if self.gate is None:
            self.gate = navmod.GateState(max_switches=cfg.max_switches,
                                         timeout=cfg.gate_timeout)
        est = sim.est_pose
        if navmod.goal_reached(est, self.goal, cfg.xy_tol, cfg.yaw_tol):
            self.finished = True
            sim.emit(self._done_event())
            return 0.0, 0.0
        if self.elapsed > self.budget:
            self.finished = True
            sim.emit("Timeout")
            return 0.0, 0.0
        if (self.plan is None or self.elapsed >= self.next_replan
                or self.plan.done_at(self.t_in_plan)):
            self.next_replan = self.elapsed + cfg.replan_period
            self.t_in_plan = 0.0
            grid = sim.build_costmap()
            try:
                self.plan = navmod.plan_path(grid, est, self.goal, cfg.limits,
                                             cfg.planner)
            except navmod.NoPath:
                self.plan = None
                self.finished = True
                sim.emit("Timeout")
                return 0.0, 0.0
        v, w = navmod.gate_plan(self.plan, self.gate, dt, self.t_in_plan)
        self.t_in_plan += dt
        return v, w


class ApproachDirective(Directive):
    name = "approach"

    def __init__(self, sim, kind: str, color: str | None, d_r: float,
                 final: bool, cell: RigidPose | None = None,
                 budget: float = 120.0):
        super().__init__()
        self.kind = kind
        self.color = color
        self.final = final
        self.cell = cell
        self.budget = budget
        self.elapsed = 0.0
        ctl = sim.sc.control
        gains = dc_replace(ctl.approach, d_r=d_r)
        self.controller = ApproachController(gains, d0=d_r + 1.5,
                                             q=ctl.kalman_q, r=ctl.kalman_r)
        self.detected_once = False
        self.filter_primed = False
        self.lost = 0
        self.held = (0.0, 0.0)
        self.wants_vision = kind != "cell"
        self.scan_dir = 1.0

    def base_command(self, sim):
        if self.finished:
            return 0.0, 0.0
        self.elapsed += sim.sc.timing.dt
        if self.elapsed > self.budget:
            self.finished = True
            sim.emit("Timeout")
            return 0.0, 0.0
        return self.held

    def _measure(self, sim, frame):
        """(x_img, y_img, d_meas, extra) for the tracked object, or None."""
        if self.kind == "cell":
            cell_b = sim.est_tf.inverse().apply_pose(self.cell)
            p_c = sim.cam_to_base().inverse().apply(
                np.array([cell_b.x, cell_b.y, cell_b.z]))
            if p_c[2] <= 0.05:
                return None
            f = sim.k.focal_px
            return (f * p_c[0] / p_c[2], f * p_c[1] / p_c[2],
                    math.hypot(cell_b.x, cell_b.y), cell_b)
        if self.kind == "footprint":
            try:
                x, y = visionmod.detect_footprint(frame.labels, sim.k)
            except visionmod.NotVisible:
                return None
            region = visionmod.Region(*np.nonzero(visionmod.pattern_mask(frame.labels)))
            d = visionmod.object_distance(region, frame.cloud)
            return (x, y, d, None)
        stacks = sim.filter_wall_zone(
            visionmod.detect_stacks(frame.labels, self.color,
                                    sim.vis_min_area, sim.k), frame)
        if not stacks:
            return None
        best = stacks[0]
        if self.final:
            cands = visionmod.extract_patch_candidates(
                frame.labels, best.hull, sim.k, sim.sc.vision.rect_min)
            sel = visionmod.track_and_select(sim.tracker, cands,
                                             sim.sc.vision.weights)
            if sel is None:
                return None
            d = visionmod.object_distance(sel.region, frame.cloud)
            try:
                pose, _ = visionmod.estimate_patch_pose(
                    sel, frame.cam_to_base, sim.k, frame.cloud,
                    sim.h_b)
                sim.last_patch_estimate = pose
            except (visionmod.NoDepth, DegenerateRay, DegenerateAxis):
                pass
            return (sel.x_p, sel.y_p, d, sel)
        d = visionmod.object_distance(best.region, frame.cloud)
        return (best.x_b, best.y_b, d, best)

    def on_camera(self, sim, frame):
        if self.finished:
            return
        meas = self._measure(sim, frame)
        dt = sim.sc.timing.camera_period
        if meas is None or meas[2] is None:
            self.lost += 1
            if self.detected_once and self.lost > 8:
                self.finished = True
                sim.emit("PatchLost")
                self.held = (0.0, 0.0)
                return
            if not self.detected_once:
                # rotational scan until the object comes into view
                self.held = (0.0, 0.4 * self.scan_dir)
                sim.arm_command(EffectorCommand(dpitch=(0.25 - sim.world.effector.pitch)))
            else:
                self.held = (0.0, 0.0)
            return
        x_img, y_img, d_meas, extra = meas
        self.lost = 0
        if not self.detected_once:
            self.detected_once = True
            sim.emit("ObjectDetected")
        if not self.filter_primed:
            self.controller.filter.x = np.array([d_meas, 0.0])
            self.filter_primed = True
        v, w, dtheta, done = self.controller.update(x_img, y_img, d_meas, dt)
        self.held = (v, w)
        sim.arm_command(EffectorCommand(dpitch=dtheta))
        if self.final:
            ok = self._within_reach(sim)
            if ok:
                self.finished = True
                self.held = (0.0, 0.0)
                sim.emit("WithinReach")
                return
        if done and not self.final:
            self.finished = True
            self.held = (0.0, 0.0)
            sim.emit("GoalReached")

    def _within_reach(self, sim) -> bool:
        lim = sim.sc.effector
        if self.kind == "cell":
            cell_b = sim.est_tf.inverse().apply_pose(self.cell)
            rng = math.hypot(cell_b.x, cell_b.y)
            hi = sim.usable_reach(self.cell.z + sim.world.brick_specs[self.color].height)
            return lim.r_min + 0.1 <= rng <= hi
        est = sim.last_patch_estimate
        if est is None:
            return False
        hi = sim.usable_reach(est.z)
        return check_reachability(est, lim.r_min + 0.15, hi,
                                  sim.sc.control.perp_tol)


class PoseDetectDirective(Directive):
    name = "pose_detect"
    wants_vision = True

    # the arm lifts the camera while the base is stopped: a higher view
    # reduces foreshortening of the patch rectangle
    VIEW_Z = 1.05

    def __init__(self, kind: str, color: str | None, samples: int = 3,
                 budget: float = 30.0):
        super().__init__()
        self.kind = kind
        self.color = color
        self.samples_needed = samples
        self.poses: list[RigidPose] = []
        self.frames = 0
        self.budget = budget
        self.elapsed = 0.0
        self.lifted = False

    def base_command(self, sim):
        self.elapsed += sim.sc.timing.dt
        if not self.finished and self.elapsed > self.budget:
            self.finished = True
            sim.emit("PatchLost" if self.kind == "patch" else "Timeout")
        return 0.0, 0.0

    def post_move(self, sim):
        if self.kind == "patch" and not self.lifted:
            self.lifted = sim.arm_target(dict(z=self.VIEW_Z))

    def on_camera(self, sim, frame):
        if self.finished:
            return
        if self.kind == "patch" and not self.lifted:
            return
        self.frames += 1
        pose = None
        if self.kind == "patch":
            stacks = sim.filter_wall_zone(
                visionmod.detect_stacks(frame.labels, self.color,
                                        sim.vis_min_area, sim.k), frame)
            if stacks:
                cands = visionmod.extract_patch_candidates(
                    frame.labels, stacks[0].hull, sim.k, sim.sc.vision.rect_min)
                sel = visionmod.track_and_select(sim.tracker, cands,
                                                 sim.sc.vision.weights)
                if sel is not None:
                    try:
                        pose, _ = visionmod.estimate_patch_pose(
                            sel, frame.cam_to_base, sim.k, frame.cloud, sim.h_b)
                    except visionmod.NoDepth:
                        pose = None
        else:
            try:
                pose = visionmod.estimate_footprint_pose(frame.labels,
                                                         frame.cam_to_base, sim.k)
            except visionmod.NotVisible:
                pose = None
        if pose is None:
            if self.frames > 20:
                self.finished = True
                sim.emit("PatchLost" if self.kind == "patch" else "Timeout")
            return
        self.poses.append(pose)
        if len(self.poses) < self.samples_needed:
            return
        xs = float(np.median([p.x for p in self.poses]))
        ys = float(np.median([p.y for p in self.poses]))
        zs = float(np.median([p.z for p in self.poses]))
        ref = self.poses[0].yaw
        if self.kind == "patch":
            yaw = ref + float(np.median([wrap_axis(p.yaw - ref) for p in self.poses]))
            yaw = wrap_axis(yaw)
        else:
            yaw = ref + float(np.median([wrap_angle(p.yaw - ref) for p in self.poses]))
        est_b = RigidPose(xs, ys, zs, 0.0, 0.0, yaw)
        est_m = sim.est_tf.apply_pose(est_b)
        sim.record_pose_probe(self.kind, est_b, est_m)
        self.finished = True
        sim.emit("PoseEstimated", pose=est_m)


_TRAVEL = dict(x=0.25, y=0.0, z=0.62, pitch=0.25, yaw=0.0)


class PickupDirective(Directive):
    """Arm pre-positioning, four servo stages, then stow into a basket slot."""

    name = "pickup"

    def __init__(self, sim, color: str):
        super().__init__()
        self.color = color
        self.phase = "pre"
        est = sim.last_patch_estimate
        ctl = sim.sc.control
        lim = sim.sc.effector
        if est is None:
            est = RigidPose(0.8, 0.0, sim.h_b, 0.0, 0.0, math.pi / 2)
        self.patch_est = est
        z = est.z + ctl.servo_standoff
        x = max(0.35, est.x - ctl.servo_back_off)
        aim = math.atan2(z - est.z, max(est.x - x, 1e-6))
        self.pre_target = dict(x=x, y=est.y - lim.cam_offset_y, z=z,
                               pitch=aim, yaw=0.0)
        self.supervisor = PickupSupervisor(
            ctl.servo, sim.h_b, cam_offset_y=lim.cam_offset_y,
            floor_z=max(est.z - 0.06, 0.02))
        self.grasped = None
        self.slot_target = None
        self.record = dict(color=color, success=False, reason="",
                           perp_err_deg=None)
        self.recorded_perp = False

    @property
    def wants_vision(self):
        return self.phase == "servo"

    def base_command(self, sim):
        return 0.0, 0.0

    def _abort(self, sim, reason: str):
        self.record["reason"] = reason
        sim.record_pickup(self.record)
        self.phase = "abort_lift"
        sim.arm_target(dict(z=self.pre_target["z"]))

    def post_move(self, sim):
        if self.finished:
            return
        if self.phase == "pre":
            if not self.recorded_perp:
                self.recorded_perp = True
                true_patch = sim.true_patch_near(self.patch_est)
                if true_patch is not None:
                    perp = abs(wrap_axis(
                        (true_patch.yaw - sim.world.robot.yaw) + math.pi / 2))
                    self.record["perp_err_deg"] = math.degrees(perp)
            if sim.arm_target(self.pre_target):
                self.phase = "servo"
            return
        if self.phase == "servo":
            if self.supervisor.stage == ServoStage.Z_APPROACH:
                sim.world.magnet_on = True
                if sim.world.contact_triggered():
                    self._attach(sim)
            return
        if self.phase == "abort_lift":
            if sim.arm_target(dict(z=self.pre_target["z"])):
                self.phase = "abort_travel"
                sim.arm_target(_TRAVEL)
            return
        if self.phase == "abort_travel":
            if sim.arm_target(_TRAVEL):
                self.finished = True
                sim.emit("PickupFailed")
            return
        if self.phase == "store_lift":
            if sim.arm_target(self.lift_target):
                slot = sim.world.stash_attached()
                pose = sim.sc.slot_poses[min(slot, len(sim.sc.slot_poses) - 1)]
                self.slot_target = dict(x=pose[0], y=pose[1], z=pose[2],
                                        pitch=math.pi / 2, yaw=0.0)
                self.phase = "store_move"
            return
        if self.phase == "store_move":
            if sim.arm_target(self.slot_target):
                self.phase = "travel"
                if sim.world.basket.free() == 0:
                    sim.emit("BasketFull")
            return
        if self.phase == "travel":
            if sim.arm_target(_TRAVEL):
                self.finished = True
                sim.emit("PickupDone")
            return

    def _attach(self, sim):
        try:
            stack, layer, col = sim.world.attach_brick()
            self.record["success"] = True
            att = sim.world.attached
            self.record["grasp_offset"] = math.hypot(att.du, att.dv)
            self.record["grasp_yaw_err_deg"] = abs(math.degrees(att.dyaw))
            sim.record_pickup(self.record)
            top = stack.brick_top(layer)
            self.lift_target = dict(z=min(top + 0.45, 1.1))
            self.phase = "store_lift"
            sim.arm_target(self.lift_target)
        except GraspFailed as e:
            sim.world.magnet_on = False
            self.record["grasp_offset"] = getattr(e, "offset", float("inf"))
            self.record["grasp_yaw_err_deg"] = abs(math.degrees(
                getattr(e, "yaw_err", 0.0)))
            self._abort(sim, "grasp_failed")

    def on_camera(self, sim, frame):
        if self.phase != "servo" or self.finished:
            return
        patch = None
        stacks = sim.filter_wall_zone(
            visionmod.detect_stacks(frame.labels, self.color,
                                    sim.vis_min_area, sim.k), frame)
        if stacks:
            cands = visionmod.extract_patch_candidates(
                frame.labels, stacks[0].hull, sim.k, sim.sc.vision.rect_min)
            sel = visionmod.track_and_select(sim.tracker, cands,
                                             sim.sc.vision.weights)
            if sel is not None:
                zs = frame.cloud[sel.region.rows, sel.region.cols, 2]
                zs = zs[np.isfinite(zs)]
                d_meas = None
                if len(zs):
                    d_meas = max(sim.world.effector.z - float(np.median(zs)), 1e-3)
                patch = (sel.x_p, sel.y_p, sel.rect.angle, d_meas)
        obs = ServoObservation(patch=patch, theta=sim.world.effector.pitch,
                               contact=sim.world.contact_triggered(),
                               effector_z=sim.world.effector.z,
                               effector_yaw=sim.world.effector.yaw)
        res = self.supervisor.step(obs)
        if res.failed:
            self._abort(sim, res.reason)
            return
        if res.done:
            self._attach(sim)
            return
        if not res.command.is_zero():
            sim.arm_command(res.command)


class DropDirective(Directive):
    """Fetch a brick from its slot and servo it onto the blueprint cell."""

    name = "drop"
    wants_vision = False

    def __init__(self, sim, color: str, cell: RigidPose, support_z: float):
        super().__init__()
        self.color = color
        self.cell = cell
        self.support_z = support_z
        self.phase = "fetch"
        self.loc_snapshot = sim.est_tf
        self.cell_b = self.loc_snapshot.inverse().apply_pose(cell)
        spec = sim.world.brick_specs[color]
        self.brick_h = spec.height
        ctl = sim.sc.control
        lim = sim.sc.effector
        try:
            slot = sim.world.basket.next_for(color)
        except Exception:
            slot = 0
        pose = sim.sc.slot_poses[min(slot, len(sim.sc.slot_poses) - 1)]
        self.slot_target = dict(x=pose[0], y=pose[1], z=pose[2],
                                pitch=math.pi / 2, yaw=0.0)
        z = support_z + self.brick_h + ctl.servo_standoff
        x = max(0.4, self.cell_b.x - ctl.servo_back_off)
        aim = math.atan2(z - support_z, max(self.cell_b.x - x, 1e-6))
        self.pre_target = dict(x=x, y=self.cell_b.y - lim.cam_offset_y,
                               z=min(z, 1.35), pitch=aim, yaw=0.0)
        self.supervisor = PickupSupervisor(
            ctl.servo, sim.h_b, cam_offset_y=lim.cam_offset_y,
            floor_z=support_z + self.brick_h - 0.06)

    def base_command(self, sim):
        return 0.0, 0.0

    def _synthesize(self, sim):
        """Project the memorized cell through the camera model."""
        eff = sim.world.effector
        cam_tf = sim.cam_to_base()
        target = np.array([self.cell_b.x, self.cell_b.y,
                           self.support_z])
        p_c = cam_tf.inverse().apply(target)
        if p_c[2] <= 0.02:
            return None
        f = sim.k.focal_px
        x_p = f * p_c[0] / p_c[2]
        y_p = f * p_c[1] / p_c[2]
        psi_p = wrap_axis((eff.yaw - self.cell_b.yaw) - math.pi / 2.0)
        d_meas = max(eff.z - self.brick_h - self.support_z, 1e-3)
        return (x_p, y_p, psi_p, d_meas)

    def post_move(self, sim):
        if self.finished:
            return
        if self.phase == "fetch":
            if sim.arm_target(self.slot_target):
                sim.world.fetch_from_basket(self.color)
                self.phase = "fetch_lift"
                self.lift = dict(z=max(self.pre_target["z"], 0.9))
                sim.arm_target(self.lift)
            return
        if self.phase == "fetch_lift":
            if sim.arm_target(self.lift):
                self.phase = "pre"
            return
        if self.phase == "pre":
            if sim.arm_target(self.pre_target):
                self.phase = "servo"
            return
        if self.phase == "servo":
            if sim.world.contact_triggered():
                record = sim.world.place_brick()
                sim.record_drop(record)
                self.phase = "travel"
                sim.arm_target(dict(z=min(self.support_z + self.brick_h + 0.5, 1.1)))
                if not sim.world.basket.contents:
                    sim.emit("BasketEmpty")
            return
        if self.phase == "travel":
            if sim.arm_target(_TRAVEL):
                self.finished = True
                sim.emit("DropDone")
            return

    def on_camera(self, sim, frame):
        if self.phase != "servo" or self.finished:
            return
        obs = ServoObservation(patch=self._synthesize(sim),
                               theta=sim.world.effector.pitch,
                               contact=sim.world.contact_triggered(),
                               effector_z=sim.world.effector.z,
                               effector_yaw=sim.world.effector.yaw)
        res = self.supervisor.step(obs)
        if res.failed:
            # descent without contact: release where we are and report
            record = sim.world.place_brick()
            sim.record_drop(record)
            self.phase = "travel"
            sim.arm_target(dict(z=1.0))
            return
        if not res.command.is_zero():
            sim.arm_command(res.command)


# ---------------------------------------------------------------------------
# The simulator


@dataclass
class SimResult:
    completed: bool
    sim_time: float
    bricks_placed: int
    placements: list
    probes: dict
    trace: list
    census: dict
    skipped: list
    conserved: bool


class Simulator:
    """One deterministic mission run."""

    def __init__(self, scenario: Scenario, seed: int = 0):
        self.sc = scenario
        self.world = scenario.build_world()
        self.world.effector.x = _TRAVEL["x"]
        self.world.effector.z = _TRAVEL["z"]
        self.world.effector.pitch = _TRAVEL["pitch"]
        self.mission = scenario.build_mission()
        self.k = scenario.camera
        self.h_b = scenario.brick_specs["red"].height
        ss = np.random.SeedSequence(seed)
        kids = ss.spawn(3)
        self.rng_render = np.random.Generator(np.random.PCG64(kids[0]))
        self.rng_loc = np.random.Generator(np.random.PCG64(kids[1]))
        self.rng_misc = np.random.Generator(np.random.PCG64(kids[2]))
        self.tracker = TrackerState(gate_radius=scenario.vision.gate_radius,
                                    max_age=scenario.vision.max_age)
        self.vis_min_area = scenario.vision.stack_area_for(self.k)
        self.directive: Directive = IdleDirective()
        self.pending: deque = deque()
        self.trace: list[dict] = []
        self.tick_i = 0
        self.mission_done = False
        self.last_patch_estimate: RigidPose | None = None
        self.probes = dict(pose_estimates=[], pickups=[], drops=[])
        self.scans: deque = deque(maxlen=scenario.nav.scans_kept)
        self._arm_target: dict | None = None
        self._arm_pending: EffectorCommand | None = None
        self.est_tf = base_to_map(self.world.robot)
        self.est_pose = self.world.robot
        self.frame_dumper = None
        self._update_estimate()
        self._apply_actions(self.mission.start(self.est_pose), Event("Start"))

    # -- plumbing -------------------------------------------------------

    @property
    def t(self) -> float:
        return self.tick_i * self.sc.timing.dt

    def emit(self, name: str, pose: RigidPose | None = None, **data):
        self.pending.append(Event(name, pose=pose, data=data))

    def _update_estimate(self):
        n = self.sc.noise
        self.est_tf = localization_estimate(self.world.robot, self.rng_loc,
                                            n.loc_sigma_xy, n.loc_sigma_yaw)
        t = self.est_tf.translation
        yaw = math.atan2(self.est_tf.matrix[1, 0], self.est_tf.matrix[0, 0])
        self.est_pose = RigidPose(t[0], t[1], 0.0, 0.0, 0.0, yaw)

    def cam_to_base(self, frame=None) -> FrameTransform:
        eff = self.world.effector
        off = self.sc.effector.cam_offset_y
        c, s = math.cos(eff.yaw), math.sin(eff.yaw)
        pos = np.array([eff.x - s * off, eff.y + c * off, eff.z])
        return camera_to_base(pos, eff.pitch, eff.yaw)

    def usable_reach(self, work_z: float) -> float:
        """Max planar range at which the arm can hold the servo stand-off."""
        lim = self.sc.effector
        ctl = self.sc.control
        vertical = work_z + ctl.servo_standoff - lim.mount[2]
        slack = (lim.r_max * 0.97) ** 2 - vertical ** 2
        return math.sqrt(max(slack, 0.25))

    def filter_wall_zone(self, stacks: list, frame: CameraFrame) -> list:
        """Drop color detections that sit in the wall area.

        Bricks already placed on the wall look exactly like stack bricks;
        the approximate footprint position is known a priori, so anything
        detected there cannot be a stack to load from.
        """
        fp = self.sc.footprint
        if fp is None or not self.world.placed:
            return stacks
        center = fp.center()
        margin = fp.length / 2.0 + 1.0
        t_map = base_to_map(self.world.robot)
        out = []
        for obs in stacks:
            pts = frame.cloud[obs.region.rows, obs.region.cols]
            pts = pts[np.isfinite(pts[:, 0])]
            if len(pts) == 0:
                continue
            rep = t_map.apply(np.median(pts, axis=0))
            if math.hypot(rep[0] - center[0], rep[1] - center[1]) <= margin:
                continue
            out.append(obs)
        return out

    def true_patch_near(self, est: RigidPose) -> RigidPose | None:
        """Ground-truth exposed patch nearest an estimate, for probes."""
        est_m = self.est_tf.apply_pose(est) if est.z < 10 else est
        best, best_d = None, math.inf
        for stack in self.world.stacks:
            for layer, col in stack.exposed_bricks():
                p = stack.patch_pose(layer, col)
                d = math.hypot(p.x - est_m.x, p.y - est_m.y)
                if d < best_d:
                    best, best_d = p, d
        return best

    # -- recording ------------------------------------------------------

    def record_pose_probe(self, kind: str, est_b: RigidPose, est_m: RigidPose):
        rec = dict(kind=kind, t=self.t)
        true_b = None
        if kind == "patch":
            true_m = self.true_patch_near(est_b)
            if true_m is not None:
                true_b = base_to_map(self.world.robot).inverse().apply_pose(true_m)
        else:
            fp = self.world.footprint
            if fp is not None:
                true_m = RigidPose(fp.x, fp.y, 0.0, 0.0, 0.0, fp.yaw)
                true_b = base_to_map(self.world.robot).inverse().apply_pose(true_m)
        rec["est_distance"] = math.hypot(est_b.x, est_b.y)
        rec["est_yaw_b"] = est_b.yaw
        if true_b is not None:
            rec["true_distance"] = math.hypot(true_b.x, true_b.y)
            rec["distance_error"] = rec["est_distance"] - rec["true_distance"]
            if kind == "patch":
                rec["orientation_deg"] = math.degrees(wrap_angle(true_b.yaw))
                rec["orientation_error_deg"] = math.degrees(
                    wrap_axis(est_b.yaw - true_b.yaw))
            else:
                # deviation of the pattern axis from a perpendicular approach
                rec["orientation_deg"] = math.degrees(
                    wrap_axis(true_b.yaw - math.pi / 2.0))
                rec["orientation_error_deg"] = math.degrees(
                    wrap_angle(est_b.yaw - true_b.yaw))
        self.probes["pose_estimates"].append(rec)

    def record_pickup(self, record: dict):
        record = dict(record)
        record["t"] = self.t
        self.probes["pickups"].append(record)

    def record_drop(self, placed):
        self.probes["drops"].append(dict(
            t=self.t, color=placed.spec.color,
            inside_fraction=placed.inside_fraction,
            yaw_error_deg=math.degrees(placed.yaw_error)))

    # -- arm ------------------------------------------------------------

    def arm_target(self, target: dict) -> bool:
        """Steer the arm toward absolute pose components; True when there."""
        self._arm_target = target
        self._arm_pending = None  # choreography overrides servo displacements
        eff = self.world.effector
        tol = 1e-3
        ok = True
        for key, cur in (("x", eff.x), ("y", eff.y), ("z", eff.z),
                         ("pitch", eff.pitch), ("yaw", eff.yaw)):
            if key in target and abs(target[key] - cur) > tol:
                ok = False
        if ok:
            self._arm_target = None
        return ok

    def arm_command(self, cmd: EffectorCommand):
        self._arm_pending = cmd

    def _step_arm(self):
        if self._arm_pending is not None:
            cmd = self._arm_pending
            lim = self.sc.effector
            try:
                move_effector(self.world, cmd, self.sc.effector)
            except OutOfEnvelope:
                self._arm_pending = None
                return
            # consume the rate-limited step even when a surface blocked part
            # of it; blocked motion is lost, not retried
            remaining = EffectorCommand(
                cmd.dx - float(np.clip(cmd.dx, -lim.max_step, lim.max_step)),
                cmd.dy - float(np.clip(cmd.dy, -lim.max_step, lim.max_step)),
                cmd.dz - float(np.clip(cmd.dz, -lim.max_step, lim.max_step)),
                cmd.dpitch - float(np.clip(cmd.dpitch, -lim.max_rot, lim.max_rot)),
                cmd.dyaw - float(np.clip(cmd.dyaw, -lim.max_rot, lim.max_rot)))
            self._arm_pending = None if all(
                abs(v) < 1e-9 for v in (remaining.dx, remaining.dy, remaining.dz,
                                        remaining.dpitch, remaining.dyaw)) \
                else remaining
            return
        if self._arm_target is not None:
            eff = self.world.effector
            tgt = self._arm_target
            cmd = EffectorCommand(
                dx=tgt.get("x", eff.x) - eff.x,
                dy=tgt.get("y", eff.y) - eff.y,
                dz=tgt.get("z", eff.z) - eff.z,
                dpitch=tgt.get("pitch", eff.pitch) - eff.pitch,
                dyaw=wrap_angle(tgt.get("yaw", eff.yaw) - eff.yaw))
            try:
                move_effector(self.world, cmd, self.sc.effector)
            except OutOfEnvelope:
                self._arm_target = None

    # -- sensing --------------------------------------------------------

    def sense(self) -> CameraFrame:
        cam_b = self.cam_to_base()
        cam_m = base_to_map(self.world.robot) @ cam_b
        labels, depth = rendermod.render_rgbd(self.world, cam_m, self.k)
        n = self.sc.noise
        if n.sigma_px > 0 or n.depth_a > 0:
            labels, depth = rendermod.apply_sensor_noise(
                labels, depth, self.rng_render, n.sigma_px, n.depth_a)
        cloud = rendermod.cloud_from_depth(depth, self.k, cam_b)
        frame = CameraFrame(labels, depth, cloud, cam_b, self.t)
        if self.frame_dumper is not None:
            self.frame_dumper(self, frame)
        return frame

    def build_costmap(self):
        self.scans.append(simulate_scan(self.world, self.sc.nav, self.world.robot))
        pts = np.vstack(list(self.scans)) if self.scans else np.zeros((0, 3))
        ox, oy = self.sc.arena_origin
        return navmod.build_costmap(pts, self.sc.nav.z_low, self.sc.nav.z_high,
                                    self.sc.nav.resolution,
                                    self.sc.arena_width, self.sc.arena_height,
                                    ox, oy)

    # -- mission glue ----------------------------------------------------

    def _apply_actions(self, actions, event: Event):
        snap = self.mission.snapshot()
        self.trace.append(dict(t=round(self.t, 4), state=snap["state"],
                               sub_state=snap["sub_state"], event=event.name,
                               task=snap["task"]))
        for act in actions:
            if act.name == "nav_goal":
                self.directive = NavDirective(act.data["pose"], act.data["purpose"])
            elif act.name == "local_approach":
                self.directive = ApproachDirective(
                    self, act.data["kind"], act.data.get("color"),
                    act.data["d_r"], act.data.get("final", False),
                    cell=act.data.get("cell"))
                if act.data["kind"] == "stack":
                    self.tracker.reset()
            elif act.name == "pose_detect":
                self.directive = PoseDetectDirective(act.data["kind"],
                                                     act.data.get("color"))
            elif act.name == "pickup":
                self.directive = PickupDirective(self, act.data["color"])
            elif act.name == "drop":
                self.directive = DropDirective(self, act.data["color"],
                                               act.data["cell"],
                                               act.data["support_z"])
            elif act.name == "mission_done":
                self.directive = IdleDirective()
                self.mission_done = True
            elif act.name == "skip_task":
                pass  # recorded via mission.skipped

    # -- main loop -------------------------------------------------------

    def tick(self):
        self._update_estimate()
        while self.pending:
            ev = self.pending.popleft()
            actions = self.mission.step(ev, self.est_pose)
            self._apply_actions(actions, ev)
            if self.mission_done:
                break
        v, w = self.directive.base_command(self)
        v, w = navmod.clamp_velocity(v, w, self.sc.nav.limits)
        if v != 0.0 or w != 0.0:
            self.world.robot = integrate_base(self.world.robot, v, w,
                                              self.sc.timing.dt)
        self._step_arm()
        self.world.clock += self.sc.timing.dt
        if self.tick_i % self.sc.timing.camera_every == 0:
            if self.directive.wants_vision:
                frame = self.sense()
                self.directive.on_camera(self, frame)
            elif isinstance(self.directive, (ApproachDirective, DropDirective)):
                self.directive.on_camera(self, None)
        self.directive.post_move(self)
        self.tick_i += 1

    def run(self) -> SimResult:
        max_t = self.sc.timing.max_sim_time
        while not self.mission_done and self.t < max_t:
            self.tick()
        completed = self.mission_done and self.mission.top == TopState.DONE
        return SimResult(
            completed=completed,
            sim_time=self.t,
            bricks_placed=len(self.world.placed),
            placements=[dict(color=p.spec.color,
                             inside_fraction=p.inside_fraction,
                             yaw_error_deg=math.degrees(p.yaw_error),
                             x=p.pose.x, y=p.pose.y, z=p.pose.z)
                        for p in self.world.placed],
            probes=self.probes,
            trace=self.trace,
            census=self.world.brick_census(),
            skipped=list(self.mission.skipped),
            conserved=self.world.conserved())
